//! Joint multi-task training and SNR-sweep evaluation.
//!
//! Training follows the per-task-optimizer regime: each step picks a task
//! uniformly among those with unconsumed batches, runs one batch through
//! the modality-appropriate pipeline, backpropagates, and updates with
//! that task's own Adam instance only. When every pool is exhausted the
//! epoch ends and all pools refill (reshuffled).

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::channel::{ChannelConfig, ChannelKind};
use crate::data::{self, Label, Sample};
use crate::error::{err, Result};
use crate::metrics;
use crate::model::{Model, Prediction};
use crate::params::Session;
use crate::rng::ChaCha8Rng;
use crate::tasks::{MetricKind, TaskSpec};

/// Channel used while training.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainChannel {
    pub kind: ChannelKind,
    /// Fixed SNR; `None` draws uniformly from `snr_range` each step.
    pub snr_db: Option<f64>,
    pub snr_range: (f64, f64),
    pub equalize: bool,
}

impl Default for TrainChannel {
    fn default() -> Self {
        TrainChannel { kind: ChannelKind::Awgn, snr_db: None, snr_range: (0.0, 18.0), equalize: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub channel: TrainChannel,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 16,
            train_fraction: 0.8,
            seed: 0,
            channel: TrainChannel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub task: String,
    pub snr_db: f64,
    pub loss: f64,
}

pub struct TrainOutcome {
    pub logs: Vec<StepLog>,
    pub optimizers: Vec<Adam>,
    pub epochs_completed: usize,
}

/// Deterministic train/eval pools for one task (the same split serves
/// training and evaluation).
pub fn task_pools(task: &TaskSpec, train_fraction: f64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let full = data::gen_dataset(&task.dataset)?;
    let split_seed = crate::rng::derive_seed(task.dataset.seed, &[0x5B117]);
    data::split(&full, train_fraction, split_seed)
}

fn shuffled_batches(
    pool: &[Sample],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<Sample>>> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    for i in (1..idx.len()).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let shuffled: Vec<Sample> = idx.into_iter().map(|i| pool[i].clone()).collect();
    data::batch(&shuffled, batch_size)
}

/// One gradient step over a batch; returns the mean loss value.
pub fn train_step(
    model: &mut Model,
    task_idx: usize,
    batch: &[Sample],
    chan: &ChannelConfig,
    optimizer: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (loss_value, grads) = {
        let mut sess = Session::new(&model.store);
        let mut losses = Vec::with_capacity(batch.len());
        for sample in batch {
            let run = model.forward_sample(&mut sess, task_idx, sample, Some(chan), rng)?;
            losses.push(run.loss);
        }
        let total = sess.tape.add_n(&losses)?;
        let mean = sess.tape.scale(total, 1.0 / batch.len() as f64)?;
        sess.tape.backward(mean)?;
        (sess.tape.data(mean)[0], sess.gradients())
    };
    if !loss_value.is_finite() {
        return Err(err!(Numeric, "non-finite training loss {loss_value}"));
    }
    optimizer.step(&mut model.store, &grads)?;
    Ok(loss_value)
}

/// Joint training over every registered task.
pub fn train(model: &mut Model, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.batch_size < 1 || cfg.steps < 1 {
        return Err(err!(Config, "steps and batch size must be >= 1"));
    }
    let n_tasks = model.tasks.len();
    let mut optimizers: Vec<Adam> =
        model.tasks.iter().map(|t| Adam::new(AdamConfig::with_lr(t.lr))).collect();
    let mut train_pools = Vec::with_capacity(n_tasks);
    for task in &model.tasks {
        let (train_pool, _) = task_pools(task, cfg.train_fraction)?;
        if train_pool.is_empty() {
            return Err(err!(Config, "task {:?} has an empty training pool", task.name));
        }
        train_pools.push(train_pool);
    }

    let mut rng = crate::rng::rng_from(cfg.seed, &[0x7124A]);
    let mut queues: Vec<Vec<Vec<Sample>>> = Vec::new();
    let mut remaining: Vec<usize> = Vec::new();
    let mut logs = Vec::with_capacity(cfg.steps);
    let mut epochs_completed = 0usize;

    for step in 0..cfg.steps {
        if remaining.is_empty() {
            if step > 0 {
                epochs_completed += 1;
            }
            queues = train_pools
                .iter()
                .map(|p| shuffled_batches(p, cfg.batch_size, &mut rng))
                .collect::<Result<_>>()?;
            remaining = (0..n_tasks).collect();
        }
        let pick_pos = rng.random_range(0..remaining.len());
        let task_idx = remaining[pick_pos];
        let batch = queues[task_idx].remove(0);
        if queues[task_idx].is_empty() {
            remaining.remove(pick_pos);
        }

        let snr_db = match cfg.channel.snr_db {
            Some(v) => v,
            None => crate::rng::uniform(&mut rng, cfg.channel.snr_range.0, cfg.channel.snr_range.1),
        };
        let chan = ChannelConfig {
            kind: cfg.channel.kind,
            snr_db,
            seed: cfg.seed,
            equalize: cfg.channel.equalize,
        };
        let loss =
            train_step(model, task_idx, &batch, &chan, &mut optimizers[task_idx], &mut rng)?;
        logs.push(StepLog { step, task: model.tasks[task_idx].name.clone(), snr_db, loss });
    }

    Ok(TrainOutcome { logs, optimizers, epochs_completed })
}

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub task: String,
    pub channel: &'static str,
    pub snr_db: f64,
    pub metric_name: &'static str,
    pub value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub snrs: Vec<f64>,
    pub kinds: Vec<ChannelKind>,
    pub equalize: bool,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            snrs: alloc::vec![-6.0, 0.0, 6.0, 12.0, 18.0],
            kinds: alloc::vec![ChannelKind::Awgn, ChannelKind::Rayleigh],
            equalize: true,
            seed: 0,
            train_fraction: 0.8,
        }
    }
}

fn aggregate(task: &TaskSpec, outcomes: &[(Prediction, Label)]) -> Result<f64> {
    match task.metric {
        MetricKind::Accuracy => {
            let mut preds = Vec::new();
            let mut refs = Vec::new();
            for (p, l) in outcomes {
                let (Prediction::Class(p), Label::Class(l)) = (p, l) else {
                    return Err(err!(Contract, "accuracy needs class predictions"));
                };
                preds.push(*p);
                refs.push(*l);
            }
            metrics::accuracy(&preds, &refs)
        }
        MetricKind::F1 => {
            let mut preds = Vec::new();
            let mut targets = Vec::new();
            for (p, l) in outcomes {
                let (Prediction::Bits(p), Label::Bits(l)) = (p, l) else {
                    return Err(err!(Contract, "f1 needs bit predictions"));
                };
                preds.push(p.clone());
                targets.push(l.iter().map(|&b| b != 0).collect());
            }
            metrics::micro_f1(&preds, &targets)
        }
        MetricKind::Bleu | MetricKind::WordAccuracy => {
            let mut pairs = Vec::new();
            for (p, l) in outcomes {
                let (Prediction::Tokens(p), Label::Tokens(l)) = (p, l) else {
                    return Err(err!(Contract, "sequence metrics need token predictions"));
                };
                pairs.push((p.clone(), l.clone()));
            }
            if task.metric == MetricKind::Bleu {
                metrics::bleu_mean(&pairs)
            } else {
                Ok(metrics::word_accuracy(&pairs))
            }
        }
        // PSNR compares reconstructions against original payloads, which
        // this label-only view does not carry; `evaluate_cell` handles it.
        MetricKind::Psnr => Err(err!(Contract, "psnr aggregation needs the original payloads")),
    }
}

/// Evaluate a trained model over every (task, channel kind, SNR) cell with
/// a fixed per-cell noise seed. Rows are ordered by task id, channel name,
/// then ascending SNR.
pub fn evaluate(model: &Model, cfg: &EvalConfig) -> Result<Vec<MetricRow>> {
    if cfg.snrs.is_empty() || cfg.kinds.is_empty() {
        return Err(err!(Config, "evaluation needs at least one SNR and channel kind"));
    }
    let mut kinds = cfg.kinds.clone();
    kinds.sort_by_key(|k| k.name());
    kinds.dedup();
    let mut snrs = cfg.snrs.clone();
    snrs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));

    let mut rows = Vec::new();
    for task in &model.tasks {
        let (_, eval_pool) = task_pools(task, cfg.train_fraction)?;
        for &kind in &kinds {
            for &snr_db in &snrs {
                let chan = ChannelConfig { kind, snr_db, seed: cfg.seed, equalize: cfg.equalize };
                let mut rng = crate::rng::rng_from(
                    cfg.seed,
                    &[0xE7A1, task.id as u64, kind.index() as u64, snr_db.to_bits()],
                );
                let value = evaluate_cell(model, task, &eval_pool, Some(&chan), &mut rng)?;
                rows.push(MetricRow {
                    task: task.name.clone(),
                    channel: kind.name(),
                    snr_db,
                    metric_name: task.metric.name(),
                    value,
                    seed: cfg.seed,
                });
            }
        }
    }
    Ok(rows)
}

/// Metric over one evaluation pool for one channel setting.
pub fn evaluate_cell(
    model: &Model,
    task: &TaskSpec,
    pool: &[Sample],
    chan: Option<&ChannelConfig>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if matches!(task.metric, MetricKind::Psnr) {
        // PSNR compares reconstructions against the original images.
        let mut total = 0.0;
        for sample in pool {
            let mut sess = Session::inference(&model.store);
            let run = model.forward_sample(&mut sess, task.id, sample, chan, rng)?;
            let Prediction::Recon(recon) = run.prediction else {
                return Err(err!(Contract, "psnr needs reconstructions"));
            };
            let orig = sample
                .image
                .as_ref()
                .ok_or_else(|| err!(Contract, "psnr reference image missing"))?;
            total += metrics::psnr(orig.data(), &recon, 1.0)?;
        }
        return Ok(total / pool.len() as f64);
    }
    let mut outcomes = Vec::with_capacity(pool.len());
    for sample in pool {
        let mut sess = Session::inference(&model.store);
        let run = model.forward_sample(&mut sess, task.id, sample, chan, rng)?;
        outcomes.push((run.prediction, sample.label.clone()));
    }
    aggregate(task, &outcomes)
}

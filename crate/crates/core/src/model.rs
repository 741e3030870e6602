//! The full transceiver model: four modality encoders, the fusion module,
//! shared channel coders, and one lite head per task, all over a single
//! parameter store.
//!
//! `forward_sample` runs one sample end to end: encode (and fuse when the
//! task is multi-modal), compress, traverse the channel, reconstruct, and
//! apply the task head and loss.

use alloc::format;
use alloc::vec::Vec;

use crate::channel::{apply_channel, ChannelConfig, ChannelCoders};
use crate::config::{config_digest, ModelConfig};
use crate::data::{Label, Sample};
use crate::encoders::{
    append_task_row, ImageEncoder, Modality, SemanticFeatures, SpeechEncoder, TextEncoder,
    VideoEncoder,
};
use crate::error::{err, Result};
use crate::attention::AttentionConfig;
use crate::fusion::FusionModule;
use crate::metrics::ctc_greedy_decode;
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::ChaCha8Rng;
use crate::tape::Var;
use crate::tasks::{Head, HeadKind, LossKind, TaskSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class(usize),
    Bits(Vec<bool>),
    Tokens(Vec<u32>),
    Recon(Vec<f64>),
}

/// Result of one end-to-end sample pass.
pub struct SampleRun {
    pub loss: Var,
    pub output: Var,
    pub prediction: Prediction,
    /// Rows actually transmitted over the channel (1 for fused tasks).
    pub transmitted_rows: usize,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub image_enc: ImageEncoder,
    pub text_enc: TextEncoder,
    pub speech_enc: SpeechEncoder,
    pub video_enc: VideoEncoder,
    pub fusion: FusionModule,
    pub coders: ChannelCoders,
    pub task_table: ParamId,
    pub heads: Vec<Head>,
    pub tasks: Vec<TaskSpec>,
}

impl Model {
    pub fn build(cfg: ModelConfig, mut tasks: Vec<TaskSpec>, seed: u64) -> Result<Model> {
        cfg.validate()?;
        if tasks.is_empty() {
            return Err(err!(Config, "at least one task must be registered"));
        }
        for (i, task) in tasks.iter_mut().enumerate() {
            task.id = i;
            task.validate()?;
            task.dataset.validate_against(&cfg, &task.modalities)?;
            let expected = task.dataset.kind.classes(task.dataset.vocab);
            if task.classes != expected {
                return Err(err!(
                    Config,
                    "task {:?}: dataset kind {:?} needs {} classes, got {}",
                    task.name,
                    task.dataset.kind,
                    expected,
                    task.classes
                ));
            }
            if matches!(task.head, HeadKind::ReconSeq) {
                return Err(err!(
                    Config,
                    "task {:?}: no synthetic dataset kind produces sequence-reconstruction targets",
                    task.name
                ));
            }
            if matches!(task.head, HeadKind::ReconImage)
                && !task.dataset.kind.modalities().contains(&Modality::Image)
            {
                return Err(err!(
                    Config,
                    "task {:?}: image reconstruction needs an image payload",
                    task.name
                ));
            }
        }

        let enc_attn =
            AttentionConfig::new(cfg.width, cfg.encoder_heads, cfg.d_ff(), cfg.attn_scale)?;
        let fusion_attn = AttentionConfig::new(
            cfg.width,
            cfg.resolved_fusion_heads(),
            cfg.d_ff(),
            cfg.attn_scale,
        )?;

        let mut store = ParamStore::new();
        let mut rng = crate::rng::rng_from(seed, &[0x1217]);
        let image_enc = ImageEncoder::init(&mut store, "image", cfg.image, cfg.width, &mut rng)?;
        let text_enc =
            TextEncoder::init(&mut store, "text", cfg.text, enc_attn, cfg.encoder_layers, &mut rng)?;
        let speech_enc = SpeechEncoder::init(
            &mut store,
            "speech",
            cfg.speech,
            enc_attn,
            cfg.encoder_layers,
            &mut rng,
        )?;
        let mut video_enc = VideoEncoder::init(
            &mut store,
            "video",
            cfg.video,
            enc_attn,
            cfg.encoder_layers,
            &mut rng,
        )?;
        video_enc.swap_masks = cfg.video_swap_masks;
        let fusion =
            FusionModule::init(&mut store, "fusion", fusion_attn, cfg.fusion_layers, &mut rng)?;
        let coders =
            ChannelCoders::init(&mut store, "channel", cfg.width, cfg.compressed_width, &mut rng)?;
        let task_table = store.embedding("tasks.table", tasks.len(), cfg.width, &mut rng)?;
        let mut heads = Vec::with_capacity(tasks.len());
        for task in &tasks {
            let recon_elems =
                task.dataset.image.channels * task.dataset.image.height * task.dataset.image.width;
            heads.push(Head::init(
                &mut store,
                &format!("tasks.head{}", task.id),
                task.head,
                cfg.width,
                task.head_width(recon_elems),
                &mut rng,
            )?);
        }

        Ok(Model {
            cfg,
            store,
            image_enc,
            text_enc,
            speech_enc,
            video_enc,
            fusion,
            coders,
            task_table,
            heads,
            tasks,
        })
    }

    /// Digest binding checkpoints to this config and task registry.
    pub fn digest(&self) -> u32 {
        let fingerprint: Vec<u64> = self
            .tasks
            .iter()
            .flat_map(|t| {
                let modal_mask =
                    t.modalities.iter().fold(0u64, |acc, m| acc | (1 << m.index()));
                [
                    modal_mask,
                    t.head as u64,
                    t.loss as u64,
                    t.metric as u64,
                    t.classes as u64,
                ]
            })
            .collect();
        config_digest(&self.cfg, &fingerprint)
    }

    fn encode_modality(
        &self,
        sess: &mut Session<'_>,
        modality: Modality,
        sample: &Sample,
        task_id: usize,
    ) -> Result<SemanticFeatures> {
        match modality {
            Modality::Image => {
                let image = sample
                    .image
                    .as_ref()
                    .ok_or_else(|| err!(Contract, "sample lacks an image payload"))?;
                self.image_enc.forward(sess, image, task_id)
            }
            Modality::Text => {
                let tokens = sample
                    .tokens
                    .as_ref()
                    .ok_or_else(|| err!(Contract, "sample lacks a text payload"))?;
                let segments = alloc::vec![0u32; tokens.len()];
                self.text_enc.forward(sess, tokens, &segments, task_id)
            }
            Modality::Speech => {
                let wave = sample
                    .waveform
                    .as_ref()
                    .ok_or_else(|| err!(Contract, "sample lacks a speech payload"))?;
                let fbank = crate::fbank::compute_fbank(wave, &self.cfg.speech)?;
                self.speech_enc.forward(sess, &fbank, task_id)
            }
            Modality::Video => {
                let video = sample
                    .video
                    .as_ref()
                    .ok_or_else(|| err!(Contract, "sample lacks a video payload"))?;
                self.video_enc.forward(sess, video, task_id)
            }
        }
    }

    /// Run one sample through encode -> (fuse) -> channel encode ->
    /// channel -> decode -> head -> loss. `channel: None` bypasses the
    /// physical channel (noiseless wire).
    pub fn forward_sample(
        &self,
        sess: &mut Session<'_>,
        task_idx: usize,
        sample: &Sample,
        channel: Option<&ChannelConfig>,
        rng: &mut ChaCha8Rng,
    ) -> Result<SampleRun> {
        let task = self
            .tasks
            .get(task_idx)
            .ok_or_else(|| err!(Lookup, "task index {task_idx} out of range"))?;

        let mut features = Vec::with_capacity(task.modalities.len());
        for &m in &task.modalities {
            features.push(self.encode_modality(sess, m, sample, task.id)?);
        }

        // Single-modal features bypass fusion; multi-modal features fuse to
        // a single row. Both carry the task-embedding row.
        let (tx, content_rows) = if task.is_multimodal() {
            let fused = self.fusion.fuse(sess, &features, self.task_table, self.tasks.len())?;
            (fused.var, 1usize)
        } else {
            let with_task =
                append_task_row(sess, features[0], self.task_table, self.tasks.len())?;
            (with_task.var, with_task.rows - 1)
        };

        let block = self.coders.encode(sess, tx)?;
        let transmitted_rows = block.rows;
        let received = match channel {
            Some(cfg) => apply_channel(sess, &block, cfg, rng)?,
            None => block.var,
        };
        let decoded = self.coders.decode(sess, received)?;

        let head = &self.heads[task_idx];
        let head_in = match task.head {
            HeadKind::ClassVec | HeadKind::ReconImage => {
                if task.is_multimodal() {
                    decoded
                } else {
                    sess.tape.mean_rows(decoded)?
                }
            }
            HeadKind::ClassSeq => {
                let idx: Vec<usize> = (0..content_rows).collect();
                sess.tape.gather_rows(decoded, &idx)?
            }
            HeadKind::ReconSeq => {
                return Err(err!(Contract, "sequence reconstruction is not wired to a dataset"))
            }
        };
        let output = head.forward(sess, head_in)?;

        let loss = match (task.loss, &sample.label) {
            (LossKind::CrossEntropy, Label::Class(c)) => sess.tape.cross_entropy(output, *c)?,
            (LossKind::CrossEntropy, Label::Tokens(tokens)) => {
                let rows = sess.tape.shape(output)[0];
                if tokens.len() != rows {
                    return Err(err!(
                        Contract,
                        "{} label tokens for {} output rows",
                        tokens.len(),
                        rows
                    ));
                }
                let mut losses = Vec::with_capacity(rows);
                for (r, &t) in tokens.iter().enumerate() {
                    let row = sess.tape.gather_rows(output, &[r])?;
                    losses.push(sess.tape.cross_entropy(row, t as usize)?);
                }
                let total = sess.tape.add_n(&losses)?;
                sess.tape.scale(total, 1.0 / rows as f64)?
            }
            (LossKind::Ctc, Label::Tokens(tokens)) => {
                let label: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
                let (loss, feasible) = sess.tape.ctc_loss(output, &label)?;
                if !feasible {
                    log::warn!("infeasible CTC alignment; +inf loss contributes zero gradient");
                }
                loss
            }
            (LossKind::BinaryCrossEntropy, Label::Bits(bits)) => {
                let targets: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
                sess.tape.bce_multilabel(output, &targets)?
            }
            (LossKind::Mse, _) => {
                let image = sample
                    .image
                    .as_ref()
                    .ok_or_else(|| err!(Contract, "reconstruction loss needs an image payload"))?;
                let flat = crate::tensor::Tensor::new(
                    alloc::vec![1, image.numel()],
                    image.data().to_vec(),
                )?;
                let target = sess.input(flat);
                sess.tape.mse(output, target)?
            }
            (loss_kind, label) => {
                return Err(err!(
                    Contract,
                    "loss {:?} incompatible with label {:?}",
                    loss_kind,
                    label
                ))
            }
        };

        let prediction = self.predict(sess, task, output);
        Ok(SampleRun { loss, output, prediction, transmitted_rows })
    }

    fn predict(&self, sess: &Session<'_>, task: &TaskSpec, output: Var) -> Prediction {
        let data = sess.tape.data(output);
        let shape = sess.tape.shape(output);
        match (task.head, task.loss) {
            (HeadKind::ClassVec, LossKind::CrossEntropy) => Prediction::Class(argmax(data)),
            (HeadKind::ClassVec, LossKind::BinaryCrossEntropy) => {
                Prediction::Bits(data.iter().map(|&z| z > 0.0).collect())
            }
            (HeadKind::ClassSeq, LossKind::CrossEntropy) => {
                let (rows, cols) = (shape[0], shape[1]);
                Prediction::Tokens(
                    (0..rows)
                        .map(|r| argmax(&data[r * cols..(r + 1) * cols]) as u32)
                        .collect(),
                )
            }
            (HeadKind::ClassSeq, LossKind::Ctc) => {
                let decoded = ctc_greedy_decode(data, shape[0], shape[1]);
                Prediction::Tokens(decoded.iter().map(|&t| t as u32).collect())
            }
            _ => Prediction::Recon(data.to_vec()),
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(core::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

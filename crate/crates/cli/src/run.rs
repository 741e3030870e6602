//! Implementations of the CLI subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use semcomm_core::checkpoint;
use semcomm_core::data;
use semcomm_core::gradcheck;
use semcomm_core::overhead;
use semcomm_core::train::{self, EvalConfig, MetricRow};

use crate::config::ExperimentConfig;
use crate::csvio;

pub fn write_file(path: &Path, content: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating directory {}", parent.display()))?;
    }
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn out_path(cfg: &ExperimentConfig, override_dir: Option<&Path>, file: &str) -> PathBuf {
    override_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.out_dir)).join(file)
}

/// `gen-data`: write each task's dataset as a binary container.
pub fn gen_data(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> anyhow::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for task in &cfg.tasks {
        let samples = data::gen_dataset(&task.dataset)?;
        let bytes = data::export_container(&task.dataset, &samples)?;
        let path = out_path(cfg, out_dir, &format!("{}.dataset.bin", task.name));
        write_file(&path, &bytes)?;
        println!("wrote {} ({} samples, {} bytes)", path.display(), samples.len(), bytes.len());
        written.push(path);
    }
    Ok(written)
}

/// `train`: joint training, then checkpoint + loss-log emission.
pub fn train_cmd(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> anyhow::Result<PathBuf> {
    let mut model = cfg.build_model()?;
    let outcome = train::train(&mut model, &cfg.train)?;
    let ckpt = checkpoint::save(&model.store, cfg.train.steps as u64, model.digest())?;
    let ckpt_path = out_path(cfg, out_dir, "checkpoint.bin");
    write_file(&ckpt_path, &ckpt)?;
    let log_path = out_path(cfg, out_dir, "train_log.csv");
    write_file(&log_path, csvio::train_log_csv(&outcome.logs).as_bytes())?;
    let last = outcome.logs.last().map(|l| l.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} steps ({} epochs completed), final loss {:.6}",
        cfg.train.steps, outcome.epochs_completed, last
    );
    println!("wrote {}", ckpt_path.display());
    println!("wrote {}", log_path.display());
    Ok(ckpt_path)
}

fn load_into_model(
    cfg: &ExperimentConfig,
    ckpt_path: &Path,
) -> anyhow::Result<semcomm_core::model::Model> {
    let mut model = cfg.build_model()?;
    let bytes =
        fs::read(ckpt_path).with_context(|| format!("reading {}", ckpt_path.display()))?;
    let ckpt = checkpoint::load(&bytes)?;
    let digest = model.digest();
    checkpoint::apply(&mut model.store, &ckpt, digest)?;
    Ok(model)
}

/// `eval`: the metric table over every (task, channel, SNR) cell.
pub fn eval_cmd(
    cfg: &ExperimentConfig,
    ckpt_path: &Path,
    out_dir: Option<&Path>,
) -> anyhow::Result<PathBuf> {
    let model = load_into_model(cfg, ckpt_path)?;
    let rows = train::evaluate(&model, &cfg.eval)?;
    let path = out_path(cfg, out_dir, "metrics.csv");
    write_file(&path, csvio::metrics_csv(&rows).as_bytes())?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(path)
}

/// `sweep`: the eval grid repeated over several noise seeds.
pub fn sweep_cmd(
    cfg: &ExperimentConfig,
    ckpt_path: &Path,
    eval_seeds: usize,
    out_dir: Option<&Path>,
) -> anyhow::Result<PathBuf> {
    if eval_seeds == 0 {
        bail!("sweep needs at least one evaluation seed");
    }
    let model = load_into_model(cfg, ckpt_path)?;
    let mut rows: Vec<MetricRow> = Vec::new();
    for i in 0..eval_seeds {
        let eval = EvalConfig { seed: cfg.eval.seed + i as u64, ..cfg.eval.clone() };
        rows.extend(train::evaluate(&model, &eval)?);
    }
    let path = out_path(cfg, out_dir, "sweep.csv");
    write_file(&path, csvio::metrics_csv(&rows).as_bytes())?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(path)
}

/// `overhead`: per-task transmitted-byte accounting.
pub fn overhead_cmd(
    cfg: &ExperimentConfig,
    symbol_bits: Option<usize>,
    out_dir: Option<&Path>,
) -> anyhow::Result<PathBuf> {
    let bits = symbol_bits.unwrap_or(cfg.symbol_bits);
    let mut reports = Vec::new();
    for task in &cfg.tasks {
        reports.push(overhead::overhead(&cfg.model, task, bits)?);
    }
    let path = out_path(cfg, out_dir, "overhead.csv");
    write_file(&path, csvio::overhead_csv(&reports).as_bytes())?;
    println!("wrote {}", path.display());
    Ok(path)
}

/// `gradcheck`: per-operation suite plus the full fused pipeline; returns
/// false when any entry fails.
pub fn gradcheck_cmd(seed: u64) -> anyhow::Result<bool> {
    let mut ok = true;
    for line in gradcheck::op_suite(seed)? {
        println!("{line}");
        ok &= line.passed;
    }
    let report = gradcheck::full_pipeline_check(seed)?;
    println!(
        "{:<26} {:>6} entries  max rel err {:.3e}  {}",
        "full fused pipeline",
        report.entries_checked,
        report.max_rel_err,
        if report.passed() { "ok" } else { "FAILED" }
    );
    ok &= report.passed();
    Ok(ok)
}

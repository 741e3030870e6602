//! Experiment configuration: one JSON document covering the model, the
//! task registry, training and evaluation settings.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use semcomm_core::config::ModelConfig;
use semcomm_core::data::{DatasetKind, DatasetSpec};
use semcomm_core::encoders::Modality;
use semcomm_core::model::Model;
use semcomm_core::tasks::{HeadKind, LossKind, MetricKind, TaskSpec};
use semcomm_core::train::{EvalConfig, TrainConfig};

/// Environment variable overriding the master seed.
pub const SEED_ENV: &str = "SEMCOMM_SEED";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Master seed: model initialization, training and evaluation streams
    /// all derive from it.
    pub seed: u64,
    pub model: ModelConfig,
    pub tasks: Vec<TaskSpec>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Symbol width assumed by overhead accounting (8, 16 or 32 bits).
    pub symbol_bits: usize,
    pub out_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            model: ModelConfig::default(),
            tasks: default_tasks(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            symbol_bits: 32,
            out_dir: "out".into(),
        }
    }
}

/// The default registry: one task per synthetic dataset kind.
pub fn default_tasks() -> Vec<TaskSpec> {
    let model = ModelConfig::default();
    let sized = |kind: DatasetKind, size: usize, seed: u64| DatasetSpec {
        kind,
        size,
        seed,
        image: model.image,
        text_len: model.text.seq_len,
        vocab: model.text.vocab,
        speech: model.speech,
        ..DatasetSpec::default_for(kind)
    };
    vec![
        TaskSpec {
            id: 0,
            name: "img_class".into(),
            modalities: vec![Modality::Image],
            head: HeadKind::ClassVec,
            loss: LossKind::CrossEntropy,
            metric: MetricKind::Accuracy,
            classes: 4,
            dataset: sized(DatasetKind::ImgClass, 1000, 101),
            lr: 1e-4,
        },
        TaskSpec {
            id: 1,
            name: "text_recon".into(),
            modalities: vec![Modality::Text],
            head: HeadKind::ClassSeq,
            loss: LossKind::CrossEntropy,
            metric: MetricKind::Bleu,
            classes: model.text.vocab,
            dataset: sized(DatasetKind::TextRecon, 1000, 102),
            lr: 1e-4,
        },
        TaskSpec {
            id: 2,
            name: "speech_rec".into(),
            modalities: vec![Modality::Speech],
            head: HeadKind::ClassSeq,
            loss: LossKind::Ctc,
            metric: MetricKind::WordAccuracy,
            classes: 4,
            dataset: sized(DatasetKind::SpeechRec, 600, 103),
            lr: 2e-4,
        },
        TaskSpec {
            id: 3,
            name: "video_class".into(),
            modalities: vec![Modality::Video],
            head: HeadKind::ClassVec,
            loss: LossKind::CrossEntropy,
            metric: MetricKind::Accuracy,
            classes: 4,
            dataset: sized(DatasetKind::VideoClass, 600, 104),
            lr: 1e-4,
        },
        TaskSpec {
            id: 4,
            name: "mm_xor".into(),
            modalities: vec![Modality::Image, Modality::Text],
            head: HeadKind::ClassVec,
            loss: LossKind::CrossEntropy,
            metric: MetricKind::Accuracy,
            classes: 2,
            dataset: sized(DatasetKind::MmXor, 1000, 105),
            lr: 1e-4,
        },
        TaskSpec {
            id: 5,
            name: "mm_multilabel".into(),
            modalities: vec![Modality::Image, Modality::Text],
            head: HeadKind::ClassVec,
            loss: LossKind::BinaryCrossEntropy,
            metric: MetricKind::F1,
            classes: 4,
            dataset: sized(DatasetKind::MmMultilabel, 1000, 106),
            lr: 1e-4,
        },
    ]
}

impl ExperimentConfig {
    /// Load from JSON (or defaults when `path` is `None`), apply the
    /// `SEMCOMM_SEED` override, and propagate the master seed into the
    /// training/evaluation sub-configs.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut cfg: ExperimentConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v
                .parse()
                .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))?;
        }
        cfg.train.seed = cfg.seed;
        cfg.eval.seed = cfg.seed;
        cfg.eval.train_fraction = cfg.train.train_fraction;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fail fast on anything the encoders would later reject.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.validate()?;
        if self.tasks.is_empty() {
            bail!("config registers no tasks");
        }
        for task in &self.tasks {
            task.validate()?;
            task.dataset.validate_against(&self.model, &task.modalities)?;
        }
        if !matches!(self.symbol_bits, 8 | 16 | 32) {
            bail!("symbol_bits must be 8, 16 or 32");
        }
        Ok(())
    }

    pub fn build_model(&self) -> anyhow::Result<Model> {
        Ok(Model::build(self.model.clone(), self.tasks.clone(), self.seed)?)
    }
}

//! Task specifications and the lite per-task heads (one or two linear
//! layers, no nonlinearity after the final layer).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::DatasetSpec;
use crate::encoders::Modality;
use crate::error::{err, Result};
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::ChaCha8Rng;
use crate::tape::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// One logit vector per instance (classification over a pooled or
    /// fused vector).
    ClassVec,
    /// One logit row per sequence position, weights shared across rows.
    ClassSeq,
    /// Dense reconstruction of a `C*H*W` image from the pooled vector.
    ReconImage,
    /// Row-wise dense reconstruction.
    ReconSeq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    BinaryCrossEntropy,
    Ctc,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    F1,
    Bleu,
    WordAccuracy,
    Psnr,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::F1 => "f1",
            MetricKind::Bleu => "bleu",
            MetricKind::WordAccuracy => "word_accuracy",
            MetricKind::Psnr => "psnr",
        }
    }
}

/// One registered task: its modalities, head/loss/metric triple, and the
/// synthetic dataset standing in for its corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(default)]
    pub id: usize,
    pub name: String,
    pub modalities: Vec<Modality>,
    pub head: HeadKind,
    pub loss: LossKind,
    pub metric: MetricKind,
    /// Class count (classification), label count (multi-label), or symbol
    /// count excluding the CTC blank.
    pub classes: usize,
    pub dataset: DatasetSpec,
    #[serde(default = "default_lr")]
    pub lr: f64,
}

fn default_lr() -> f64 {
    1e-4
}

impl TaskSpec {
    /// Head/loss/metric triples must be mutually consistent.
    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(err!(Config, "task {:?} needs at least one modality", self.name));
        }
        let mut sorted = self.modalities.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.modalities.len() {
            return Err(err!(Config, "task {:?} lists a modality twice", self.name));
        }
        if self.classes == 0 {
            return Err(err!(Config, "task {:?} needs classes >= 1", self.name));
        }
        if !(self.lr > 0.0) {
            return Err(err!(Config, "task {:?} learning rate must be > 0", self.name));
        }
        let ok = matches!(
            (self.head, self.loss, self.metric),
            (HeadKind::ClassVec, LossKind::CrossEntropy, MetricKind::Accuracy)
                | (HeadKind::ClassVec, LossKind::BinaryCrossEntropy, MetricKind::F1)
                | (HeadKind::ClassSeq, LossKind::CrossEntropy, MetricKind::Bleu)
                | (HeadKind::ClassSeq, LossKind::CrossEntropy, MetricKind::WordAccuracy)
                | (HeadKind::ClassSeq, LossKind::Ctc, MetricKind::WordAccuracy)
                | (HeadKind::ReconImage, LossKind::Mse, MetricKind::Psnr)
                | (HeadKind::ReconSeq, LossKind::Mse, MetricKind::Psnr)
        );
        if !ok {
            return Err(err!(
                Config,
                "task {:?}: head {:?} / loss {:?} / metric {:?} are not a consistent triple",
                self.name,
                self.head,
                self.loss,
                self.metric
            ));
        }
        if self.is_multimodal() && matches!(self.head, HeadKind::ClassSeq | HeadKind::ReconSeq) {
            return Err(err!(
                Config,
                "task {:?}: fused multi-modal features are a single row; sequence heads need a single-modal task",
                self.name
            ));
        }
        Ok(())
    }

    pub fn is_multimodal(&self) -> bool {
        self.modalities.len() >= 2
    }

    /// Output width of the head (CTC adds the blank class).
    pub fn head_width(&self, recon_elems: usize) -> usize {
        match (self.head, self.loss) {
            (HeadKind::ClassSeq, LossKind::Ctc) => self.classes + 1,
            (HeadKind::ReconImage | HeadKind::ReconSeq, _) => recon_elems,
            _ => self.classes,
        }
    }
}

/// One or two linear layers.
#[derive(Debug, Clone)]
pub struct Head {
    pub w1: ParamId,
    pub b1: ParamId,
    pub second: Option<(ParamId, ParamId)>,
}

impl Head {
    /// Classification heads use a single linear layer; reconstruction heads
    /// use two (GeLU between, none after the final layer).
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        kind: HeadKind,
        in_width: usize,
        out_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        match kind {
            HeadKind::ClassVec | HeadKind::ClassSeq => Ok(Head {
                w1: store.xavier(format!("{prefix}.w1"), in_width, out_width, rng)?,
                b1: store.zeros(format!("{prefix}.b1"), alloc::vec![out_width])?,
                second: None,
            }),
            HeadKind::ReconImage | HeadKind::ReconSeq => {
                let hidden = 2 * in_width;
                Ok(Head {
                    w1: store.xavier(format!("{prefix}.w1"), in_width, hidden, rng)?,
                    b1: store.zeros(format!("{prefix}.b1"), alloc::vec![hidden])?,
                    second: Some((
                        store.xavier(format!("{prefix}.w2"), hidden, out_width, rng)?,
                        store.zeros(format!("{prefix}.b2"), alloc::vec![out_width])?,
                    )),
                })
            }
        }
    }

    /// Apply the head row-wise to `[L, P]` features (sequence heads share
    /// weights across rows; vector heads receive a single row).
    pub fn forward(&self, sess: &mut Session<'_>, features: Var) -> Result<Var> {
        let (w1, b1) = (sess.p(self.w1), sess.p(self.b1));
        let mut out = sess.tape.matmul(features, w1)?;
        out = sess.tape.add(out, b1)?;
        if let Some((w2, b2)) = self.second {
            let act = sess.tape.gelu(out)?;
            let (w2v, b2v) = (sess.p(w2), sess.p(b2));
            out = sess.tape.matmul(act, w2v)?;
            out = sess.tape.add(out, b2v)?;
        }
        Ok(out)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = alloc::vec![self.w1, self.b1];
        if let Some((w2, b2)) = self.second {
            ids.push(w2);
            ids.push(b2);
        }
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetKind, DatasetSpec};
    use crate::tensor::Tensor;
    use alloc::string::ToString;
    use alloc::vec;

    fn spec(head: HeadKind, loss: LossKind, metric: MetricKind, modalities: Vec<Modality>) -> TaskSpec {
        TaskSpec {
            id: 0,
            name: "t".to_string(),
            modalities,
            head,
            loss,
            metric,
            classes: 4,
            dataset: DatasetSpec { kind: DatasetKind::ImgClass, size: 8, seed: 0, ..DatasetSpec::default_for(DatasetKind::ImgClass) },
            lr: 1e-4,
        }
    }

    #[test]
    fn consistent_triples_validate() {
        assert!(spec(HeadKind::ClassVec, LossKind::CrossEntropy, MetricKind::Accuracy, vec![Modality::Image]).validate().is_ok());
        assert!(spec(HeadKind::ClassSeq, LossKind::Ctc, MetricKind::WordAccuracy, vec![Modality::Speech]).validate().is_ok());
        assert!(spec(HeadKind::ClassVec, LossKind::Ctc, MetricKind::Accuracy, vec![Modality::Image]).validate().is_err());
        assert!(spec(HeadKind::ClassSeq, LossKind::Ctc, MetricKind::WordAccuracy, vec![Modality::Image, Modality::Text]).validate().is_err());
    }

    #[test]
    fn class_vec_identity_extended_weights_select_features() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::seeded(1);
        let head = Head::init(&mut store, "h", HeadKind::ClassVec, 6, 3, &mut rng).unwrap();
        // Identity-extended weight: top 3x3 block is I, rest zero.
        {
            let w = store.value_mut(head.w1);
            w.data_mut().iter_mut().for_each(|v| *v = 0.0);
            for i in 0..3 {
                w.data_mut()[i * 3 + i] = 1.0;
            }
        }
        let mut sess = Session::new(&store);
        let f = sess.input(Tensor::new(vec![1, 6], vec![0.7, -0.2, 0.9, 5.0, 6.0, 7.0]).unwrap());
        let logits = head.forward(&mut sess, f).unwrap();
        assert_eq!(sess.tape.data(logits), &[0.7, -0.2, 0.9]);
    }

    #[test]
    fn class_seq_shares_weights_across_rows() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::seeded(2);
        let head = Head::init(&mut store, "h", HeadKind::ClassSeq, 4, 2, &mut rng).unwrap();
        let mut sess = Session::new(&store);
        let row = [0.3, -0.8, 0.5, 0.1];
        let mut data = Vec::new();
        for _ in 0..3 {
            data.extend_from_slice(&row);
        }
        let f = sess.input(Tensor::new(vec![3, 4], data).unwrap());
        let logits = head.forward(&mut sess, f).unwrap();
        assert_eq!(sess.tape.shape(logits), &[3, 2]);
        let d = sess.tape.data(logits);
        assert_eq!(&d[0..2], &d[2..4]);
        assert_eq!(&d[0..2], &d[4..6]);
    }

    #[test]
    fn recon_head_output_length_matches_target() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::seeded(3);
        let head = Head::init(&mut store, "h", HeadKind::ReconImage, 8, 3 * 4 * 4, &mut rng).unwrap();
        let mut sess = Session::new(&store);
        let f = sess.input(Tensor::filled(vec![1, 8], 0.2));
        let out = head.forward(&mut sess, f).unwrap();
        assert_eq!(sess.tape.shape(out), &[1, 48]);
    }

    #[test]
    fn head_width_accounts_for_ctc_blank() {
        let s = spec(HeadKind::ClassSeq, LossKind::Ctc, MetricKind::WordAccuracy, vec![Modality::Speech]);
        assert_eq!(s.head_width(0), 5); // 4 symbols + blank
        let c = spec(HeadKind::ClassVec, LossKind::CrossEntropy, MetricKind::Accuracy, vec![Modality::Image]);
        assert_eq!(c.head_width(0), 4);
    }
}

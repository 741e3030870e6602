//! Speech semantic encoder: two causal convolution + GeLU layers with
//! stride-2 temporal subsampling, a linear projection, then attention
//! layers. `L_S = ceil(T / 4)` rows for `T` filterbank frames.

use alloc::format;
use alloc::vec::Vec;

use crate::attention::{AttentionConfig, AttentionStack};
use crate::config::SpeechGeometry;
use crate::encoders::{Modality, SemanticFeatures};
use crate::error::{err, Result};
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::ChaCha8Rng;
use crate::tape::Var;
use crate::tensor::Tensor;

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

#[derive(Debug, Clone)]
pub struct SpeechEncoder {
    pub conv1_k: ParamId,
    pub conv1_b: ParamId,
    pub conv2_k: ParamId,
    pub conv2_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub layers: AttentionStack,
    geom: SpeechGeometry,
    width: usize,
}

impl SpeechEncoder {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        geom: SpeechGeometry,
        attn: AttentionConfig,
        depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let p = attn.width;
        let kw = geom.kernel_width;
        Ok(SpeechEncoder {
            conv1_k: store.xavier_shaped(
                format!("{prefix}.conv1.k"),
                alloc::vec![p, geom.filters, kw],
                geom.filters * kw,
                p * kw,
                rng,
            )?,
            conv1_b: store.zeros(format!("{prefix}.conv1.b"), alloc::vec![p])?,
            conv2_k: store.xavier_shaped(
                format!("{prefix}.conv2.k"),
                alloc::vec![p, p, kw],
                p * kw,
                p * kw,
                rng,
            )?,
            conv2_b: store.zeros(format!("{prefix}.conv2.b"), alloc::vec![p])?,
            proj_w: store.xavier(format!("{prefix}.proj.w"), p, p, rng)?,
            proj_b: store.zeros(format!("{prefix}.proj.b"), alloc::vec![p])?,
            layers: AttentionStack::init(store, &format!("{prefix}.enc"), depth, attn, rng)?,
            geom,
            width: p,
        })
    }

    /// Output rows for `t` filterbank frames.
    pub fn feature_len(t: usize) -> usize {
        ceil_div(ceil_div(t, 2), 2)
    }

    /// Causal conv stack only (both layers, GeLU, stride-2 subsampling).
    /// Exposed separately so causality can be probed directly.
    pub fn conv_stack(&self, sess: &mut Session<'_>, fbank: Var) -> Result<Var> {
        let (t, f) = sess.tape.value(fbank).dims2()?;
        if f != self.geom.filters {
            return Err(err!(Dim, "fbank width {f} does not match {} filters", self.geom.filters));
        }
        if t == 0 {
            return Err(err!(Degenerate, "empty fbank"));
        }
        let k1 = sess.p(self.conv1_k);
        let c1 = sess.tape.causal_conv1d(fbank, k1)?;
        let b1 = sess.p(self.conv1_b);
        let c1 = sess.tape.add(c1, b1)?;
        let c1 = sess.tape.gelu(c1)?;
        let even: Vec<usize> = (0..t).step_by(2).collect();
        let d1 = sess.tape.gather_rows(c1, &even)?;

        let t2 = even.len();
        let k2 = sess.p(self.conv2_k);
        let c2 = sess.tape.causal_conv1d(d1, k2)?;
        let b2 = sess.p(self.conv2_b);
        let c2 = sess.tape.add(c2, b2)?;
        let c2 = sess.tape.gelu(c2)?;
        let even2: Vec<usize> = (0..t2).step_by(2).collect();
        sess.tape.gather_rows(c2, &even2)
    }

    pub fn forward(
        &self,
        sess: &mut Session<'_>,
        fbank: &Tensor,
        task_id: usize,
    ) -> Result<SemanticFeatures> {
        let fb = sess.input(fbank.clone());
        let stack = self.conv_stack(sess, fb)?;
        let (w, b) = (sess.p(self.proj_w), sess.p(self.proj_b));
        let proj = sess.tape.matmul(stack, w)?;
        let proj = sess.tape.add(proj, b)?;
        let out = self.layers.forward(sess, proj)?;
        let rows = sess.tape.shape(out)[0];
        debug_assert_eq!(rows, Self::feature_len(fbank.shape()[0]));
        debug_assert_eq!(sess.tape.shape(out)[1], self.width);
        Ok(SemanticFeatures { var: out, rows, modality: Modality::Speech, task_id })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = alloc::vec![
            self.conv1_k,
            self.conv1_b,
            self.conv2_k,
            self.conv2_b,
            self.proj_w,
            self.proj_b,
        ];
        ids.extend(self.layers.param_ids());
        ids
    }
}

//! Multi-head self-attention layer shared by the modality encoders and the
//! fusion module.
//!
//! One layer computes `H' = LN(MSA(H) + H)` followed by
//! `out = LN(FFN(H') + H')`, with per-head projections, softmax score
//! matrices, and a two-layer GeLU feedforward.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{err, Result};
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::ChaCha8Rng;
use crate::tape::Var;

/// Layer-norm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-5;

/// Divisor inside the attention softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttnScale {
    /// `sqrt(P)` — scale by the full feature width (the default).
    #[default]
    SeqWidth,
    /// `sqrt(P_h)` — the conventional per-head scale, kept as an escape
    /// hatch.
    HeadWidth,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionConfig {
    pub width: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub scale: AttnScale,
}

impl AttentionConfig {
    pub fn new(width: usize, heads: usize, d_ff: usize, scale: AttnScale) -> Result<Self> {
        if heads == 0 || width == 0 || width % heads != 0 {
            return Err(err!(
                Config,
                "attention width {width} must be a positive multiple of {heads} heads"
            ));
        }
        Ok(AttentionConfig { width, heads, d_ff, scale })
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    fn score_scale(&self) -> f64 {
        let divisor = match self.scale {
            AttnScale::SeqWidth => self.width,
            AttnScale::HeadWidth => self.head_width(),
        };
        1.0 / libm::sqrt(divisor as f64)
    }
}

/// Parameter ids for one attention layer.
#[derive(Debug, Clone)]
pub struct AttentionLayer {
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub wo: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    cfg: AttentionConfig,
}

impl AttentionLayer {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        cfg: AttentionConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let p = cfg.width;
        let ph = cfg.head_width();
        let mut wq = Vec::new();
        let mut wk = Vec::new();
        let mut wv = Vec::new();
        for h in 0..cfg.heads {
            wq.push(store.xavier(format!("{prefix}.h{h}.wq"), p, ph, rng)?);
            wk.push(store.xavier(format!("{prefix}.h{h}.wk"), p, ph, rng)?);
            wv.push(store.xavier(format!("{prefix}.h{h}.wv"), p, ph, rng)?);
        }
        Ok(AttentionLayer {
            wq,
            wk,
            wv,
            wo: store.xavier(format!("{prefix}.wo"), p, p, rng)?,
            ln1_gain: store.ones(format!("{prefix}.ln1.gain"), alloc::vec![p])?,
            ln1_bias: store.zeros(format!("{prefix}.ln1.bias"), alloc::vec![p])?,
            ln2_gain: store.ones(format!("{prefix}.ln2.gain"), alloc::vec![p])?,
            ln2_bias: store.zeros(format!("{prefix}.ln2.bias"), alloc::vec![p])?,
            ffn_w1: store.xavier(format!("{prefix}.ffn.w1"), p, cfg.d_ff, rng)?,
            ffn_b1: store.zeros(format!("{prefix}.ffn.b1"), alloc::vec![cfg.d_ff])?,
            ffn_w2: store.xavier(format!("{prefix}.ffn.w2"), cfg.d_ff, p, rng)?,
            ffn_b2: store.zeros(format!("{prefix}.ffn.b2"), alloc::vec![p])?,
            cfg,
        })
    }

    /// Full-sequence self-attention over `h: [L, P]`.
    pub fn forward(&self, sess: &mut Session<'_>, h: Var) -> Result<Var> {
        let msa = self.msa(sess, h)?;
        let res1 = sess.tape.add(msa, h)?;
        let (g1, b1) = (sess.p(self.ln1_gain), sess.p(self.ln1_bias));
        let h1 = sess.tape.layer_norm(res1, g1, b1, LN_EPS)?;
        let ffn = self.ffn(sess, h1)?;
        let res2 = sess.tape.add(ffn, h1)?;
        let (g2, b2) = (sess.p(self.ln2_gain), sess.p(self.ln2_bias));
        sess.tape.layer_norm(res2, g2, b2, LN_EPS)
    }

    /// Self-attention restricted to disjoint row groups: each group attends
    /// only within itself, and rows return to their original order.
    pub fn forward_grouped(
        &self,
        sess: &mut Session<'_>,
        h: Var,
        groups: &[Vec<usize>],
    ) -> Result<Var> {
        let (rows, _) = sess.tape.value(h).dims2()?;
        let mut seen = alloc::vec![false; rows];
        for g in groups {
            for &i in g {
                if i >= rows || seen[i] {
                    return Err(err!(Contract, "row groups must partition 0..{rows}"));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(err!(Contract, "row groups must cover every row"));
        }

        let mut outs = Vec::with_capacity(groups.len());
        let mut order = Vec::with_capacity(rows);
        for g in groups {
            let sub = sess.tape.gather_rows(h, g)?;
            outs.push(self.forward(sess, sub)?);
            order.extend_from_slice(g);
        }
        let stacked = sess.tape.concat_rows(&outs)?;
        let mut inverse = alloc::vec![0usize; rows];
        for (pos, &orig) in order.iter().enumerate() {
            inverse[orig] = pos;
        }
        sess.tape.gather_rows(stacked, &inverse)
    }

    fn msa(&self, sess: &mut Session<'_>, h: Var) -> Result<Var> {
        let scale = self.cfg.score_scale();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for i in 0..self.cfg.heads {
            let (wq, wk, wv) = (sess.p(self.wq[i]), sess.p(self.wk[i]), sess.p(self.wv[i]));
            let q = sess.tape.matmul(h, wq)?;
            let k = sess.tape.matmul(h, wk)?;
            let v = sess.tape.matmul(h, wv)?;
            let kt = sess.tape.transpose(k)?;
            let scores = sess.tape.matmul(q, kt)?;
            let scaled = sess.tape.scale(scores, scale)?;
            let weights = sess.tape.softmax_rows(scaled)?;
            heads.push(sess.tape.matmul(weights, v)?);
        }
        let cat = sess.tape.concat_cols(&heads)?;
        let wo = sess.p(self.wo);
        sess.tape.matmul(cat, wo)
    }

    fn ffn(&self, sess: &mut Session<'_>, h: Var) -> Result<Var> {
        let (w1, b1) = (sess.p(self.ffn_w1), sess.p(self.ffn_b1));
        let a = sess.tape.matmul(h, w1)?;
        let a = sess.tape.add(a, b1)?;
        let a = sess.tape.gelu(a)?;
        let (w2, b2) = (sess.p(self.ffn_w2), sess.p(self.ffn_b2));
        let out = sess.tape.matmul(a, w2)?;
        sess.tape.add(out, b2)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        ids.extend(&self.wq);
        ids.extend(&self.wk);
        ids.extend(&self.wv);
        ids.extend([
            self.wo, self.ln1_gain, self.ln1_bias, self.ln2_gain, self.ln2_bias, self.ffn_w1,
            self.ffn_b1, self.ffn_w2, self.ffn_b2,
        ]);
        ids
    }
}

/// Stack of attention layers sharing one config.
#[derive(Debug, Clone)]
pub struct AttentionStack {
    pub layers: Vec<AttentionLayer>,
}

impl AttentionStack {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        depth: usize,
        cfg: AttentionConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            layers.push(AttentionLayer::init(store, &format!("{prefix}.l{l}"), cfg, rng)?);
        }
        Ok(AttentionStack { layers })
    }

    pub fn forward(&self, sess: &mut Session<'_>, mut h: Var) -> Result<Var> {
        for layer in &self.layers {
            h = layer.forward(sess, h)?;
        }
        Ok(h)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.param_ids()).collect()
    }
}

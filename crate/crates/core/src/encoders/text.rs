//! Text semantic encoder: word + position + segment embedding sum, then a
//! stack of self-attention layers.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::attention::{AttentionConfig, AttentionStack};
use crate::config::TextGeometry;
use crate::encoders::{Modality, SemanticFeatures};
use crate::error::{err, Result};
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::ChaCha8Rng;

/// Reserved token ids.
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

/// Map words to ids, truncating or right-padding with [`PAD_ID`] to exactly
/// `seq_len` ids. Unknown words map to [`UNK_ID`].
pub fn tokenize(words: &[&str], vocab: &BTreeMap<String, u32>, seq_len: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = words
        .iter()
        .take(seq_len)
        .map(|w| vocab.get(*w).copied().unwrap_or(UNK_ID))
        .collect();
    ids.resize(seq_len, PAD_ID);
    ids
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub word_table: ParamId,
    pub position_table: ParamId,
    pub segment_table: ParamId,
    pub layers: AttentionStack,
    geom: TextGeometry,
}

impl TextEncoder {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        geom: TextGeometry,
        attn: AttentionConfig,
        depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(TextEncoder {
            word_table: store.embedding(format!("{prefix}.word_table"), geom.vocab, attn.width, rng)?,
            position_table: store.embedding(
                format!("{prefix}.position_table"),
                geom.seq_len,
                attn.width,
                rng,
            )?,
            segment_table: store.embedding(
                format!("{prefix}.segment_table"),
                geom.segments,
                attn.width,
                rng,
            )?,
            layers: AttentionStack::init(store, &format!("{prefix}.enc"), depth, attn, rng)?,
            geom,
        })
    }

    /// Input embeddings only (word + position + segment), before attention.
    pub fn embed(
        &self,
        sess: &mut Session<'_>,
        ids: &[u32],
        segment_ids: &[u32],
    ) -> Result<crate::tape::Var> {
        if ids.len() != self.geom.seq_len || segment_ids.len() != self.geom.seq_len {
            return Err(err!(
                Dim,
                "expected exactly {} ids/segment ids, got {}/{}",
                self.geom.seq_len,
                ids.len(),
                segment_ids.len()
            ));
        }
        for &id in ids {
            if id as usize >= self.geom.vocab {
                return Err(err!(Lookup, "token id {id} outside vocab of {}", self.geom.vocab));
            }
        }
        for &s in segment_ids {
            if s as usize >= self.geom.segments {
                return Err(err!(Lookup, "segment id {s} outside {} segments", self.geom.segments));
            }
        }
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let sidx: Vec<usize> = segment_ids.iter().map(|&i| i as usize).collect();
        let pidx: Vec<usize> = (0..self.geom.seq_len).collect();
        let wt = sess.p(self.word_table);
        let pt = sess.p(self.position_table);
        let st = sess.p(self.segment_table);
        let ew = sess.tape.gather_rows(wt, &idx)?;
        let ep = sess.tape.gather_rows(pt, &pidx)?;
        let es = sess.tape.gather_rows(st, &sidx)?;
        let sum = sess.tape.add(ew, ep)?;
        sess.tape.add(sum, es)
    }

    pub fn forward(
        &self,
        sess: &mut Session<'_>,
        ids: &[u32],
        segment_ids: &[u32],
        task_id: usize,
    ) -> Result<SemanticFeatures> {
        let embedded = self.embed(sess, ids, segment_ids)?;
        let out = self.layers.forward(sess, embedded)?;
        Ok(SemanticFeatures {
            var: out,
            rows: self.geom.seq_len,
            modality: Modality::Text,
            task_id,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = alloc::vec![self.word_table, self.position_table, self.segment_table];
        ids.extend(self.layers.param_ids());
        ids
    }
}

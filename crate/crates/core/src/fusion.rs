//! Multi-modal fusion: concatenate per-modality feature sequences, add
//! per-modality segment embeddings, append the task-embedding row, run a
//! stack of attention layers, and average-aggregate the rows into a single
//! `1 x P` vector.
//!
//! No position embeddings are added here, so the fused vector is invariant
//! to row permutations within a modality block and to reordering whole
//! modality blocks.

use alloc::vec::Vec;

use crate::attention::{AttentionConfig, AttentionStack};
use crate::encoders::{Modality, SemanticFeatures};
use crate::error::{err, Result};
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::ChaCha8Rng;
use crate::tape::Var;

/// Fused `1 x P` feature vector plus provenance.
#[derive(Debug, Clone)]
pub struct FusedFeatures {
    pub var: Var,
    pub task_id: usize,
    /// Per-modality row counts of the inputs, in concatenation order.
    pub source_lengths: Vec<usize>,
}

impl FusedFeatures {
    /// Row count of the unfused concatenation including the task row.
    pub fn unfused_rows(&self) -> usize {
        self.source_lengths.iter().sum::<usize>() + 1
    }
}

#[derive(Debug, Clone)]
pub struct FusionModule {
    /// One segment-embedding row per supported modality.
    pub segment_table: ParamId,
    pub layers: AttentionStack,
}

impl FusionModule {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        attn: AttentionConfig,
        depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(FusionModule {
            segment_table: store.embedding(
                alloc::format!("{prefix}.segment_table"),
                Modality::ALL.len(),
                attn.width,
                rng,
            )?,
            layers: AttentionStack::init(store, &alloc::format!("{prefix}.attn"), depth, attn, rng)?,
        })
    }

    /// Row-wise concatenation of feature sequences in the given order.
    /// Returns the concatenated rows plus per-row modality provenance.
    pub fn concat_features(
        &self,
        sess: &mut Session<'_>,
        features: &[SemanticFeatures],
    ) -> Result<(Var, Vec<(Modality, usize)>)> {
        if features.is_empty() {
            return Err(err!(Contract, "cannot fuse an empty feature list"));
        }
        let task_id = features[0].task_id;
        let width = sess.tape.shape(features[0].var)[1];
        for f in features {
            if f.task_id != task_id {
                return Err(err!(
                    Contract,
                    "features from different tasks ({} vs {})",
                    f.task_id,
                    task_id
                ));
            }
            let shape = sess.tape.shape(f.var);
            if shape[1] != width {
                return Err(err!(Dim, "feature width mismatch: {} vs {width}", shape[1]));
            }
        }
        let vars: Vec<Var> = features.iter().map(|f| f.var).collect();
        let cat = sess.tape.concat_rows(&vars)?;
        let tags: Vec<(Modality, usize)> =
            features.iter().map(|f| (f.modality, f.rows)).collect();
        Ok((cat, tags))
    }

    /// Add each row's modality segment embedding.
    pub fn add_segment_embeddings(
        &self,
        sess: &mut Session<'_>,
        concat: Var,
        tags: &[(Modality, usize)],
    ) -> Result<Var> {
        let rows = sess.tape.shape(concat)[0];
        let mut idx = Vec::with_capacity(rows);
        for (modality, len) in tags {
            for _ in 0..*len {
                idx.push(modality.index());
            }
        }
        if idx.len() != rows {
            return Err(err!(Contract, "tags cover {} rows, concat has {rows}", idx.len()));
        }
        let table = sess.p(self.segment_table);
        let seg = sess.tape.gather_rows(table, &idx)?;
        sess.tape.add(concat, seg)
    }

    /// Full fusion: concat -> segment embeddings -> task row -> attention
    /// layers -> mean over rows.
    pub fn fuse(
        &self,
        sess: &mut Session<'_>,
        features: &[SemanticFeatures],
        task_table: ParamId,
        num_tasks: usize,
    ) -> Result<FusedFeatures> {
        let task_id = features.first().map(|f| f.task_id).unwrap_or(0);
        let (cat, tags) = self.concat_features(sess, features)?;
        let seg = self.add_segment_embeddings(sess, cat, &tags)?;
        if task_id >= num_tasks {
            return Err(err!(Lookup, "task id {task_id} not registered ({num_tasks} tasks)"));
        }
        let table = sess.p(task_table);
        let trow = sess.tape.gather_rows(table, &[task_id])?;
        let with_task = sess.tape.concat_rows(&[seg, trow])?;
        let out = self.layers.forward(sess, with_task)?;
        let fused = sess.tape.mean_rows(out)?;
        Ok(FusedFeatures {
            var: fused,
            task_id,
            source_lengths: tags.iter().map(|(_, l)| *l).collect(),
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = alloc::vec![self.segment_table];
        ids.extend(self.layers.param_ids());
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttnScale;
    use crate::tensor::Tensor;
    use alloc::vec;

    const P: usize = 8;

    fn build(seed: u64) -> (ParamStore, FusionModule, ParamId) {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::seeded(seed);
        let attn = AttentionConfig::new(P, 2, 2 * P, AttnScale::SeqWidth).unwrap();
        let fusion = FusionModule::init(&mut store, "fusion", attn, 3, &mut rng).unwrap();
        let task_table = store.embedding("task_table", 2, P, &mut rng).unwrap();
        (store, fusion, task_table)
    }

    fn feats(
        sess: &mut Session<'_>,
        rows: usize,
        modality: Modality,
        task_id: usize,
        seed: u64,
    ) -> SemanticFeatures {
        let mut rng = crate::rng::seeded(seed);
        let data: vec::Vec<f64> =
            (0..rows * P).map(|_| crate::rng::uniform(&mut rng, -1.0, 1.0)).collect();
        let var = sess.input(Tensor::new(vec![rows, P], data).unwrap());
        SemanticFeatures { var, rows, modality, task_id }
    }

    #[test]
    fn concat_tracks_lengths_and_tags() {
        let (store, fusion, _) = build(1);
        let mut sess = Session::new(&store);
        let a = feats(&mut sess, 3, Modality::Image, 0, 10);
        let b = feats(&mut sess, 5, Modality::Text, 0, 11);
        let (cat, tags) = fusion.concat_features(&mut sess, &[a, b]).unwrap();
        assert_eq!(sess.tape.shape(cat), &[8, P]);
        assert_eq!(tags, vec![(Modality::Image, 3), (Modality::Text, 5)]);
    }

    #[test]
    fn single_feature_concat_is_identity() {
        let (store, fusion, _) = build(1);
        let mut sess = Session::new(&store);
        let a = feats(&mut sess, 4, Modality::Video, 0, 12);
        let before = sess.tape.data(a.var).to_vec();
        let (cat, _) = fusion.concat_features(&mut sess, &[a]).unwrap();
        assert_eq!(sess.tape.data(cat), before.as_slice());
    }

    #[test]
    fn empty_list_is_contract_error() {
        let (store, fusion, _) = build(1);
        let mut sess = Session::new(&store);
        assert!(matches!(
            fusion.concat_features(&mut sess, &[]),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn mixed_task_ids_are_rejected() {
        let (store, fusion, _) = build(1);
        let mut sess = Session::new(&store);
        let a = feats(&mut sess, 2, Modality::Image, 0, 13);
        let b = feats(&mut sess, 2, Modality::Text, 1, 14);
        assert!(fusion.concat_features(&mut sess, &[a, b]).is_err());
    }

    #[test]
    fn zero_segment_table_is_identity() {
        let (mut store, fusion, _) = build(2);
        store.value_mut(fusion.segment_table).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut sess = Session::new(&store);
        let a = feats(&mut sess, 3, Modality::Image, 0, 15);
        let before = sess.tape.data(a.var).to_vec();
        let (cat, tags) = fusion.concat_features(&mut sess, &[a]).unwrap();
        let seg = fusion.add_segment_embeddings(&mut sess, cat, &tags).unwrap();
        assert_eq!(sess.tape.data(seg), before.as_slice());
    }

    #[test]
    fn segment_rows_add_exactly_their_difference() {
        // Two modalities with identical feature rows: outputs differ by
        // exactly the segment-row difference.
        let (store, fusion, _) = build(3);
        let mut sess = Session::new(&store);
        let data: vec::Vec<f64> = (0..2 * P).map(|i| i as f64 * 0.1).collect();
        let va = sess.input(Tensor::new(vec![2, P], data.clone()).unwrap());
        let vb = sess.input(Tensor::new(vec![2, P], data).unwrap());
        let a = SemanticFeatures { var: va, rows: 2, modality: Modality::Image, task_id: 0 };
        let b = SemanticFeatures { var: vb, rows: 2, modality: Modality::Speech, task_id: 0 };
        let (cat, tags) = fusion.concat_features(&mut sess, &[a, b]).unwrap();
        let seg = fusion.add_segment_embeddings(&mut sess, cat, &tags).unwrap();
        let d = sess.tape.data(seg);
        let table = store.value(fusion.segment_table).data();
        for j in 0..P {
            let got = d[j] - d[2 * P + j]; // row 0 (image) vs row 2 (speech)
            let want =
                table[Modality::Image.index() * P + j] - table[Modality::Speech.index() * P + j];
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_emits_single_row_with_task_count() {
        let (store, fusion, task_table) = build(4);
        let mut sess = Session::new(&store);
        let a = feats(&mut sess, 3, Modality::Image, 1, 16);
        let b = feats(&mut sess, 5, Modality::Text, 1, 17);
        let fused = fusion.fuse(&mut sess, &[a, b], task_table, 2).unwrap();
        assert_eq!(sess.tape.shape(fused.var), &[1, P]);
        assert_eq!(fused.unfused_rows(), 9); // 3 + 5 + task row
        assert_eq!(fused.source_lengths, vec![3, 5]);
    }

    #[test]
    fn zero_weight_collapse_is_mean_of_double_layer_norm() {
        let (mut store, fusion, task_table) = build(5);
        // Zero all attention weights, segment and task tables; LN gains
        // stay 1, biases 0. Each layer then maps row r to LN(LN(r)).
        store.value_mut(fusion.segment_table).data_mut().iter_mut().for_each(|v| *v = 0.0);
        store.value_mut(task_table).data_mut().iter_mut().for_each(|v| *v = 0.0);
        for layer in &fusion.layers.layers {
            for ids in [&layer.wq, &layer.wk, &layer.wv] {
                for id in ids {
                    store.value_mut(*id).data_mut().iter_mut().for_each(|v| *v = 0.0);
                }
            }
            for id in [layer.wo, layer.ffn_w1, layer.ffn_w2] {
                store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut sess = Session::new(&store);
        let a = feats(&mut sess, 4, Modality::Image, 0, 18);
        let rows_in = sess.tape.data(a.var).to_vec();
        let fused = fusion.fuse(&mut sess, &[a], task_table, 2).unwrap();

        let ln = |x: &[f64]| {
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / libm::sqrt(var + crate::attention::LN_EPS);
            x.iter().map(|v| (v - mean) * inv).collect::<vec::Vec<f64>>()
        };
        let mut rows: vec::Vec<vec::Vec<f64>> =
            (0..4).map(|r| rows_in[r * P..(r + 1) * P].to_vec()).collect();
        rows.push(vec![0.0; P]); // zeroed task row
        for _ in 0..3 {
            for row in rows.iter_mut() {
                *row = ln(&ln(row));
            }
        }
        let mut expect = vec![0.0; P];
        for row in &rows {
            for j in 0..P {
                expect[j] += row[j] / 5.0;
            }
        }
        for (g, e) in sess.tape.data(fused.var).iter().zip(&expect) {
            assert!((g - e).abs() < 1e-9, "{g} vs {e}");
        }
    }

    fn fuse_digest(
        store: &ParamStore,
        fusion: &FusionModule,
        task_table: ParamId,
        blocks: &[(Modality, vec::Vec<f64>)],
    ) -> vec::Vec<f64> {
        let mut sess = Session::new(store);
        let feats: vec::Vec<SemanticFeatures> = blocks
            .iter()
            .map(|(m, data)| {
                let rows = data.len() / P;
                let var = sess.input(Tensor::new(vec![rows, P], data.clone()).unwrap());
                SemanticFeatures { var, rows, modality: *m, task_id: 0 }
            })
            .collect();
        let fused = fusion.fuse(&mut sess, &feats, task_table, 1).unwrap();
        sess.tape.data(fused.var).to_vec()
    }

    #[test]
    fn within_modality_row_permutation_leaves_fusion_invariant() {
        let (store, fusion, task_table) = build(6);
        let mut rng = crate::rng::seeded(77);
        let img: vec::Vec<f64> =
            (0..4 * P).map(|_| crate::rng::uniform(&mut rng, -1.0, 1.0)).collect();
        let txt: vec::Vec<f64> =
            (0..3 * P).map(|_| crate::rng::uniform(&mut rng, -1.0, 1.0)).collect();
        let base = fuse_digest(
            &store,
            &fusion,
            task_table,
            &[(Modality::Image, img.clone()), (Modality::Text, txt.clone())],
        );
        // Rotate the image rows: (0,1,2,3) -> (2,0,3,1).
        let perm = [2usize, 0, 3, 1];
        let mut img_p = vec![0.0; 4 * P];
        for (dst, src) in perm.iter().enumerate() {
            img_p[dst * P..(dst + 1) * P].copy_from_slice(&img[src * P..(src + 1) * P]);
        }
        let permuted = fuse_digest(
            &store,
            &fusion,
            task_table,
            &[(Modality::Image, img_p), (Modality::Text, txt)],
        );
        for (a, b) in base.iter().zip(&permuted) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn whole_block_reorder_leaves_fusion_invariant() {
        let (store, fusion, task_table) = build(7);
        let mut rng = crate::rng::seeded(88);
        let img: vec::Vec<f64> =
            (0..2 * P).map(|_| crate::rng::uniform(&mut rng, -1.0, 1.0)).collect();
        let txt: vec::Vec<f64> =
            (0..5 * P).map(|_| crate::rng::uniform(&mut rng, -1.0, 1.0)).collect();
        let ab = fuse_digest(
            &store,
            &fusion,
            task_table,
            &[(Modality::Image, img.clone()), (Modality::Text, txt.clone())],
        );
        let ba = fuse_digest(
            &store,
            &fusion,
            task_table,
            &[(Modality::Text, txt), (Modality::Image, img)],
        );
        for (a, b) in ab.iter().zip(&ba) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

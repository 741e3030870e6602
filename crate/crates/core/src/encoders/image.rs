//! Image semantic encoder: a strided stem convolution followed by two
//! residual blocks (conv–norm–GeLU–conv plus skip), with the final feature
//! map reshaped to one row per spatial position.

use alloc::format;
use alloc::vec::Vec;

use crate::attention::LN_EPS;
use crate::config::ImageGeometry;
use crate::encoders::{Modality, SemanticFeatures};
use crate::error::{err, Result};
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::ChaCha8Rng;
use crate::tape::Var;
use crate::tensor::Tensor;

fn conv_out(extent: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding - kernel) / stride + 1
}

/// One residual block: `out = conv2(gelu(norm(conv1(x)))) + skip(x)`.
/// With stride 1 the skip is the identity; a strided block projects the
/// skip with a 1x1 convolution.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1_k: ParamId,
    pub conv1_b: ParamId,
    pub norm_gain: ParamId,
    pub norm_bias: ParamId,
    pub conv2_k: ParamId,
    pub conv2_b: ParamId,
    pub skip: Option<(ParamId, ParamId)>,
    pub stride: usize,
}

impl ResidualBlock {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan = channels * 9;
        let skip = if stride == 1 {
            None
        } else {
            Some((
                store.xavier_shaped(
                    format!("{prefix}.skip.k"),
                    alloc::vec![channels, channels, 1, 1],
                    channels,
                    channels,
                    rng,
                )?,
                store.zeros(format!("{prefix}.skip.b"), alloc::vec![channels])?,
            ))
        };
        Ok(ResidualBlock {
            conv1_k: store.xavier_shaped(
                format!("{prefix}.conv1.k"),
                alloc::vec![channels, channels, 3, 3],
                fan,
                fan,
                rng,
            )?,
            conv1_b: store.zeros(format!("{prefix}.conv1.b"), alloc::vec![channels])?,
            norm_gain: store.ones(format!("{prefix}.norm.gain"), alloc::vec![channels])?,
            norm_bias: store.zeros(format!("{prefix}.norm.bias"), alloc::vec![channels])?,
            conv2_k: store.xavier_shaped(
                format!("{prefix}.conv2.k"),
                alloc::vec![channels, channels, 3, 3],
                fan,
                fan,
                rng,
            )?,
            conv2_b: store.zeros(format!("{prefix}.conv2.b"), alloc::vec![channels])?,
            skip,
            stride,
        })
    }

    /// `x: [C, H, W] -> [C, H/stride, W/stride]`.
    pub fn forward(&self, sess: &mut Session<'_>, x: Var) -> Result<Var> {
        let shape = sess.tape.shape(x).to_vec();
        let (h, w) = (shape[1], shape[2]);
        let (oh, ow) = (conv_out(h, 3, self.stride, 1), conv_out(w, 3, self.stride, 1));

        let k1 = sess.p(self.conv1_k);
        let y = sess.tape.conv2d(x, k1, self.stride, 1)?;
        let rows = sess.tape.spatial_to_rows(y)?;
        let b1 = sess.p(self.conv1_b);
        let rows = sess.tape.add(rows, b1)?;
        let (g, b) = (sess.p(self.norm_gain), sess.p(self.norm_bias));
        let rows = sess.tape.layer_norm(rows, g, b, LN_EPS)?;
        let rows = sess.tape.gelu(rows)?;
        let mid = sess.tape.rows_to_spatial(rows, oh, ow)?;

        let k2 = sess.p(self.conv2_k);
        let y2 = sess.tape.conv2d(mid, k2, 1, 1)?;
        let y2r = sess.tape.spatial_to_rows(y2)?;
        let b2 = sess.p(self.conv2_b);
        let y2r = sess.tape.add(y2r, b2)?;

        let skip_rows = match self.skip {
            None => sess.tape.spatial_to_rows(x)?,
            Some((sk, sb)) => {
                let skv = sess.p(sk);
                let s = sess.tape.conv2d(x, skv, self.stride, 0)?;
                let sr = sess.tape.spatial_to_rows(s)?;
                let sbv = sess.p(sb);
                sess.tape.add(sr, sbv)?
            }
        };
        let out_rows = sess.tape.add(y2r, skip_rows)?;
        sess.tape.rows_to_spatial(out_rows, oh, ow)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = alloc::vec![
            self.conv1_k,
            self.conv1_b,
            self.norm_gain,
            self.norm_bias,
            self.conv2_k,
            self.conv2_b,
        ];
        if let Some((k, b)) = self.skip {
            ids.push(k);
            ids.push(b);
        }
        ids
    }
}

#[derive(Debug, Clone)]
pub struct ImageEncoder {
    pub stem_k: ParamId,
    pub stem_b: ParamId,
    pub blocks: Vec<ResidualBlock>,
    geom: ImageGeometry,
    width: usize,
}

impl ImageEncoder {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        geom: ImageGeometry,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let stem_fan_in = geom.channels * 9;
        let stem_fan_out = width * 9;
        Ok(ImageEncoder {
            stem_k: store.xavier_shaped(
                format!("{prefix}.stem.k"),
                alloc::vec![width, geom.channels, 3, 3],
                stem_fan_in,
                stem_fan_out,
                rng,
            )?,
            stem_b: store.zeros(format!("{prefix}.stem.b"), alloc::vec![width])?,
            blocks: alloc::vec![
                ResidualBlock::init(store, &format!("{prefix}.block0"), width, 2, rng)?,
                ResidualBlock::init(store, &format!("{prefix}.block1"), width, 1, rng)?,
            ],
            geom,
            width,
        })
    }

    /// Feature rows L_I produced for the configured geometry.
    pub fn feature_len(geom: &ImageGeometry) -> usize {
        let h = conv_out(conv_out(geom.height, 3, 2, 1), 3, 2, 1);
        let w = conv_out(conv_out(geom.width, 3, 2, 1), 3, 2, 1);
        h * w
    }

    pub fn forward(
        &self,
        sess: &mut Session<'_>,
        image: &Tensor,
        task_id: usize,
    ) -> Result<SemanticFeatures> {
        let want = [self.geom.channels, self.geom.height, self.geom.width];
        if image.shape() != want {
            return Err(err!(
                Dim,
                "image shape {:?} does not match configured {:?}",
                image.shape(),
                want
            ));
        }
        let x = sess.input(image.clone());
        let (h1, w1) = (conv_out(self.geom.height, 3, 2, 1), conv_out(self.geom.width, 3, 2, 1));
        let stem_k = sess.p(self.stem_k);
        let y = sess.tape.conv2d(x, stem_k, 2, 1)?;
        let rows = sess.tape.spatial_to_rows(y)?;
        let stem_b = sess.p(self.stem_b);
        let rows = sess.tape.add(rows, stem_b)?;
        let mut chw = sess.tape.rows_to_spatial(rows, h1, w1)?;
        for block in &self.blocks {
            chw = block.forward(sess, chw)?;
        }
        let features = sess.tape.spatial_to_rows(chw)?;
        let rows = sess.tape.shape(features)[0];
        debug_assert_eq!(rows, Self::feature_len(&self.geom));
        debug_assert_eq!(sess.tape.shape(features)[1], self.width);
        Ok(SemanticFeatures { var: features, rows, modality: Modality::Image, task_id })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = alloc::vec![self.stem_k, self.stem_b];
        for b in &self.blocks {
            ids.extend(b.param_ids());
        }
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn build(width: usize) -> (ParamStore, ImageEncoder) {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::seeded(10);
        let e =
            ImageEncoder::init(&mut store, "img", ImageGeometry::default(), width, &mut rng)
                .unwrap();
        (store, e)
    }

    #[test]
    fn sixteen_square_input_yields_sixteen_rows() {
        // 16x16 -> stem stride 2 -> 8x8 -> block stride 2 -> 4x4 -> 16 rows.
        let (store, enc) = build(8);
        let mut sess = Session::new(&store);
        let img = Tensor::filled(vec![3, 16, 16], 0.4);
        let f = enc.forward(&mut sess, &img, 0).unwrap();
        assert_eq!(f.rows, 16);
        assert_eq!(sess.tape.shape(f.var), &[16, 8]);
        assert_eq!(ImageEncoder::feature_len(&ImageGeometry::default()), 16);
    }

    #[test]
    fn zero_image_zero_biases_gives_zero_features() {
        let (store, enc) = build(8);
        let mut sess = Session::new(&store);
        let img = Tensor::zeros(vec![3, 16, 16]);
        let f = enc.forward(&mut sess, &img, 0).unwrap();
        for v in sess.tape.data(f.var) {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn geometry_mismatch_is_dimension_error() {
        let (store, enc) = build(8);
        let mut sess = Session::new(&store);
        let img = Tensor::zeros(vec![3, 8, 8]);
        assert!(matches!(enc.forward(&mut sess, &img, 0), Err(crate::Error::Dim(_))));
    }

    #[test]
    fn zeroed_stride1_block_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::seeded(3);
        let block = ResidualBlock::init(&mut store, "b", 4, 1, &mut rng).unwrap();
        for id in [block.conv1_k, block.conv1_b, block.norm_bias, block.conv2_k, block.conv2_b] {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut sess = Session::new(&store);
        let mut rng2 = crate::rng::seeded(4);
        let data: Vec<f64> = (0..4 * 5 * 5).map(|_| crate::rng::uniform(&mut rng2, -1.0, 1.0)).collect();
        let x = sess.input(Tensor::new(vec![4, 5, 5], data.clone()).unwrap());
        let y = block.forward(&mut sess, x).unwrap();
        assert_eq!(sess.tape.data(y), data.as_slice());
    }

    #[test]
    fn encoder_parameter_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::seeded(6);
        let geom = ImageGeometry { channels: 2, height: 8, width: 8 };
        let enc = ImageEncoder::init(&mut store, "img", geom, 4, &mut rng).unwrap();
        let mut rng2 = crate::rng::seeded(7);
        let img = Tensor::new(
            vec![2, 8, 8],
            (0..128).map(|_| crate::rng::uniform(&mut rng2, -1.0, 1.0)).collect(),
        )
        .unwrap();
        let loss_of = |store: &ParamStore| -> f64 {
            let mut sess = Session::new(store);
            let f = enc.forward(&mut sess, &img, 0).unwrap();
            let sq = sess.tape.mul(f.var, f.var).unwrap();
            let l = sess.tape.sum_all(sq).unwrap();
            sess.tape.data(l)[0]
        };
        let grads = {
            let mut sess = Session::new(&store);
            let f = enc.forward(&mut sess, &img, 0).unwrap();
            let sq = sess.tape.mul(f.var, f.var).unwrap();
            let l = sess.tape.sum_all(sq).unwrap();
            sess.tape.backward(l).unwrap();
            sess.gradients()
        };
        let ids = enc.param_ids();
        let report =
            crate::gradcheck::check_store_gradients(&mut store, &ids, &grads, |s| Ok(loss_of(s)))
                .unwrap();
        assert!(report.passed(), "max rel err {:.3e}", report.max_rel_err);
    }
}

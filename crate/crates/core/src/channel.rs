//! Channel encoder/decoder MLPs and the physical channel simulation.
//!
//! The channel encoder compresses `L x P` features into `L x d` symbols
//! (d < P) and power-normalizes them; the simulated channel applies AWGN
//! or flat Rayleigh fading plus complex Gaussian noise; the decoder
//! reconstructs `L x P` features.
//!
//! Noise and fading enter the tape as constants: gradients flow through
//! the channel into the encoder, but never into the noise itself.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{err, Result};
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::ChaCha8Rng;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    #[default]
    Awgn,
    Rayleigh,
}

impl ChannelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            ChannelKind::Awgn => 0,
            ChannelKind::Rayleigh => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub snr_db: f64,
    /// Seed callers use to derive the noise RNG for a run.
    pub seed: u64,
    /// Rayleigh only: divide by the fading coefficient at the receiver
    /// (perfect CSI).
    pub equalize: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig { kind: ChannelKind::Awgn, snr_db: 12.0, seed: 0, equalize: true }
    }
}

impl ChannelConfig {
    /// Noise variance per real dimension for a given signal power:
    /// `sigma^2 = P_s / 10^(snr_db / 10)`.
    pub fn noise_variance(&self, signal_power: f64) -> f64 {
        signal_power / libm::pow(10.0, self.snr_db / 10.0)
    }
}

/// Power-normalized block of transmitted symbols.
#[derive(Debug, Clone, Copy)]
pub struct SymbolBlock {
    pub var: Var,
    pub rows: usize,
    pub width: usize,
    /// Mean square per symbol after normalization (1.0, or the nominal 1.0
    /// for a degenerate all-zero block).
    pub signal_power: f64,
    pub degenerate: bool,
}

/// Two-layer MLP compressor plus two-layer MLP reconstructor.
#[derive(Debug, Clone)]
pub struct ChannelCoders {
    pub enc_w1: ParamId,
    pub enc_b1: ParamId,
    pub enc_w2: ParamId,
    pub enc_b2: ParamId,
    pub dec_w1: ParamId,
    pub dec_b1: ParamId,
    pub dec_w2: ParamId,
    pub dec_b2: ParamId,
    width: usize,
    compressed: usize,
}

impl ChannelCoders {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        compressed: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if compressed >= width {
            return Err(err!(
                Config,
                "compressed width {compressed} must be smaller than feature width {width}"
            ));
        }
        let half = width / 2;
        Ok(ChannelCoders {
            enc_w1: store.xavier(format!("{prefix}.enc.w1"), width, half, rng)?,
            enc_b1: store.zeros(format!("{prefix}.enc.b1"), alloc::vec![half])?,
            enc_w2: store.xavier(format!("{prefix}.enc.w2"), half, compressed, rng)?,
            enc_b2: store.zeros(format!("{prefix}.enc.b2"), alloc::vec![compressed])?,
            dec_w1: store.xavier(format!("{prefix}.dec.w1"), compressed, half, rng)?,
            dec_b1: store.zeros(format!("{prefix}.dec.b1"), alloc::vec![half])?,
            dec_w2: store.xavier(format!("{prefix}.dec.w2"), half, width, rng)?,
            dec_b2: store.zeros(format!("{prefix}.dec.b2"), alloc::vec![width])?,
            width,
            compressed,
        })
    }

    /// Compress `[L, P]` features to a power-normalized `[L, d]` block.
    pub fn encode(&self, sess: &mut Session<'_>, features: Var) -> Result<SymbolBlock> {
        let (rows, p) = sess.tape.value(features).dims2()?;
        if p != self.width {
            return Err(err!(Dim, "channel encoder expects width {}, got {p}", self.width));
        }
        let (w1, b1) = (sess.p(self.enc_w1), sess.p(self.enc_b1));
        let h = sess.tape.matmul(features, w1)?;
        let h = sess.tape.add(h, b1)?;
        let h = sess.tape.gelu(h)?;
        let (w2, b2) = (sess.p(self.enc_w2), sess.p(self.enc_b2));
        let z = sess.tape.matmul(h, w2)?;
        let z = sess.tape.add(z, b2)?;
        let norm = sess.tape.power_norm(z)?;
        if norm.degenerate {
            log::warn!("channel encoder produced an all-zero block; transmitting zeros");
        }
        Ok(SymbolBlock {
            var: norm.var,
            rows,
            width: self.compressed,
            signal_power: 1.0,
            degenerate: norm.degenerate,
        })
    }

    /// Reconstruct `[L, P]` features from received `[L, d]` symbols.
    pub fn decode(&self, sess: &mut Session<'_>, received: Var) -> Result<Var> {
        let (_, d) = sess.tape.value(received).dims2()?;
        if d != self.compressed {
            return Err(err!(Dim, "channel decoder expects width {}, got {d}", self.compressed));
        }
        let (w1, b1) = (sess.p(self.dec_w1), sess.p(self.dec_b1));
        let h = sess.tape.matmul(received, w1)?;
        let h = sess.tape.add(h, b1)?;
        let h = sess.tape.gelu(h)?;
        let (w2, b2) = (sess.p(self.dec_w2), sess.p(self.dec_b2));
        let out = sess.tape.matmul(h, w2)?;
        sess.tape.add(out, b2)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        alloc::vec![
            self.enc_w1, self.enc_b1, self.enc_w2, self.enc_b2, self.dec_w1, self.dec_b1,
            self.dec_w2, self.dec_b2,
        ]
    }
}

/// One flat Rayleigh fading coefficient `h ~ CN(0, 1)`.
pub fn sample_fading(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let s = core::f64::consts::FRAC_1_SQRT_2;
    (s * crate::rng::normal(rng), s * crate::rng::normal(rng))
}

/// Pass a symbol block through the configured channel.
///
/// AWGN: `y = x + n`, `n ~ N(0, sigma^2)` per real symbol.
///
/// Rayleigh: consecutive reals form complex symbols; one flat-fading
/// coefficient `h ~ CN(0,1)` multiplies the whole block and complex
/// Gaussian noise with variance `sigma^2` per real component is added.
/// With `equalize` the receiver divides by `h` (perfect CSI), so the
/// received block is `x + n/h`.
pub fn apply_channel(
    sess: &mut Session<'_>,
    block: &SymbolBlock,
    cfg: &ChannelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    if !cfg.snr_db.is_finite() {
        return Err(err!(Numeric, "snr_db must be finite"));
    }
    let shape = sess.tape.shape(block.var).to_vec();
    let n: usize = shape.iter().product();
    let sigma2 = cfg.noise_variance(block.signal_power);
    let sigma = libm::sqrt(sigma2);

    match cfg.kind {
        ChannelKind::Awgn => {
            let noise: Vec<f64> = (0..n).map(|_| sigma * crate::rng::normal(rng)).collect();
            let noise = Tensor::new(shape, noise)?;
            sess.tape.add_const(block.var, &noise)
        }
        ChannelKind::Rayleigh => {
            let (hr, hi) = sample_fading(rng);
            // Complex noise, sigma^2 per real component.
            let pairs = n / 2 + n % 2;
            let mut noise = Vec::with_capacity(2 * pairs);
            for _ in 0..pairs {
                noise.push(sigma * crate::rng::normal(rng));
                noise.push(sigma * crate::rng::normal(rng));
            }
            if cfg.equalize {
                // y = (h x + n) / h = x + n / h.
                let h2 = hr * hr + hi * hi;
                let mut eq = Vec::with_capacity(n);
                for p in 0..pairs {
                    let (nr, ni) = (noise[2 * p], noise[2 * p + 1]);
                    eq.push((nr * hr + ni * hi) / h2);
                    eq.push((ni * hr - nr * hi) / h2);
                }
                eq.truncate(n);
                let eq = Tensor::new(shape, eq)?;
                sess.tape.add_const(block.var, &eq)
            } else {
                let faded = sess.tape.complex_scale_pairs(block.var, hr, hi)?;
                noise.truncate(n);
                let noise = Tensor::new(shape, noise)?;
                sess.tape.add_const(faded, &noise)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use alloc::vec;

    fn coders(width: usize, compressed: usize) -> (ParamStore, ChannelCoders) {
        let mut store = ParamStore::new();
        let mut rng = seeded(4);
        let c = ChannelCoders::init(&mut store, "chan", width, compressed, &mut rng).unwrap();
        (store, c)
    }

    fn random_block(sess: &mut Session<'_>, rows: usize, width: usize, seed: u64) -> SymbolBlock {
        let mut rng = seeded(seed);
        let data: Vec<f64> =
            (0..rows * width).map(|_| crate::rng::uniform(&mut rng, -1.0, 1.0)).collect();
        let x = sess.input(Tensor::new(vec![rows, width], data).unwrap());
        let norm = sess.tape.power_norm(x).unwrap();
        SymbolBlock { var: norm.var, rows, width, signal_power: 1.0, degenerate: false }
    }

    #[test]
    fn encoder_respects_configured_widths() {
        let (store, c) = coders(64, 32);
        let mut sess = Session::new(&store);
        let f = sess.input(Tensor::filled(vec![5, 64], 0.3));
        let block = c.encode(&mut sess, f).unwrap();
        assert_eq!(sess.tape.shape(block.var), &[5, 32]);
        let out = c.decode(&mut sess, block.var).unwrap();
        assert_eq!(sess.tape.shape(out), &[5, 64]);
    }

    #[test]
    fn compressed_width_must_be_smaller() {
        let mut store = ParamStore::new();
        let mut rng = seeded(0);
        assert!(ChannelCoders::init(&mut store, "c", 16, 16, &mut rng).is_err());
    }

    #[test]
    fn zero_input_zero_biases_is_degenerate() {
        let (store, c) = coders(16, 8);
        let mut sess = Session::new(&store);
        let f = sess.input(Tensor::zeros(vec![3, 16]));
        let block = c.encode(&mut sess, f).unwrap();
        assert!(block.degenerate);
        assert_eq!(sess.tape.data(block.var), &[0.0; 24]);
    }

    #[test]
    fn encoded_block_has_unit_mean_square() {
        let (store, c) = coders(16, 8);
        let mut sess = Session::new(&store);
        let mut rng = seeded(9);
        let data: Vec<f64> = (0..48).map(|_| crate::rng::uniform(&mut rng, -1.0, 1.0)).collect();
        let f = sess.input(Tensor::new(vec![3, 16], data).unwrap());
        let block = c.encode(&mut sess, f).unwrap();
        let d = sess.tape.data(block.var);
        let ms: f64 = d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64;
        assert!((ms - 1.0).abs() < 1e-9);
    }

    #[test]
    fn near_infinite_snr_awgn_is_identity() {
        let store = ParamStore::new();
        let mut sess = Session::new(&store);
        let block = random_block(&mut sess, 4, 8, 1);
        let cfg = ChannelConfig { kind: ChannelKind::Awgn, snr_db: 300.0, seed: 0, equalize: true };
        let mut rng = seeded(5);
        let y = apply_channel(&mut sess, &block, &cfg, &mut rng).unwrap();
        for (a, b) in sess.tape.data(y).iter().zip(sess.tape.data(block.var)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_db_unit_power_gives_unit_variance() {
        let cfg = ChannelConfig { kind: ChannelKind::Awgn, snr_db: 0.0, seed: 0, equalize: true };
        assert!((cfg.noise_variance(1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn awgn_empirical_snr_within_tolerance() {
        let store = ParamStore::new();
        let mut sess = Session::new(&store);
        let block = random_block(&mut sess, 125, 8, 2); // 1000 symbols
        let cfg = ChannelConfig { kind: ChannelKind::Awgn, snr_db: 10.0, seed: 0, equalize: true };
        let mut rng = seeded(3);
        // Accumulate noise power over many realizations of the same block.
        let mut signal_p = 0.0;
        let mut noise_p = 0.0;
        let mut count = 0usize;
        for _ in 0..100 {
            let y = apply_channel(&mut sess, &block, &cfg, &mut rng).unwrap();
            let x = sess.tape.data(block.var);
            for (yv, xv) in sess.tape.data(y).iter().zip(x) {
                signal_p += xv * xv;
                noise_p += (yv - xv) * (yv - xv);
                count += 1;
            }
        }
        let snr_db = 10.0 * libm::log10(signal_p / count as f64 / (noise_p / count as f64));
        assert!((snr_db - 10.0).abs() < 0.2, "empirical {snr_db:.3} dB");
    }

    #[test]
    fn rayleigh_equalized_noiseless_roundtrip() {
        let store = ParamStore::new();
        let mut sess = Session::new(&store);
        let block = random_block(&mut sess, 4, 7, 8); // odd symbol count
        let cfg =
            ChannelConfig { kind: ChannelKind::Rayleigh, snr_db: 300.0, seed: 0, equalize: true };
        let mut rng = seeded(21);
        let y = apply_channel(&mut sess, &block, &cfg, &mut rng).unwrap();
        for (a, b) in sess.tape.data(y).iter().zip(sess.tape.data(block.var)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rayleigh_unequalized_keeps_fading() {
        let store = ParamStore::new();
        let mut sess = Session::new(&store);
        let block = random_block(&mut sess, 4, 8, 8);
        let cfg =
            ChannelConfig { kind: ChannelKind::Rayleigh, snr_db: 300.0, seed: 0, equalize: false };
        let mut rng = seeded(21);
        let y = apply_channel(&mut sess, &block, &cfg, &mut rng).unwrap();
        let diff: f64 = sess
            .tape
            .data(y)
            .iter()
            .zip(sess.tape.data(block.var))
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 0.1, "fading should distort the block");
    }

    #[test]
    fn fading_magnitude_moments_match_rayleigh() {
        let mut rng = seeded(77);
        let n = 100_000;
        let mut mean = 0.0;
        let mut second = 0.0;
        for _ in 0..n {
            let (hr, hi) = sample_fading(&mut rng);
            let mag = libm::sqrt(hr * hr + hi * hi);
            mean += mag;
            second += mag * mag;
        }
        mean /= n as f64;
        second /= n as f64;
        let expect_mean = libm::sqrt(core::f64::consts::PI) / 2.0;
        assert!((mean - expect_mean).abs() / expect_mean < 0.01, "mean {mean:.4}");
        assert!((second - 1.0).abs() < 0.01, "second moment {second:.4}");
    }

    #[test]
    fn same_seed_reproduces_noise_bit_exactly() {
        let store = ParamStore::new();
        let run = || {
            let mut sess = Session::new(&store);
            let block = random_block(&mut sess, 3, 4, 6);
            let cfg = ChannelConfig {
                kind: ChannelKind::Rayleigh,
                snr_db: 6.0,
                seed: 0,
                equalize: true,
            };
            let mut rng = seeded(123);
            let y = apply_channel(&mut sess, &block, &cfg, &mut rng).unwrap();
            sess.tape.data(y).iter().map(|v| v.to_bits()).collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn trained_autoencoder_reconstructs_heldout_features() {
        // Noiseless encode->decode round trip after training on an
        // autoencoding objective. Features live on a low-dimensional
        // latent (rank 4 < d = 8), so the d-wide bottleneck suffices.
        use crate::adam::{Adam, AdamConfig};

        let (p, d, latent, rows) = (16usize, 8usize, 4usize, 8usize);
        let (mut store, coders) = {
            let mut store = ParamStore::new();
            let mut rng = seeded(100);
            let c = ChannelCoders::init(&mut store, "chan", p, d, &mut rng).unwrap();
            (store, c)
        };
        let mut gen_rng = seeded(200);
        let basis: Vec<f64> =
            (0..latent * p).map(|_| crate::rng::uniform(&mut gen_rng, -1.0, 1.0)).collect();
        let mut features = move |rng: &mut crate::rng::ChaCha8Rng| -> Tensor {
            let mut data = vec![0.0; rows * p];
            for r in 0..rows {
                let z: Vec<f64> =
                    (0..latent).map(|_| crate::rng::uniform(rng, -1.0, 1.0)).collect();
                for j in 0..p {
                    for (k, zv) in z.iter().enumerate() {
                        data[r * p + j] += zv * basis[k * p + j];
                    }
                }
            }
            Tensor::new(vec![rows, p], data).unwrap()
        };

        let mut adam = Adam::new(AdamConfig::with_lr(3e-3));
        let mut train_rng = seeded(300);
        for _ in 0..1500 {
            let f = features(&mut train_rng);
            let (grads, _) = {
                let mut sess = Session::new(&store);
                let fv = sess.input(f);
                let block = coders.encode(&mut sess, fv).unwrap();
                let decoded = coders.decode(&mut sess, block.var).unwrap();
                let loss = sess.tape.mse(decoded, fv).unwrap();
                sess.tape.backward(loss).unwrap();
                (sess.gradients(), sess.tape.data(loss)[0])
            };
            adam.step(&mut store, &grads).unwrap();
        }

        // Held-out features from a fresh stream.
        let mut heldout_rng = seeded(400);
        let f = features(&mut heldout_rng);
        let mut sess = Session::inference(&store);
        let fv = sess.input(f.clone());
        let block = coders.encode(&mut sess, fv).unwrap();
        let decoded = coders.decode(&mut sess, block.var).unwrap();
        let num: f64 = sess
            .tape
            .data(decoded)
            .iter()
            .zip(f.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let den: f64 = f.data().iter().map(|v| v * v).sum();
        let rel = libm::sqrt(num / den);
        assert!(rel < 0.1, "held-out relative reconstruction error {rel:.4}");
    }

    #[test]
    fn channel_noise_is_constant_for_gradients() {
        // Gradients flow through the channel to the input; the noise is a
        // constant. d(sum(y))/dx must be all-ones for AWGN.
        let store = ParamStore::new();
        let mut sess = Session::new(&store);
        let x = sess.input(Tensor::new(vec![2, 2], vec![0.4, -0.2, 0.9, 0.1]).unwrap().with_grad());
        let block = SymbolBlock { var: x, rows: 2, width: 2, signal_power: 1.0, degenerate: false };
        let cfg = ChannelConfig { kind: ChannelKind::Awgn, snr_db: 3.0, seed: 0, equalize: true };
        let mut rng = seeded(4);
        let y = apply_channel(&mut sess, &block, &cfg, &mut rng).unwrap();
        let loss = sess.tape.sum_all(y).unwrap();
        sess.tape.backward(loss).unwrap();
        assert_eq!(sess.tape.grad(x).unwrap(), &[1.0; 4]);
    }
}

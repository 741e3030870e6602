//! Central finite-difference gradient checking.
//!
//! Used both by unit tests (per-operation checks) and by the `gradcheck`
//! CLI command (whole-pipeline checks over every model parameter). The
//! differencing itself only replays the forward pass, so it is independent
//! of every backward rule it validates.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Step size for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Relative error bound for a passing check.
pub const FD_REL_TOL: f64 = 1e-4;
/// Absolute error floor below which a mismatch is ignored.
pub const FD_ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Worst normalized error seen: |analytic - fd| / max(|analytic|, |fd|).
    pub max_rel_err: f64,
    /// (input index, element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
    pub failures: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn entry_ok(analytic: f64, fd: f64) -> bool {
    let err = (analytic - fd).abs();
    err <= FD_ABS_FLOOR || err <= FD_REL_TOL * analytic.abs().max(fd.abs())
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    let err = (analytic - fd).abs();
    let scale = analytic.abs().max(fd.abs());
    if scale == 0.0 {
        0.0
    } else {
        err / scale
    }
}

/// Check d(loss)/d(inputs) for a scalar-valued tape program against
/// central finite differences, perturbing every element of every input.
///
/// `f` must be a deterministic function of the inputs (fix any noise
/// realization outside the closure).
pub fn check_gradients<F>(inputs: &[Tensor], mut f: F) -> Result<GradCheck>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    // Analytic gradients.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut eval = |work: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = work.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.data(loss)[0])
    };

    let mut report =
        GradCheck { max_rel_err: 0.0, worst: None, entries_checked: 0, failures: 0 };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = orig - FD_STEP;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            let a = analytic[i][j];
            report.entries_checked += 1;
            let r = rel_err(a, fd);
            if r > report.max_rel_err {
                report.max_rel_err = r;
                report.worst = Some((i, j));
            }
            if !entry_ok(a, fd) {
                report.failures += 1;
            }
        }
    }
    Ok(report)
}

/// Test helper: panic with context unless every entry passes.
#[cfg(any(test, feature = "std"))]
pub fn assert_grads_close<F>(inputs: &[Tensor], _tol_hint: f64, f: F)
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let report = check_gradients(inputs, f).expect("gradcheck forward failed");
    assert!(
        report.passed(),
        "{} of {} gradient entries failed finite-difference check (max rel err {:.3e} at {:?})",
        report.failures,
        report.entries_checked,
        report.max_rel_err,
        report.worst
    );
}

/// Check analytic parameter gradients against central finite differences
/// computed by perturbing the parameter store in place.
///
/// `grads` are the analytic gradients from one backward pass of the real
/// pipeline (parameters absent from `grads` are expected to have zero
/// gradient); `loss` replays the same forward deterministically.
pub fn check_store_gradients<F>(
    store: &mut crate::params::ParamStore,
    ids: &[crate::params::ParamId],
    grads: &[(crate::params::ParamId, Vec<f64>)],
    mut loss: F,
) -> Result<GradCheck>
where
    F: FnMut(&crate::params::ParamStore) -> Result<f64>,
{
    let mut report =
        GradCheck { max_rel_err: 0.0, worst: None, entries_checked: 0, failures: 0 };
    for (idx, &id) in ids.iter().enumerate() {
        let numel = store.value(id).numel();
        let analytic: Vec<f64> = grads
            .iter()
            .find(|(gid, _)| *gid == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| vec![0.0; numel]);
        for j in 0..numel {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + FD_STEP;
            let fp = loss(store)?;
            store.value_mut(id).data_mut()[j] = orig - FD_STEP;
            let fm = loss(store)?;
            store.value_mut(id).data_mut()[j] = orig;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            let a = analytic[j];
            report.entries_checked += 1;
            let r = rel_err(a, fd);
            if r > report.max_rel_err {
                report.max_rel_err = r;
                report.worst = Some((idx, j));
            }
            if !entry_ok(a, fd) {
                report.failures += 1;
            }
        }
    }
    Ok(report)
}

/// One named line of a gradcheck suite run.
#[derive(Debug, Clone)]
pub struct SuiteLine {
    pub name: String,
    pub max_rel_err: f64,
    pub entries: usize,
    pub passed: bool,
}

impl core::fmt::Display for SuiteLine {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "{:<26} {:>6} entries  max rel err {:.3e}  {}",
            self.name,
            self.entries,
            self.max_rel_err,
            if self.passed { "ok" } else { "FAILED" }
        )
    }
}

/// Per-operation finite-difference suite over random inputs in [-2, 2].
pub fn op_suite(seed: u64) -> Result<Vec<SuiteLine>> {
    let mut rng = crate::rng::seeded(seed);
    let mut lines = Vec::new();
    let rand_t = |shape: &[usize], rng: &mut crate::rng::ChaCha8Rng| {
        let n: usize = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| crate::rng::uniform(rng, -2.0, 2.0)).collect(),
        )
        .unwrap()
    };

    let mut run = |name: &str,
                   inputs: Vec<Tensor>,
                   f: &mut dyn FnMut(&mut Tape, &[Var]) -> Result<Var>|
     -> Result<()> {
        let report = check_gradients(&inputs, f)?;
        lines.push(SuiteLine {
            name: String::from(name),
            max_rel_err: report.max_rel_err,
            entries: report.entries_checked,
            passed: report.passed(),
        });
        Ok(())
    };

    let a = rand_t(&[3, 4], &mut rng);
    let b = rand_t(&[4, 2], &mut rng);
    run("matmul", vec![a, b], &mut |t, v| {
        let c = t.matmul(v[0], v[1])?;
        let s = t.mul(c, c)?;
        t.sum_all(s)
    })?;

    let a = rand_t(&[3, 4], &mut rng);
    let b = rand_t(&[3, 4], &mut rng);
    run("elementwise add/sub/mul", vec![a, b], &mut |t, v| {
        let s1 = t.add(v[0], v[1])?;
        let s2 = t.sub(v[0], v[1])?;
        let p = t.mul(s1, s2)?;
        t.sum_all(p)
    })?;

    let a = rand_t(&[4, 3], &mut rng);
    let row = rand_t(&[3], &mut rng);
    run("row broadcast", vec![a, row], &mut |t, v| {
        let s = t.add(v[0], v[1])?;
        let m = t.mul(s, v[0])?;
        t.sum_all(m)
    })?;

    let x = rand_t(&[4, 5], &mut rng);
    let probe = rand_t(&[4, 5], &mut rng);
    run("softmax_rows", vec![x, probe], &mut |t, v| {
        let y = t.softmax_rows(v[0])?;
        let p = t.mul(y, v[1])?;
        t.sum_all(p)
    })?;

    let x = rand_t(&[5, 8], &mut rng);
    let gain = rand_t(&[8], &mut rng);
    let bias = rand_t(&[8], &mut rng);
    let probe = rand_t(&[5, 8], &mut rng);
    run("layer_norm", vec![x, gain, bias, probe], &mut |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
        let p = t.mul(y, v[3])?;
        t.sum_all(p)
    })?;

    let x = rand_t(&[3, 4], &mut rng);
    run("gelu", vec![x], &mut |t, v| {
        let y = t.gelu(v[0])?;
        let s = t.mul(y, y)?;
        t.sum_all(s)
    })?;

    let x = rand_t(&[2, 5, 5], &mut rng);
    let k = rand_t(&[3, 2, 3, 3], &mut rng);
    run("conv2d", vec![x, k], &mut |t, v| {
        let y = t.conv2d(v[0], v[1], 2, 1)?;
        let s = t.mul(y, y)?;
        t.sum_all(s)
    })?;

    let x = rand_t(&[6, 2], &mut rng);
    let k = rand_t(&[3, 2, 3], &mut rng);
    run("causal_conv1d", vec![x, k], &mut |t, v| {
        let y = t.causal_conv1d(v[0], v[1])?;
        let s = t.mul(y, y)?;
        t.sum_all(s)
    })?;

    let x = rand_t(&[4, 3], &mut rng);
    run("power_norm", vec![x], &mut |t, v| {
        let y = t.power_norm(v[0])?;
        let g = t.gelu(y.var)?;
        t.sum_all(g)
    })?;

    let x = rand_t(&[3, 4], &mut rng);
    run("complex_scale_pairs", vec![x], &mut |t, v| {
        let y = t.complex_scale_pairs(v[0], 0.6, 0.8)?;
        let s = t.mul(y, y)?;
        t.sum_all(s)
    })?;

    let x = rand_t(&[4, 4], &mut rng);
    run("gather/concat/mean", vec![x], &mut |t, v| {
        let g1 = t.gather_rows(v[0], &[0, 2, 2])?;
        let g2 = t.gather_rows(v[0], &[1, 3, 0])?;
        let cat = t.concat_rows(&[g1, g2])?;
        let cols = t.concat_cols(&[cat, cat])?;
        let m = t.mean_rows(cols)?;
        let s = t.mul(m, m)?;
        t.sum_all(s)
    })?;

    let z = rand_t(&[5], &mut rng);
    run("cross_entropy", vec![z], &mut |t, v| t.cross_entropy(v[0], 2))?;

    let z = rand_t(&[6], &mut rng);
    run("bce_multilabel", vec![z], &mut |t, v| {
        t.bce_multilabel(v[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0])
    })?;

    let z = rand_t(&[5, 4], &mut rng);
    run("ctc_loss", vec![z], &mut |t, v| {
        let (loss, feasible) = t.ctc_loss(v[0], &[0, 2])?;
        assert!(feasible);
        Ok(loss)
    })?;

    Ok(lines)
}

/// Finite-difference check of every parameter gradient through the full
/// fused pipeline: all four modality encoders feeding the fusion module,
/// channel encoder, a fixed AWGN noise realization, channel decoder, task
/// head and cross-entropy loss.
pub fn full_pipeline_check(seed: u64) -> Result<GradCheck> {
    use crate::attention::{AttentionConfig, AttnScale};
    use crate::channel::{apply_channel, ChannelConfig, ChannelCoders, ChannelKind};
    use crate::config::{ImageGeometry, SpeechGeometry, TextGeometry, VideoGeometry};
    use crate::encoders::{ImageEncoder, SpeechEncoder, TextEncoder, VideoEncoder};
    use crate::fusion::FusionModule;
    use crate::params::{ParamStore, Session};
    use crate::tasks::{Head, HeadKind};

    let width = 8usize;
    let attn = AttentionConfig::new(width, 2, 2 * width, AttnScale::SeqWidth)?;
    let image_geom = ImageGeometry { channels: 2, height: 8, width: 8 };
    let text_geom = TextGeometry { vocab: 8, seq_len: 4, segments: 2 };
    let speech_geom =
        SpeechGeometry { filters: 4, frame: 16, hop: 8, sample_rate: 8000.0, kernel_width: 3 };
    let video_geom = VideoGeometry {
        frames: 2,
        channels: 1,
        height: 4,
        width: 4,
        tube_frames: 1,
        tube_height: 2,
        tube_width: 2,
    };

    let mut store = ParamStore::new();
    let mut rng = crate::rng::rng_from(seed, &[0x6C]);
    let image_enc = ImageEncoder::init(&mut store, "image", image_geom, width, &mut rng)?;
    let text_enc = TextEncoder::init(&mut store, "text", text_geom, attn, 1, &mut rng)?;
    let speech_enc = SpeechEncoder::init(&mut store, "speech", speech_geom, attn, 1, &mut rng)?;
    let video_enc = VideoEncoder::init(&mut store, "video", video_geom, attn, 1, &mut rng)?;
    let fusion = FusionModule::init(&mut store, "fusion", attn, 2, &mut rng)?;
    let coders = ChannelCoders::init(&mut store, "channel", width, 4, &mut rng)?;
    let task_table = store.embedding("tasks.table", 2, width, &mut rng)?;
    let head = Head::init(&mut store, "head", HeadKind::ClassVec, width, 3, &mut rng)?;

    // Fixed inputs.
    let mut drng = crate::rng::rng_from(seed, &[0xDA7A]);
    let image = Tensor::new(
        alloc::vec![2, 8, 8],
        (0..128).map(|_| crate::rng::uniform(&mut drng, -1.0, 1.0)).collect(),
    )?;
    let tokens = [2u32, 3, 1, 0];
    let segments = [0u32, 0, 1, 1];
    let waveform: Vec<f64> = (0..48).map(|_| crate::rng::uniform(&mut drng, -0.5, 0.5)).collect();
    let video = Tensor::new(
        alloc::vec![2, 1, 4, 4],
        (0..32).map(|_| crate::rng::uniform(&mut drng, -1.0, 1.0)).collect(),
    )?;
    let chan = ChannelConfig { kind: ChannelKind::Awgn, snr_db: 6.0, seed: 0, equalize: true };

    let run = |store: &ParamStore| -> Result<(f64, Vec<(crate::params::ParamId, Vec<f64>)>, bool)> {
        let mut sess = Session::new(store);
        let fbank = crate::fbank::compute_fbank(&waveform, &speech_geom)?;
        let feats = alloc::vec![
            image_enc.forward(&mut sess, &image, 1)?,
            text_enc.forward(&mut sess, &tokens, &segments, 1)?,
            speech_enc.forward(&mut sess, &fbank, 1)?,
            video_enc.forward(&mut sess, &video, 1)?,
        ];
        let fused = fusion.fuse(&mut sess, &feats, task_table, 2)?;
        let block = coders.encode(&mut sess, fused.var)?;
        // Same noise realization on every replay.
        let mut noise_rng = crate::rng::rng_from(seed, &[0x401_5E]);
        let received = apply_channel(&mut sess, &block, &chan, &mut noise_rng)?;
        let decoded = coders.decode(&mut sess, received)?;
        let logits = head.forward(&mut sess, decoded)?;
        let loss = sess.tape.cross_entropy(logits, 1)?;
        sess.tape.backward(loss)?;
        Ok((sess.tape.data(loss)[0], sess.gradients(), true))
    };

    let (_, grads, _) = run(&store)?;
    let ids: Vec<crate::params::ParamId> = store.ids().collect();
    check_store_gradients(&mut store, &ids, &grads, |s| run(s).map(|(l, _, _)| l))
}

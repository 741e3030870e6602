//! Reverse-mode automatic differentiation over a recording tape.
//!
//! Operations are evaluated eagerly and append one node each; node inputs
//! always precede the node itself, so creation order is a topological order
//! and [`Tape::backward`] is a single reverse sweep that visits every node
//! exactly once.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{err, Result};
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    Add,
    Sub,
    Mul,
}

/// Result of [`Tape::power_norm`]: the normalized block plus the
/// pre-normalization RMS. An all-zero input cannot be normalized and is
/// passed through as zeros with `degenerate` set.
#[derive(Debug, Clone, Copy)]
pub struct PowerNormOut {
    pub var: Var,
    pub pre_rms: f64,
    pub degenerate: bool,
}

enum Op {
    Leaf,
    Bin { kind: BinKind, a: Var, b: Var, broadcast: bool },
    AddN { xs: Vec<Var> },
    Matmul { a: Var, b: Var },
    Transpose { x: Var },
    SoftmaxRows { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, mean: Vec<f64>, inv_std: Vec<f64> },
    Gelu { x: Var },
    Conv2d { x: Var, k: Var, stride: usize, padding: usize },
    CausalConv1d { x: Var, k: Var },
    GatherRows { x: Var, indices: Vec<usize> },
    ConcatRows { xs: Vec<Var> },
    ConcatCols { xs: Vec<Var> },
    MeanRows { x: Var },
    SumAll { x: Var },
    Scale { x: Var, c: f64 },
    AddConst { x: Var },
    ComplexScalePairs { x: Var, re: f64, im: f64 },
    PowerNorm { x: Var, rms: f64, degenerate: bool },
    SpatialToRows { x: Var },
    RowsToSpatial { x: Var },
    Reshape { x: Var },
    CrossEntropy { logits: Var, label: usize },
    BceMultilabel { logits: Var, targets: Vec<f64> },
    CtcLoss { logits: Var, ext: Vec<usize>, log_probs: Vec<f64>, alphas: Vec<f64>, log_like: f64 },
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// Recording tape: an append-only list of operation nodes in topological
/// order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| libm::exp(x - m)).sum();
    m + libm::log(s)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input tensor. Gradients accumulate into it iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.nodes.push(Node { tensor, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad()
    }

    /// Reset every gradient on the tape to zero.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.tensor.zero_grad();
        }
    }

    fn t(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.t(*v).requires_grad())
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        let mut tensor = Tensor::new(shape, data).expect("internal: shape/data mismatch");
        tensor.set_requires_grad(requires_grad);
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    // ── elementwise ─────────────────────────────────────────────────────

    /// Pointwise binary op. Shapes must match exactly, or `b` may be a
    /// row vector (`[n]` or `[1, n]`) broadcast over the rows of an
    /// `m x n` matrix `a`.
    pub fn elementwise(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let (ash, bsh) = (self.t(a).shape().to_vec(), self.t(b).shape().to_vec());
        let broadcast = if ash == bsh {
            false
        } else {
            let (m, n) = self.t(a).dims2().map_err(|_| {
                err!(Dim, "elementwise shapes {:?} and {:?} are not compatible", ash, bsh)
            })?;
            let bn = self.t(b).numel();
            let row_like = matches!(bsh.as_slice(), [_] | [1, _]);
            if !(row_like && bn == n && m >= 1) {
                return Err(err!(
                    Dim,
                    "elementwise shapes {:?} and {:?} are not compatible",
                    ash,
                    bsh
                ));
            }
            true
        };
        let (ad, bd) = (self.t(a).data(), self.t(b).data());
        let n_cols = if broadcast { bd.len() } else { 0 };
        let mut out = Vec::with_capacity(ad.len());
        for (i, &x) in ad.iter().enumerate() {
            let y = if broadcast { bd[i % n_cols] } else { bd[i] };
            out.push(match kind {
                BinKind::Add => x + y,
                BinKind::Sub => x - y,
                BinKind::Mul => x * y,
            });
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(ash, out, rg, Op::Bin { kind, a, b, broadcast }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinKind::Mul, a, b)
    }

    /// Sum of same-shaped tensors.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(err!(Contract, "add_n needs at least one input"));
        }
        let shape = self.t(xs[0]).shape().to_vec();
        for v in xs {
            if self.t(*v).shape() != shape.as_slice() {
                return Err(err!(
                    Dim,
                    "add_n shapes differ: {:?} vs {:?}",
                    shape,
                    self.t(*v).shape()
                ));
            }
        }
        let mut out = vec![0.0; self.t(xs[0]).numel()];
        for v in xs {
            for (o, x) in out.iter_mut().zip(self.t(*v).data()) {
                *o += x;
            }
        }
        let rg = self.any_grad(xs);
        Ok(self.push(shape, out, rg, Op::AddN { xs: xs.to_vec() }))
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.t(a).dims2()?;
        let (k2, n) = self.t(b).dims2()?;
        if k != k2 {
            return Err(err!(
                Dim,
                "matmul inner extents differ: {:?} x {:?}",
                self.t(a).shape(),
                self.t(b).shape()
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_raw(self.t(a).data(), self.t(b).data(), m, k, n, &mut out);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(vec![m, n], out, rg, Op::Matmul { a, b }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.t(x).dims2()?;
        let xd = self.t(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = xd[i * n + j];
            }
        }
        let rg = self.t(x).requires_grad();
        Ok(self.push(vec![n, m], out, rg, Op::Transpose { x }))
    }

    // ── nonlinearities / normalization ──────────────────────────────────

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.t(x).dims2()?;
        if n < 1 {
            return Err(err!(Dim, "softmax_rows needs at least one column"));
        }
        if !self.t(x).is_finite() {
            return Err(err!(Numeric, "softmax_rows input contains non-finite values"));
        }
        let xd = self.t(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..n {
                let e = libm::exp(row[j] - mx);
                out[i * n + j] = e;
                s += e;
            }
            for j in 0..n {
                out[i * n + j] /= s;
            }
        }
        let rg = self.t(x).requires_grad();
        Ok(self.push(vec![m, n], out, rg, Op::SoftmaxRows { x }))
    }

    /// Per-row layer normalization followed by a per-column affine
    /// transform: `y = (x - mean) / sqrt(var + eps) * gain + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.t(x).dims2()?;
        if n < 2 {
            return Err(err!(Degenerate, "layer_norm needs at least 2 columns, got {n}"));
        }
        if self.t(gain).numel() != n || self.t(bias).numel() != n {
            return Err(err!(
                Dim,
                "layer_norm gain/bias must have {n} entries, got {}/{}",
                self.t(gain).numel(),
                self.t(bias).numel()
            ));
        }
        let xd = self.t(x).data();
        let (gd, bd) = (self.t(gain).data(), self.t(bias).data());
        let mut out = vec![0.0; m * n];
        let mut means = vec![0.0; m];
        let mut inv_stds = vec![0.0; m];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv_std = 1.0 / libm::sqrt(var + eps);
            means[i] = mean;
            inv_stds[i] = inv_std;
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * inv_std * gd[j] + bd[j];
            }
        }
        let rg = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            vec![m, n],
            out,
            rg,
            Op::LayerNorm { x, gain, bias, mean: means, inv_std: inv_stds },
        ))
    }

    /// Pointwise GeLU, tanh approximation
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let shape = self.t(x).shape().to_vec();
        let out: Vec<f64> = self.t(x).data().iter().map(|&v| gelu_scalar(v)).collect();
        let rg = self.t(x).requires_grad();
        Ok(self.push(shape, out, rg, Op::Gelu { x }))
    }

    // ── convolutions ────────────────────────────────────────────────────

    /// 2-d cross-correlation with zero padding.
    /// `x: [C, H, W]`, `kernels: [K, C, kh, kw]` -> `[K, H', W']`.
    pub fn conv2d(&mut self, x: Var, kernels: Var, stride: usize, padding: usize) -> Result<Var> {
        let (c, h, w) = dims3(self.t(x))?;
        let (k, c2, kh, kw) = dims4(self.t(kernels))?;
        if c2 != c {
            return Err(err!(
                Dim,
                "conv2d channel mismatch: input {:?} vs kernels {:?}",
                self.t(x).shape(),
                self.t(kernels).shape()
            ));
        }
        if stride == 0 {
            return Err(err!(Contract, "conv2d stride must be >= 1"));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(err!(
                Dim,
                "conv2d kernel {}x{} larger than padded input {}x{}",
                kh,
                kw,
                h + 2 * padding,
                w + 2 * padding
            ));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let xd = self.t(x).data();
        let kd = self.t(kernels).data();
        let mut out = vec![0.0; k * oh * ow];
        for kk in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for cc in 0..c {
                        for i in 0..kh {
                            let iy = (oy * stride + i) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for j in 0..kw {
                                let ix = (ox * stride + j) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += xd[(cc * h + iy as usize) * w + ix as usize]
                                    * kd[((kk * c + cc) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[(kk * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let rg = self.any_grad(&[x, kernels]);
        Ok(self.push(vec![k, oh, ow], out, rg, Op::Conv2d { x, k: kernels, stride, padding }))
    }

    /// Causal 1-d convolution over time: `x: [T, C]`, `kernels: [K, C, kw]`
    /// -> `[T, K]`; output at time `t` depends only on inputs at times
    /// `<= t` (implicit left zero padding of `kw - 1`).
    pub fn causal_conv1d(&mut self, x: Var, kernels: Var) -> Result<Var> {
        let (t_len, c) = self.t(x).dims2()?;
        let (k, c2, kw) = dims3(self.t(kernels))?;
        if c2 != c {
            return Err(err!(
                Dim,
                "causal_conv1d channel mismatch: input {:?} vs kernels {:?}",
                self.t(x).shape(),
                self.t(kernels).shape()
            ));
        }
        if kw < 1 {
            return Err(err!(Contract, "causal_conv1d kernel width must be >= 1"));
        }
        let xd = self.t(x).data();
        let kd = self.t(kernels).data();
        let mut out = vec![0.0; t_len * k];
        for t in 0..t_len {
            for o in 0..k {
                let mut acc = 0.0;
                for j in 0..kw {
                    let tt = t as isize - (kw - 1) as isize + j as isize;
                    if tt < 0 {
                        continue;
                    }
                    for cc in 0..c {
                        acc += xd[tt as usize * c + cc] * kd[(o * c + cc) * kw + j];
                    }
                }
                out[t * k + o] = acc;
            }
        }
        let rg = self.any_grad(&[x, kernels]);
        Ok(self.push(vec![t_len, k], out, rg, Op::CausalConv1d { x, k: kernels }))
    }

    // ── shape / selection ───────────────────────────────────────────────

    /// Select rows of a matrix by index (repeats allowed). Gradient
    /// scatter-adds back, so this doubles as embedding lookup.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.t(x).dims2()?;
        for &i in indices {
            if i >= m {
                return Err(err!(Lookup, "row index {i} out of range for {m} rows"));
            }
        }
        let xd = self.t(x).data();
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            out.extend_from_slice(&xd[i * n..(i + 1) * n]);
        }
        let rg = self.t(x).requires_grad();
        Ok(self.push(
            vec![indices.len(), n],
            out,
            rg,
            Op::GatherRows { x, indices: indices.to_vec() },
        ))
    }

    /// Stack matrices with equal widths on top of each other.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(err!(Contract, "concat_rows needs at least one input"));
        }
        let (_, n) = self.t(xs[0]).dims2()?;
        let mut rows = 0;
        for v in xs {
            let (m_i, n_i) = self.t(*v).dims2()?;
            if n_i != n {
                return Err(err!(Dim, "concat_rows width mismatch: {n_i} vs {n}"));
            }
            rows += m_i;
        }
        let mut out = Vec::with_capacity(rows * n);
        for v in xs {
            out.extend_from_slice(self.t(*v).data());
        }
        let rg = self.any_grad(xs);
        Ok(self.push(vec![rows, n], out, rg, Op::ConcatRows { xs: xs.to_vec() }))
    }

    /// Concatenate matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(err!(Contract, "concat_cols needs at least one input"));
        }
        let (m, _) = self.t(xs[0]).dims2()?;
        let mut width = 0;
        for v in xs {
            let (m_i, n_i) = self.t(*v).dims2()?;
            if m_i != m {
                return Err(err!(Dim, "concat_cols row-count mismatch: {m_i} vs {m}"));
            }
            width += n_i;
        }
        let mut out = vec![0.0; m * width];
        let mut col = 0;
        for v in xs {
            let (_, n_i) = self.t(*v).dims2()?;
            let d = self.t(*v).data();
            for i in 0..m {
                out[i * width + col..i * width + col + n_i]
                    .copy_from_slice(&d[i * n_i..(i + 1) * n_i]);
            }
            col += n_i;
        }
        let rg = self.any_grad(xs);
        Ok(self.push(vec![m, width], out, rg, Op::ConcatCols { xs: xs.to_vec() }))
    }

    /// Mean over the row dimension: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.t(x).dims2()?;
        if m == 0 {
            return Err(err!(Degenerate, "mean_rows over zero rows"));
        }
        let xd = self.t(x).data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += xd[i * n + j];
            }
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        let rg = self.t(x).requires_grad();
        Ok(self.push(vec![1, n], out, rg, Op::MeanRows { x }))
    }

    /// Sum of all entries, as a `[1]`-shaped scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.t(x).data().iter().sum();
        let rg = self.t(x).requires_grad();
        Ok(self.push(vec![1], vec![s], rg, Op::SumAll { x }))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let shape = self.t(x).shape().to_vec();
        let out: Vec<f64> = self.t(x).data().iter().map(|v| v * c).collect();
        let rg = self.t(x).requires_grad();
        Ok(self.push(shape, out, rg, Op::Scale { x, c }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.t(x).numel() {
            return Err(err!(
                Dim,
                "reshape {:?} -> {:?} changes element count",
                self.t(x).shape(),
                shape
            ));
        }
        let out = self.t(x).data().to_vec();
        let rg = self.t(x).requires_grad();
        Ok(self.push(shape, out, rg, Op::Reshape { x }))
    }

    /// `[C, H, W] -> [H*W, C]`: one row per spatial position.
    pub fn spatial_to_rows(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = dims3(self.t(x))?;
        let xd = self.t(x).data();
        let mut out = vec![0.0; c * h * w];
        for cc in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[(y * w + xx) * c + cc] = xd[(cc * h + y) * w + xx];
                }
            }
        }
        let rg = self.t(x).requires_grad();
        Ok(self.push(vec![h * w, c], out, rg, Op::SpatialToRows { x }))
    }

    /// Inverse of [`Tape::spatial_to_rows`]: `[h*w, C] -> [C, h, w]`.
    pub fn rows_to_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (m, c) = self.t(x).dims2()?;
        if m != h * w {
            return Err(err!(Dim, "rows_to_spatial: {m} rows cannot form {h}x{w}"));
        }
        let xd = self.t(x).data();
        let mut out = vec![0.0; c * h * w];
        for cc in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[(cc * h + y) * w + xx] = xd[(y * w + xx) * c + cc];
                }
            }
        }
        let rg = self.t(x).requires_grad();
        Ok(self.push(vec![c, h, w], out, rg, Op::RowsToSpatial { x }))
    }

    // ── channel-simulation primitives ───────────────────────────────────

    /// Add a constant tensor (e.g. a channel noise realization). Gradients
    /// pass through to `x` unchanged; nothing flows into the constant.
    pub fn add_const(&mut self, x: Var, constant: &Tensor) -> Result<Var> {
        if self.t(x).shape() != constant.shape() {
            return Err(err!(
                Dim,
                "add_const shapes differ: {:?} vs {:?}",
                self.t(x).shape(),
                constant.shape()
            ));
        }
        let shape = self.t(x).shape().to_vec();
        let out: Vec<f64> =
            self.t(x).data().iter().zip(constant.data()).map(|(a, b)| a + b).collect();
        let rg = self.t(x).requires_grad();
        Ok(self.push(shape, out, rg, Op::AddConst { x }))
    }

    /// Treat consecutive value pairs as complex numbers and multiply each
    /// by the constant `re + i*im` (a flat-fading coefficient). An odd
    /// trailing value is treated as purely real and keeps only the real
    /// part of the product.
    pub fn complex_scale_pairs(&mut self, x: Var, re: f64, im: f64) -> Result<Var> {
        if !(re.is_finite() && im.is_finite()) {
            return Err(err!(Numeric, "complex coefficient must be finite"));
        }
        let shape = self.t(x).shape().to_vec();
        let xd = self.t(x).data();
        let n = xd.len();
        let mut out = vec![0.0; n];
        let pairs = n / 2;
        for i in 0..pairs {
            let (xr, xi) = (xd[2 * i], xd[2 * i + 1]);
            out[2 * i] = re * xr - im * xi;
            out[2 * i + 1] = re * xi + im * xr;
        }
        if n % 2 == 1 {
            out[n - 1] = re * xd[n - 1];
        }
        let rg = self.t(x).requires_grad();
        Ok(self.push(shape, out, rg, Op::ComplexScalePairs { x, re, im }))
    }

    /// Normalize a block to unit mean-square power: `y = x / rms(x)`.
    pub fn power_norm(&mut self, x: Var) -> Result<PowerNormOut> {
        let shape = self.t(x).shape().to_vec();
        let xd = self.t(x).data();
        let n = xd.len();
        if n == 0 {
            return Err(err!(Degenerate, "power_norm over empty block"));
        }
        let ms = xd.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let degenerate = ms == 0.0;
        let rms = libm::sqrt(ms);
        let out: Vec<f64> =
            if degenerate { vec![0.0; n] } else { xd.iter().map(|v| v / rms).collect() };
        let rg = self.t(x).requires_grad();
        let var = self.push(shape, out, rg, Op::PowerNorm { x, rms, degenerate });
        Ok(PowerNormOut { var, pre_rms: rms, degenerate })
    }

    // ── losses ──────────────────────────────────────────────────────────

    /// `-log softmax(logits)[label]`, stable via log-sum-exp. Logits are
    /// treated as a flat vector.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let n = self.t(logits).numel();
        if label >= n {
            return Err(err!(Contract, "label {label} out of range for {n} classes"));
        }
        let zd = self.t(logits).data();
        let lse = logsumexp(zd);
        let loss = lse - zd[label];
        let rg = self.t(logits).requires_grad();
        Ok(self.push(vec![1], vec![loss], rg, Op::CrossEntropy { logits, label }))
    }

    /// Mean over labels of per-label sigmoid cross-entropy against 0/1
    /// targets, in the numerically stable form.
    pub fn bce_multilabel(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let n = self.t(logits).numel();
        if targets.len() != n {
            return Err(err!(Dim, "bce targets length {} vs {} logits", targets.len(), n));
        }
        if targets.iter().any(|t| *t != 0.0 && *t != 1.0) {
            return Err(err!(Contract, "bce targets must be 0/1"));
        }
        let zd = self.t(logits).data();
        let mut loss = 0.0;
        for (z, t) in zd.iter().zip(targets) {
            loss += z.max(0.0) - z * t + libm::log1p(libm::exp(-libm::fabs(*z)));
        }
        loss /= n as f64;
        let rg = self.t(logits).requires_grad();
        Ok(self.push(vec![1], vec![loss], rg, Op::BceMultilabel { logits, targets: targets.to_vec() }))
    }

    /// CTC loss over per-frame logits `[T, V+1]` (class `V` is the blank),
    /// computed with the forward (alpha) dynamic program in log space over
    /// the blank-interleaved label.
    ///
    /// Returns the loss and a feasibility flag: when the label cannot be
    /// aligned within `T` frames the loss is `+inf`, the flag is `false`
    /// and the backward pass contributes zero gradient.
    pub fn ctc_loss(&mut self, logits: Var, label: &[usize]) -> Result<(Var, bool)> {
        let (t_len, classes) = self.t(logits).dims2()?;
        if classes < 2 {
            return Err(err!(Contract, "ctc needs at least one symbol plus blank"));
        }
        if t_len == 0 {
            return Err(err!(Degenerate, "ctc over zero frames"));
        }
        let blank = classes - 1;
        for &l in label {
            if l >= blank {
                return Err(err!(Contract, "ctc label symbol {l} out of range (blank={blank})"));
            }
        }
        // Minimal frames: one per symbol plus one per adjacent repeat.
        let repeats = label.windows(2).filter(|w| w[0] == w[1]).count();
        let feasible = t_len >= label.len() + repeats && (!label.is_empty() || t_len >= 1);

        // Blank-interleaved extended label of length 2U+1.
        let s_len = 2 * label.len() + 1;
        let mut ext = vec![blank; s_len];
        for (i, &l) in label.iter().enumerate() {
            ext[2 * i + 1] = l;
        }

        // Per-row log-softmax.
        let zd = self.t(logits).data();
        let mut log_probs = vec![0.0; t_len * classes];
        for t in 0..t_len {
            let row = &zd[t * classes..(t + 1) * classes];
            let lse = logsumexp(row);
            for k in 0..classes {
                log_probs[t * classes + k] = row[k] - lse;
            }
        }

        let ninf = f64::NEG_INFINITY;
        let mut alphas = vec![ninf; t_len * s_len];
        if feasible {
            alphas[0] = log_probs[ext[0]];
            if s_len > 1 {
                alphas[1] = log_probs[ext[1]];
            }
            for t in 1..t_len {
                for s in 0..s_len {
                    let mut terms = [ninf; 3];
                    terms[0] = alphas[(t - 1) * s_len + s];
                    if s >= 1 {
                        terms[1] = alphas[(t - 1) * s_len + s - 1];
                    }
                    if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                        terms[2] = alphas[(t - 1) * s_len + s - 2];
                    }
                    let prev = logsumexp(&terms);
                    alphas[t * s_len + s] = if prev == ninf {
                        ninf
                    } else {
                        prev + log_probs[t * classes + ext[s]]
                    };
                }
            }
        }
        let mut tail = [ninf; 2];
        tail[0] = alphas[(t_len - 1) * s_len + s_len - 1];
        if s_len >= 2 {
            tail[1] = alphas[(t_len - 1) * s_len + s_len - 2];
        }
        let log_like = logsumexp(&tail);
        let feasible = feasible && log_like > ninf;
        let loss = if feasible { -log_like } else { f64::INFINITY };
        let rg = self.t(logits).requires_grad();
        let var = self.push(
            vec![1],
            vec![loss],
            rg,
            Op::CtcLoss { logits, ext, log_probs, alphas, log_like },
        );
        Ok((var, feasible))
    }

    /// Mean squared error between two same-shaped vars (composed from
    /// primitive ops).
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.t(a).numel();
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        let s = self.sum_all(sq)?;
        self.scale(s, 1.0 / n as f64)
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Every `requires_grad` tensor
    /// reachable from `loss` receives its accumulated gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.t(loss).numel() != 1 {
            return Err(err!(
                Contract,
                "backward needs a scalar loss, got shape {:?}",
                self.t(loss).shape()
            ));
        }
        if !self.t(loss).requires_grad() {
            // Loss does not depend on any gradient-tracked tensor.
            return Ok(());
        }
        self.nodes[loss.0].tensor.grad_mut()[0] += 1.0;

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.tensor.requires_grad() {
                continue;
            }
            let Some(g) = node.tensor.grad() else { continue };
            let deltas = backward_rule(&node.op, node.tensor.data(), g, before);
            for (target, delta) in deltas {
                if before[target].tensor.requires_grad() {
                    before[target].tensor.accumulate_grad(&delta);
                }
            }
        }
        Ok(())
    }
}

fn dims3(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(err!(Dim, "expected rank-3 tensor, got shape {:?}", s)),
    }
}

fn dims4(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [a, b, c, d] => Ok((*a, *b, *c, *d)),
        s => Err(err!(Dim, "expected rank-4 tensor, got shape {:?}", s)),
    }
}

fn gelu_scalar(x: f64) -> f64 {
    let u = GELU_C0 * (x + GELU_C1 * x * x * x);
    0.5 * x * (1.0 + libm::tanh(u))
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// `a (m x n) . b^T (n x k)` where `b` is `k x n`.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        for j in 0..k {
            let mut acc = 0.0;
            for p in 0..n {
                acc += a[i * n + p] * b[j * n + p];
            }
            out[i * k + j] += acc;
        }
    }
}

/// `a^T (k x m) . c (m x n)` where `a` is `m x k`.
fn matmul_tn(a: &[f64], c: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for p in 0..m {
        for i in 0..k {
            let av = a[p * k + i];
            let crow = &c[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * crow[j];
            }
        }
    }
}

/// Compute per-input gradient contributions for one node.
///
/// `out` is the node's forward value, `g` the upstream gradient, and
/// `before` the tape prefix holding all inputs (indices are strictly
/// smaller than the node's own).
fn backward_rule(op: &Op, out: &[f64], g: &[f64], before: &[Node]) -> Vec<(usize, Vec<f64>)> {
    let val = |v: Var| before[v.0].tensor.data();
    let shp = |v: Var| before[v.0].tensor.shape();
    let mut deltas: Vec<(usize, Vec<f64>)> = Vec::new();

    match op {
        Op::Leaf => {}
        Op::Bin { kind, a, b, broadcast } => {
            let (ad, bd) = (val(*a), val(*b));
            let n_cols = bd.len();
            let da: Vec<f64> = match kind {
                BinKind::Add => g.to_vec(),
                BinKind::Sub => g.to_vec(),
                BinKind::Mul => g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi * if *broadcast { bd[i % n_cols] } else { bd[i] })
                    .collect(),
            };
            let mut db = vec![0.0; bd.len()];
            for (i, gi) in g.iter().enumerate() {
                let j = if *broadcast { i % n_cols } else { i };
                db[j] += match kind {
                    BinKind::Add => *gi,
                    BinKind::Sub => -*gi,
                    BinKind::Mul => gi * ad[i],
                };
            }
            deltas.push((a.0, da));
            deltas.push((b.0, db));
        }
        Op::AddN { xs } => {
            for v in xs {
                deltas.push((v.0, g.to_vec()));
            }
        }
        Op::Matmul { a, b } => {
            let (m, k) = (shp(*a)[0], shp(*a)[1]);
            let n = shp(*b)[1];
            let mut da = vec![0.0; m * k];
            matmul_nt(g, val(*b), m, n, k, &mut da);
            let mut db = vec![0.0; k * n];
            matmul_tn(val(*a), g, m, k, n, &mut db);
            deltas.push((a.0, da));
            deltas.push((b.0, db));
        }
        Op::Transpose { x } => {
            let (m, n) = (shp(*x)[0], shp(*x)[1]);
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    dx[i * n + j] = g[j * m + i];
                }
            }
            deltas.push((x.0, dx));
        }
        Op::SoftmaxRows { x } => {
            let (m, n) = (shp(*x)[0], shp(*x)[1]);
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                let y = &out[i * n..(i + 1) * n];
                let gr = &g[i * n..(i + 1) * n];
                let dot: f64 = y.iter().zip(gr).map(|(yj, gj)| yj * gj).sum();
                for j in 0..n {
                    dx[i * n + j] = y[j] * (gr[j] - dot);
                }
            }
            deltas.push((x.0, dx));
        }
        Op::LayerNorm { x, gain, bias, mean, inv_std } => {
            let (m, n) = (shp(*x)[0], shp(*x)[1]);
            let (xd, gd) = (val(*x), val(*gain));
            let mut dx = vec![0.0; m * n];
            let mut dgain = vec![0.0; n];
            let mut dbias = vec![0.0; n];
            for i in 0..m {
                let gr = &g[i * n..(i + 1) * n];
                let row = &xd[i * n..(i + 1) * n];
                let (mu, is) = (mean[i], inv_std[i]);
                let mut mean_dxh = 0.0;
                let mut mean_dxh_xh = 0.0;
                for j in 0..n {
                    let xh = (row[j] - mu) * is;
                    let dxh = gr[j] * gd[j];
                    dgain[j] += gr[j] * xh;
                    dbias[j] += gr[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh;
                }
                mean_dxh /= n as f64;
                mean_dxh_xh /= n as f64;
                for j in 0..n {
                    let xh = (row[j] - mu) * is;
                    let dxh = gr[j] * gd[j];
                    dx[i * n + j] = is * (dxh - mean_dxh - xh * mean_dxh_xh);
                }
            }
            deltas.push((x.0, dx));
            deltas.push((gain.0, dgain));
            deltas.push((bias.0, dbias));
        }
        Op::Gelu { x } => {
            let xd = val(*x);
            let dx: Vec<f64> = xd
                .iter()
                .zip(g)
                .map(|(&v, gi)| {
                    let u = GELU_C0 * (v + GELU_C1 * v * v * v);
                    let t = libm::tanh(u);
                    let du = GELU_C0 * (1.0 + 3.0 * GELU_C1 * v * v);
                    gi * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                })
                .collect();
            deltas.push((x.0, dx));
        }
        Op::Conv2d { x, k, stride, padding } => {
            let (c, h, w) = (shp(*x)[0], shp(*x)[1], shp(*x)[2]);
            let (kn, _, kh, kw) = (shp(*k)[0], shp(*k)[1], shp(*k)[2], shp(*k)[3]);
            let oh = (h + 2 * padding - kh) / stride + 1;
            let ow = (w + 2 * padding - kw) / stride + 1;
            let (xd, kd) = (val(*x), val(*k));
            let mut dx = vec![0.0; c * h * w];
            let mut dk = vec![0.0; kn * c * kh * kw];
            for kk in 0..kn {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let go = g[(kk * oh + oy) * ow + ox];
                        if go == 0.0 {
                            continue;
                        }
                        for cc in 0..c {
                            for i in 0..kh {
                                let iy = (oy * stride + i) as isize - *padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for j in 0..kw {
                                    let ix = (ox * stride + j) as isize - *padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = (cc * h + iy as usize) * w + ix as usize;
                                    let ki = ((kk * c + cc) * kh + i) * kw + j;
                                    dx[xi] += go * kd[ki];
                                    dk[ki] += go * xd[xi];
                                }
                            }
                        }
                    }
                }
            }
            deltas.push((x.0, dx));
            deltas.push((k.0, dk));
        }
        Op::CausalConv1d { x, k } => {
            let (t_len, c) = (shp(*x)[0], shp(*x)[1]);
            let (kn, _, kw) = (shp(*k)[0], shp(*k)[1], shp(*k)[2]);
            let (xd, kd) = (val(*x), val(*k));
            let mut dx = vec![0.0; t_len * c];
            let mut dk = vec![0.0; kn * c * kw];
            for t in 0..t_len {
                for o in 0..kn {
                    let go = g[t * kn + o];
                    if go == 0.0 {
                        continue;
                    }
                    for j in 0..kw {
                        let tt = t as isize - (kw - 1) as isize + j as isize;
                        if tt < 0 {
                            continue;
                        }
                        for cc in 0..c {
                            dx[tt as usize * c + cc] += go * kd[(o * c + cc) * kw + j];
                            dk[(o * c + cc) * kw + j] += go * xd[tt as usize * c + cc];
                        }
                    }
                }
            }
            deltas.push((x.0, dx));
            deltas.push((k.0, dk));
        }
        Op::GatherRows { x, indices } => {
            let (m, n) = (shp(*x)[0], shp(*x)[1]);
            let mut dx = vec![0.0; m * n];
            for (r, &i) in indices.iter().enumerate() {
                for j in 0..n {
                    dx[i * n + j] += g[r * n + j];
                }
            }
            deltas.push((x.0, dx));
        }
        Op::ConcatRows { xs } => {
            let mut offset = 0;
            for v in xs {
                let len = before[v.0].tensor.numel();
                deltas.push((v.0, g[offset..offset + len].to_vec()));
                offset += len;
            }
        }
        Op::ConcatCols { xs } => {
            let m = shp(xs[0])[0];
            let width: usize = xs.iter().map(|v| shp(*v)[1]).sum();
            let mut col = 0;
            for v in xs {
                let n_i = shp(*v)[1];
                let mut dv = vec![0.0; m * n_i];
                for i in 0..m {
                    dv[i * n_i..(i + 1) * n_i]
                        .copy_from_slice(&g[i * width + col..i * width + col + n_i]);
                }
                deltas.push((v.0, dv));
                col += n_i;
            }
        }
        Op::MeanRows { x } => {
            let (m, n) = (shp(*x)[0], shp(*x)[1]);
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    dx[i * n + j] = g[j] / m as f64;
                }
            }
            deltas.push((x.0, dx));
        }
        Op::SumAll { x } => {
            deltas.push((x.0, vec![g[0]; before[x.0].tensor.numel()]));
        }
        Op::Scale { x, c } => {
            deltas.push((x.0, g.iter().map(|gi| gi * c).collect()));
        }
        Op::AddConst { x } => {
            deltas.push((x.0, g.to_vec()));
        }
        Op::ComplexScalePairs { x, re, im } => {
            let n = g.len();
            let mut dx = vec![0.0; n];
            for i in 0..n / 2 {
                dx[2 * i] = re * g[2 * i] + im * g[2 * i + 1];
                dx[2 * i + 1] = -im * g[2 * i] + re * g[2 * i + 1];
            }
            if n % 2 == 1 {
                dx[n - 1] = re * g[n - 1];
            }
            deltas.push((x.0, dx));
        }
        Op::PowerNorm { x, rms, degenerate } => {
            if !degenerate {
                let xd = val(*x);
                let n = xd.len() as f64;
                let gijxj: f64 = g.iter().zip(xd).map(|(gi, xi)| gi * xi).sum();
                let dx: Vec<f64> = xd
                    .iter()
                    .zip(g)
                    .map(|(xi, gi)| gi / rms - xi * gijxj / (n * rms * rms * rms))
                    .collect();
                deltas.push((x.0, dx));
            }
        }
        Op::SpatialToRows { x } => {
            let (c, h, w) = (shp(*x)[0], shp(*x)[1], shp(*x)[2]);
            let mut dx = vec![0.0; c * h * w];
            for cc in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        dx[(cc * h + y) * w + xx] = g[(y * w + xx) * c + cc];
                    }
                }
            }
            deltas.push((x.0, dx));
        }
        Op::RowsToSpatial { x } => {
            let (m, c) = (shp(*x)[0], shp(*x)[1]);
            // g has layout [C, h, w] with h*w == m.
            let hw = m;
            let mut dx = vec![0.0; m * c];
            for cc in 0..c {
                for p in 0..hw {
                    dx[p * c + cc] = g[cc * hw + p];
                }
            }
            deltas.push((x.0, dx));
        }
        Op::Reshape { x } => {
            deltas.push((x.0, g.to_vec()));
        }
        Op::CrossEntropy { logits, label } => {
            let zd = val(*logits);
            let lse = logsumexp(zd);
            let dx: Vec<f64> = zd
                .iter()
                .enumerate()
                .map(|(i, z)| {
                    let p = libm::exp(z - lse);
                    g[0] * (p - if i == *label { 1.0 } else { 0.0 })
                })
                .collect();
            deltas.push((logits.0, dx));
        }
        Op::BceMultilabel { logits, targets } => {
            let zd = val(*logits);
            let n = zd.len() as f64;
            let dx: Vec<f64> =
                zd.iter().zip(targets).map(|(z, t)| g[0] * (sigmoid(*z) - t) / n).collect();
            deltas.push((logits.0, dx));
        }
        Op::CtcLoss { logits, ext, log_probs, alphas, log_like } => {
            if *log_like == f64::NEG_INFINITY {
                // Infeasible alignment: flagged +inf loss, zero gradient.
                return deltas;
            }
            let (t_len, classes) = (shp(*logits)[0], shp(*logits)[1]);
            let s_len = ext.len();
            let blank = classes - 1;
            let ninf = f64::NEG_INFINITY;

            // Backward (beta) recursion; beta[t][s] covers frames t+1..T-1.
            let mut betas = vec![ninf; t_len * s_len];
            betas[(t_len - 1) * s_len + s_len - 1] = 0.0;
            if s_len >= 2 {
                betas[(t_len - 1) * s_len + s_len - 2] = 0.0;
            }
            for t in (0..t_len.saturating_sub(1)).rev() {
                for s in 0..s_len {
                    let mut terms = [ninf; 3];
                    terms[0] = betas[(t + 1) * s_len + s] + log_probs[(t + 1) * classes + ext[s]];
                    if s + 1 < s_len {
                        terms[1] = betas[(t + 1) * s_len + s + 1]
                            + log_probs[(t + 1) * classes + ext[s + 1]];
                    }
                    if s + 2 < s_len && ext[s + 2] != blank && ext[s + 2] != ext[s] {
                        terms[2] = betas[(t + 1) * s_len + s + 2]
                            + log_probs[(t + 1) * classes + ext[s + 2]];
                    }
                    betas[t * s_len + s] = logsumexp(&terms);
                }
            }

            // d loss / d logits = softmax - state-posterior mass per class.
            let mut dx = vec![0.0; t_len * classes];
            for t in 0..t_len {
                let mut q = vec![0.0; classes];
                for s in 0..s_len {
                    let a = alphas[t * s_len + s];
                    let b = betas[t * s_len + s];
                    if a > ninf && b > ninf {
                        q[ext[s]] += libm::exp(a + b - log_like);
                    }
                }
                for k in 0..classes {
                    let p = libm::exp(log_probs[t * classes + k]);
                    dx[t * classes + k] = g[0] * (p - q[k]);
                }
            }
            deltas.push((logits.0, dx));
        }
    }
    deltas
}

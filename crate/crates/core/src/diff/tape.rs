//! Recorded reverse-mode tape.
//!
//! Every kernel appends one node holding its output value and the
//! information needed to push gradients back to its inputs. `backward`
//! walks the node list once, in exact reverse execution order.

use crate::diff::tensor::{matmul_into, Tensor};
use crate::error::{config, input, Result};
use crate::scalar::Scalar;

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Constant,
    MatMul { a: Var, b: Var, trans_b: bool },
    AddBias { x: Var, bias: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulScalarVar { x: Var, s: Var },
    Sigmoid(Var),
    Tanh(Var),
    Ln(Var),
    Relu(Var),
    Selu(Var),
    Softmax { x: Var, scale: T },
    LogSoftmax(Var),
    LogSumExp(Var),
    MeanRows(Var),
    MeanAll(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ReverseRows(Var),
    ShiftRows { x: Var, delay: usize },
    Transpose(Var),
    GatherRows { x: Var, index: Vec<usize> },
    Cosine { a: Var, b: Var },
    Frame { x: Var, hop: usize },
    PreEmphasis { x: Var, coeff: T },
    SincKernels { low: Var, band: Var, sample_rate: T },
    MaxPoolCols { x: Var, argmax: Vec<usize> },
    AvgPoolRows { x: Var, bins: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalarVar { .. } => "mul_scalar_var",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Ln(_) => "ln",
            Op::Relu(_) => "relu",
            Op::Selu(_) => "selu",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::LogSumExp(_) => "logsumexp",
            Op::MeanRows(_) => "mean_rows",
            Op::MeanAll(_) => "mean_all",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatRows(_) => "concat_rows",
            Op::ReverseRows(_) => "reverse_rows",
            Op::ShiftRows { .. } => "shift_rows",
            Op::Transpose(_) => "transpose",
            Op::GatherRows { .. } => "gather_rows",
            Op::Cosine { .. } => "cosine",
            Op::Frame { .. } => "frame",
            Op::PreEmphasis { .. } => "pre_emphasis",
            Op::SincKernels { .. } => "sinc_kernels",
            Op::MaxPoolCols { .. } => "max_pool_cols",
            Op::AvgPoolRows { .. } => "avg_pool_rows",
            Op::BatchNorm { .. } => "batch_norm",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm, used by the
/// caller to update running estimates.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

/// Gradients from one reverse pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
    visited: Vec<(usize, &'static str)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; exactly zero when `v` did not influence
    /// the output or was detached.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let shape = self.shapes[v.0].clone();
                let n = shape.iter().product();
                Tensor::new(shape, vec![T::zero(); n]).expect("recorded shape")
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }

    /// Nodes visited by the reverse pass, in visiting order.
    pub fn visit_order(&self) -> &[(usize, &'static str)] {
        &self.visited
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err(kernel: &str, a: &[usize], b: &[usize]) -> crate::error::Error {
    config(format!("{kernel}: incompatible shapes {a:?} and {b:?}"))
}

fn adaptive_range(i: usize, n_in: usize, bins: usize) -> (usize, usize) {
    let start = i * n_in / bins;
    let end = ((i + 1) * n_in).div_ceil(bins);
    (start, end)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn kernel_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Names of recorded kernels in execution order.
    pub fn execution_order(&self) -> Vec<(usize, &'static str)> {
        self.nodes.iter().enumerate().map(|(i, n)| (i, n.op.name())).collect()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Trainable input; gradients are accumulated for it.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Copy of `v` cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let y = self.nodes[x.0].value.map(f);
        let ng = self.ng(x);
        self.push(y, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a), false, self.value(b), false, &mut out, false);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul { a, b, trans_b: false }, ng))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (n, k2)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(shape_err("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a), false, self.value(b), true, &mut out, false);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul { a, b, trans_b: true }, ng))
    }

    /// Adds a `1 x C` bias to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let ((r, c), (br, bc)) = (self.dims(x), self.dims(bias));
        if br != 1 || bc != c {
            return Err(shape_err("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let mut y = self.value(x).clone();
        for row in y.data_mut().chunks_mut(c) {
            for (v, &bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        debug_assert_eq!(y.rows(), r);
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(y, Op::AddBias { x, bias }, ng))
    }

    fn same_shape(&self, kernel: &str, a: Var, b: Var) -> Result<()> {
        if self.value(a).len() != self.value(b).len() || self.dims(a) != self.dims(b) {
            return Err(shape_err(kernel, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let y = self.value(a).zip_map(self.value(b), |p, q| p - q);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let y = self.value(a).zip_map(self.value(b), |p, q| p * q);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    /// Multiplies every entry of `x` by the `1 x 1` node `s`.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err("mul_scalar_var", self.shape(x), self.shape(s)));
        }
        let sv = self.value(s).item();
        let y = self.value(x).map(|v| v * sv);
        let ng = self.ng(x) || self.ng(s);
        Ok(self.push(y, Op::MulScalarVar { x, s }, ng))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    /// Natural log; inputs must be positive.
    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Ln(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn selu(&mut self, x: Var) -> Var {
        let (a, s) = (T::lit(SELU_ALPHA), T::lit(SELU_SCALE));
        self.unary(x, move |v| if v > T::zero() { s * v } else { s * a * (v.exp() - T::one()) }, Op::Selu(x))
    }

    /// Row-wise softmax of `scale * x`, stabilized by the row maximum.
    pub fn softmax_rows(&mut self, x: Var, scale: T) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut y = xv.clone();
        for row in y.data_mut().chunks_mut(c) {
            softmax_in_place(row, scale);
        }
        let ng = self.ng(x);
        self.push(y, Op::Softmax { x, scale }, ng)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut y = xv.clone();
        for row in y.data_mut().chunks_mut(c) {
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let ng = self.ng(x);
        self.push(y, Op::LogSoftmax(x), ng)
    }

    /// `R x C -> R x 1`.
    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let out: Vec<T> = xv.data().chunks(c).map(log_sum_exp).collect();
        let y = Tensor::matrix(out.len(), 1, out).expect("nonempty");
        let ng = self.ng(x);
        self.push(y, Op::LogSumExp(x), ng)
    }

    /// Mean over rows: `R x C -> 1 x C`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = vec![T::zero(); c];
        for row in xv.data().chunks(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = T::one() / T::lit(r as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        let ng = self.ng(x);
        self.push(Tensor::matrix(1, c, out).expect("nonempty"), Op::MeanRows(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().fold(T::zero(), |a, &b| a + b) / T::lit(xv.len() as f64);
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::MeanAll(x), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > c {
            return Err(config(format!("slice_cols: [{start}, {}) outside {c} columns", start + len)));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for row in xv.data().chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(r, len, out)?, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.dims(parts[0]).0;
        if parts.iter().any(|&p| self.dims(p).0 != r) {
            return Err(config("concat_cols: row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(r, total, out)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > r {
            return Err(config(format!("slice_rows: [{start}, {}) outside {r} rows", start + len)));
        }
        let out = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(len, c, out)?, Op::SliceRows { x, start }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.dims(parts[0]).1;
        if parts.iter().any(|&p| self.dims(p).1 != c) {
            return Err(config("concat_rows: column counts differ"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let r = out.len() / c;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn reverse_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let out: Vec<T> = xv.data().chunks(c).rev().flatten().copied().collect();
        let y = Tensor::matrix(xv.rows(), c, out).expect("same shape");
        let ng = self.ng(x);
        self.push(y, Op::ReverseRows(x), ng)
    }

    /// Causal delay along rows: `y[t] = x[t - delay]`, zero before the start.
    pub fn shift_rows(&mut self, x: Var, delay: usize) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = vec![T::zero(); r * c];
        if delay < r {
            out[delay * c..].copy_from_slice(&xv.data()[..(r - delay) * c]);
        }
        let ng = self.ng(x);
        self.push(Tensor::matrix(r, c, out).expect("same shape"), Op::ShiftRows { x, delay }, ng)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let y = self.value(x).transpose();
        let ng = self.ng(x);
        self.push(y, Op::Transpose(x), ng)
    }

    /// `y[t] = x[index[t]]`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x);
        if index.is_empty() {
            return Err(config("gather_rows: empty index"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(config(format!("gather_rows: row {bad} outside {r} rows")));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(xv.row(i));
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(index.len(), c, out)?, Op::GatherRows { x, index: index.to_vec() }, ng))
    }

    /// Cosine similarity of two equally sized tensors, as a `1 x 1` node.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(shape_err("cosine", self.shape(a), self.shape(b)));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let (na, nb) = (norm(av), norm(bv));
        if na == T::zero() || nb == T::zero() {
            return Err(input("cosine similarity of a zero-norm vector"));
        }
        let dot = av.iter().zip(bv).fold(T::zero(), |s, (&p, &q)| s + p * q);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(dot / (na * nb)), Op::Cosine { a, b }, ng))
    }

    /// Slice a `1 x S` signal into overlapping rows of `window` samples.
    pub fn frame(&mut self, x: Var, window: usize, hop: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.len();
        if window == 0 || hop == 0 {
            return Err(config("frame: window and hop must be positive"));
        }
        if s < window {
            return Err(input(format!("signal of {s} samples is shorter than one {window}-sample window")));
        }
        let t = (s - window) / hop + 1;
        let mut out = Vec::with_capacity(t * window);
        for i in 0..t {
            out.extend_from_slice(&xv.data()[i * hop..i * hop + window]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(t, window, out)?, Op::Frame { x, hop }, ng))
    }

    /// `y[0] = x[0]`, `y[n] = x[n] - coeff * x[n-1]`.
    pub fn pre_emphasis(&mut self, x: Var, coeff: T) -> Var {
        let xv = self.value(x);
        let d = xv.data();
        let mut out = Vec::with_capacity(d.len());
        out.push(d[0]);
        for n in 1..d.len() {
            out.push(d[n] - coeff * d[n - 1]);
        }
        let y = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        let ng = self.ng(x);
        self.push(y, Op::PreEmphasis { x, coeff }, ng)
    }

    /// Hamming-windowed band-pass kernels from cutoff parameters in Hz:
    /// `f_low = low`, `f_high = low + |band|`. Output is `F x taps`.
    pub fn sinc_kernels(&mut self, low: Var, band: Var, taps: usize, sample_rate: T) -> Result<Var> {
        let f = self.value(low).len();
        if self.value(band).len() != f {
            return Err(shape_err("sinc_kernels", self.shape(low), self.shape(band)));
        }
        if taps % 2 == 0 {
            return Err(config(format!("sinc kernel length must be odd, got {taps}")));
        }
        let window = hamming::<T>(taps);
        let half = (taps / 2) as isize;
        let two_pi = T::lit(2.0 * std::f64::consts::PI);
        let mut out = Vec::with_capacity(f * taps);
        for i in 0..f {
            let lo = self.value(low).data()[i] / sample_rate;
            let hi = lo + self.value(band).data()[i].abs() / sample_rate;
            for (j, &w) in window.iter().enumerate() {
                let n = T::lit((j as isize - half) as f64);
                let g = |fc: T| {
                    if j as isize == half {
                        T::lit(2.0) * fc
                    } else {
                        (two_pi * fc * n).sin() / (T::lit(std::f64::consts::PI) * n)
                    }
                };
                out.push(w * (g(hi) - g(lo)));
            }
        }
        let ng = self.ng(low) || self.ng(band);
        Ok(self.push(Tensor::matrix(f, taps, out)?, Op::SincKernels { low, band, sample_rate }, ng))
    }

    /// Adaptive max pooling of each row's columns into `bins` bins.
    pub fn max_pool_cols(&mut self, x: Var, bins: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if c < bins || bins == 0 {
            return Err(input(format!("cannot max-pool {c} steps into {bins} bins")));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * bins);
        let mut argmax = Vec::with_capacity(r * bins);
        for i in 0..r {
            let row = xv.row(i);
            for b in 0..bins {
                let (s, e) = adaptive_range(b, c, bins);
                let mut best = s;
                for k in s + 1..e {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                out.push(row[best]);
                argmax.push(i * c + best);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(r, bins, out)?, Op::MaxPoolCols { x, argmax }, ng))
    }

    /// Adaptive average pooling over rows: `R x C -> bins x C`.
    pub fn avg_pool_rows(&mut self, x: Var, bins: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if r < bins || bins == 0 {
            return Err(input(format!("cannot average-pool {r} rows into {bins} bins")));
        }
        let xv = self.value(x);
        let mut out = vec![T::zero(); bins * c];
        for b in 0..bins {
            let (s, e) = adaptive_range(b, r, bins);
            let inv = T::one() / T::lit((e - s) as f64);
            for t in s..e {
                for (o, &v) in out[b * c..(b + 1) * c].iter_mut().zip(xv.row(t)) {
                    *o += v * inv;
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(bins, c, out)?, Op::AvgPoolRows { x, bins }, ng))
    }

    /// Batch normalization where channel `g` owns every row `r` with
    /// `r % groups == g`. With `running = None` batch statistics are used and
    /// returned; otherwise the given `(mean, var)` are applied as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        eps: T,
        running: Option<(&[T], &[T])>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (r, c) = self.dims(x);
        if groups == 0 || r % groups != 0 {
            return Err(config(format!("batch_norm: {r} rows do not split into {groups} channels")));
        }
        if self.value(gamma).len() != groups || self.value(beta).len() != groups {
            return Err(shape_err("batch_norm", self.shape(gamma), self.shape(beta)));
        }
        let xv = self.value(x);
        let per = (r / groups) * c;
        let (mean, var, stats) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec(), None),
            None => {
                let mut mean = vec![T::zero(); groups];
                let mut var = vec![T::zero(); groups];
                for (i, row) in xv.data().chunks(c).enumerate() {
                    let g = i % groups;
                    mean[g] += row.iter().fold(T::zero(), |a, &b| a + b);
                }
                let nf = T::lit(per as f64);
                mean.iter_mut().for_each(|m| *m /= nf);
                for (i, row) in xv.data().chunks(c).enumerate() {
                    let g = i % groups;
                    var[g] += row.iter().fold(T::zero(), |a, &b| a + (b - mean[g]) * (b - mean[g]));
                }
                var.iter_mut().for_each(|v| *v /= nf);
                let unbiased = if per > 1 {
                    var.iter().map(|&v| v * nf / T::lit((per - 1) as f64)).collect()
                } else {
                    var.clone()
                };
                let stats = BatchStats { mean: mean.clone(), var: unbiased };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(r * c);
        let mut out = Vec::with_capacity(r * c);
        for (i, row) in xv.data().chunks(c).enumerate() {
            let g = i % groups;
            for &v in row {
                let h = (v - mean[g]) * inv_std[g];
                xhat.push(h);
                out.push(gv[g] * h + bv[g]);
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let batch_stats = stats.is_some();
        let y = self.push(
            Tensor::matrix(r, c, out)?,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats },
            ng,
        );
        Ok((y, stats))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        if self.value(out).len() != 1 {
            return Err(config(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(out)
            )));
        }
        Ok(self.backward_with(&[(out, Tensor::scalar(T::one()))]))
    }

    /// Reverse pass seeded with explicit output gradients.
    pub fn backward_with(&self, seeds: &[(Var, Tensor<T>)]) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let start = seeds.iter().map(|(v, _)| v.0).max().unwrap_or(0);
        for (v, g) in seeds {
            accumulate(&mut grads, *v, g.clone());
        }
        let mut visited = Vec::new();
        for i in (0..=start.min(self.nodes.len().saturating_sub(1))).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            visited.push((i, node.op.name()));
            self.backprop_node(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // Only leaves keep meaningful gradients; intermediate entries are kept
        // as well so callers can inspect them.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.needs_grad {
                *g = None;
            }
        }
        Gradients { grads, shapes, visited }
    }

    fn backprop_node(&self, node: &Node<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let send = |grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>| {
            if self.ng(v) {
                accumulate(grads, v, g);
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (val(*a), val(*b));
                if self.ng(*a) {
                    let mut ga = vec![T::zero(); av.len()];
                    // C = A B  => dA = dC B^T ; C = A B^T => dA = dC B
                    matmul_into(gy, false, bv, !trans_b, &mut ga, false);
                    send(grads, *a, Tensor::new(av.shape().to_vec(), ga).expect("shape"));
                }
                if self.ng(*b) {
                    let mut gb = vec![T::zero(); bv.len()];
                    if *trans_b {
                        matmul_into(gy, true, av, false, &mut gb, false);
                    } else {
                        matmul_into(av, true, gy, false, &mut gb, false);
                    }
                    send(grads, *b, Tensor::new(bv.shape().to_vec(), gb).expect("shape"));
                }
            }
            Op::AddBias { x, bias } => {
                send(grads, *x, gy.clone());
                if self.ng(*bias) {
                    let c = gy.cols();
                    let mut gb = vec![T::zero(); c];
                    for row in gy.data().chunks(c) {
                        for (o, &v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    send(grads, *bias, Tensor::new(val(*bias).shape().to_vec(), gb).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                send(grads, *a, reshape_like(gy.clone(), val(*a)));
                send(grads, *b, reshape_like(gy.clone(), val(*b)));
            }
            Op::Sub(a, b) => {
                send(grads, *a, reshape_like(gy.clone(), val(*a)));
                send(grads, *b, reshape_like(gy.map(|v| -v), val(*b)));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    send(grads, *a, reshape_like(gy.zip_map(val(*b), |g, q| g * q), val(*a)));
                }
                if self.ng(*b) {
                    send(grads, *b, reshape_like(gy.zip_map(val(*a), |g, p| g * p), val(*b)));
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                send(grads, *x, gy.map(|g| g * c));
            }
            Op::AddScalar(x) => send(grads, *x, gy.clone()),
            Op::MulScalarVar { x, s } => {
                let sv = val(*s).item();
                if self.ng(*x) {
                    send(grads, *x, gy.map(|g| g * sv));
                }
                if self.ng(*s) {
                    let d = gy.data().iter().zip(val(*x).data()).fold(T::zero(), |a, (&g, &v)| a + g * v);
                    send(grads, *s, Tensor::new(val(*s).shape().to_vec(), vec![d]).expect("shape"));
                }
            }
            Op::Sigmoid(x) => send(grads, *x, gy.zip_map(y, |g, s| g * s * (T::one() - s))),
            Op::Tanh(x) => send(grads, *x, gy.zip_map(y, |g, t| g * (T::one() - t * t))),
            Op::Ln(x) => send(grads, *x, gy.zip_map(val(*x), |g, v| g / v)),
            Op::Relu(x) => send(grads, *x, gy.zip_map(val(*x), |g, v| if v > T::zero() { g } else { T::zero() })),
            Op::Selu(x) => {
                let (a, s) = (T::lit(SELU_ALPHA), T::lit(SELU_SCALE));
                let d = gy
                    .data()
                    .iter()
                    .zip(val(*x).data())
                    .zip(y.data())
                    .map(|((&g, &v), &o)| if v > T::zero() { g * s } else { g * (o + s * a) })
                    .collect();
                send(grads, *x, Tensor::new(y.shape().to_vec(), d).expect("shape"));
            }
            Op::Softmax { x, scale } => {
                let c = y.cols();
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(c).zip(gy.data().chunks(c)) {
                    let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&p, &g)| a + p * g);
                    d.extend(yr.iter().zip(gr).map(|(&p, &g)| *scale * p * (g - dot)));
                }
                send(grads, *x, Tensor::new(y.shape().to_vec(), d).expect("shape"));
            }
            Op::LogSoftmax(x) => {
                let c = y.cols();
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(c).zip(gy.data().chunks(c)) {
                    let sum = gr.iter().fold(T::zero(), |a, &g| a + g);
                    d.extend(yr.iter().zip(gr).map(|(&l, &g)| g - l.exp() * sum));
                }
                send(grads, *x, Tensor::new(y.shape().to_vec(), d).expect("shape"));
            }
            Op::LogSumExp(x) => {
                let xv = val(*x);
                let c = xv.cols();
                let mut d = Vec::with_capacity(xv.len());
                for (i, xr) in xv.data().chunks(c).enumerate() {
                    let (l, g) = (y.data()[i], gy.data()[i]);
                    d.extend(xr.iter().map(|&v| g * (v - l).exp()));
                }
                send(grads, *x, Tensor::new(xv.shape().to_vec(), d).expect("shape"));
            }
            Op::MeanRows(x) => {
                let xv = val(*x);
                let inv = T::one() / T::lit(xv.rows() as f64);
                let c = xv.cols();
                let d = (0..xv.len()).map(|i| gy.data()[i % c] * inv).collect();
                send(grads, *x, Tensor::new(xv.shape().to_vec(), d).expect("shape"));
            }
            Op::MeanAll(x) => {
                let xv = val(*x);
                let g = gy.item() / T::lit(xv.len() as f64);
                send(grads, *x, Tensor::new(xv.shape().to_vec(), vec![g; xv.len()]).expect("shape"));
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let (c, w) = (xv.cols(), gy.cols());
                let mut d = vec![T::zero(); xv.len()];
                for (i, gr) in gy.data().chunks(w).enumerate() {
                    d[i * c + start..i * c + start + w].copy_from_slice(gr);
                }
                send(grads, *x, Tensor::new(xv.shape().to_vec(), d).expect("shape"));
            }
            Op::ConcatCols(parts) => {
                let total = gy.cols();
                let mut off = 0;
                for &p in parts {
                    let pv = val(p);
                    let w = pv.cols();
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(pv.len());
                        for gr in gy.data().chunks(total) {
                            d.extend_from_slice(&gr[off..off + w]);
                        }
                        send(grads, p, Tensor::new(pv.shape().to_vec(), d).expect("shape"));
                    }
                    off += w;
                }
            }
            Op::SliceRows { x, start } => {
                let xv = val(*x);
                let c = xv.cols();
                let mut d = vec![T::zero(); xv.len()];
                d[start * c..start * c + gy.len()].copy_from_slice(gy.data());
                send(grads, *x, Tensor::new(xv.shape().to_vec(), d).expect("shape"));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pv = val(p);
                    let n = pv.len();
                    if self.ng(p) {
                        let d = gy.data()[off..off + n].to_vec();
                        send(grads, p, Tensor::new(pv.shape().to_vec(), d).expect("shape"));
                    }
                    off += n;
                }
            }
            Op::ReverseRows(x) => {
                let c = gy.cols();
                let d: Vec<T> = gy.data().chunks(c).rev().flatten().copied().collect();
                send(grads, *x, Tensor::new(val(*x).shape().to_vec(), d).expect("shape"));
            }
            Op::ShiftRows { x, delay } => {
                let (r, c) = (gy.rows(), gy.cols());
                let mut d = vec![T::zero(); r * c];
                if *delay < r {
                    d[..(r - delay) * c].copy_from_slice(&gy.data()[delay * c..]);
                }
                send(grads, *x, Tensor::new(val(*x).shape().to_vec(), d).expect("shape"));
            }
            Op::Transpose(x) => send(grads, *x, gy.transpose()),
            Op::GatherRows { x, index } => {
                let xv = val(*x);
                let c = xv.cols();
                let mut d = vec![T::zero(); xv.len()];
                for (t, &i) in index.iter().enumerate() {
                    for (o, &g) in d[i * c..(i + 1) * c].iter_mut().zip(gy.row(t)) {
                        *o += g;
                    }
                }
                send(grads, *x, Tensor::new(xv.shape().to_vec(), d).expect("shape"));
            }
            Op::Cosine { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let (na, nb) = (norm(av.data()), norm(bv.data()));
                let cs = y.item();
                let g = gy.item();
                if self.ng(*a) {
                    let d = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(&p, &q)| g * (q / (na * nb) - cs * p / (na * na)))
                        .collect();
                    send(grads, *a, Tensor::new(av.shape().to_vec(), d).expect("shape"));
                }
                if self.ng(*b) {
                    let d = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(&p, &q)| g * (p / (na * nb) - cs * q / (nb * nb)))
                        .collect();
                    send(grads, *b, Tensor::new(bv.shape().to_vec(), d).expect("shape"));
                }
            }
            Op::Frame { x, hop } => {
                let xv = val(*x);
                let w = gy.cols();
                let mut d = vec![T::zero(); xv.len()];
                for (i, gr) in gy.data().chunks(w).enumerate() {
                    for (o, &g) in d[i * hop..i * hop + w].iter_mut().zip(gr) {
                        *o += g;
                    }
                }
                send(grads, *x, Tensor::new(xv.shape().to_vec(), d).expect("shape"));
            }
            Op::PreEmphasis { x, coeff } => {
                let g = gy.data();
                let n = g.len();
                let d = (0..n).map(|i| if i + 1 < n { g[i] - *coeff * g[i + 1] } else { g[i] }).collect();
                send(grads, *x, Tensor::new(val(*x).shape().to_vec(), d).expect("shape"));
            }
            Op::SincKernels { low, band, sample_rate } => {
                let taps = y.cols();
                let window = hamming::<T>(taps);
                let half = (taps / 2) as isize;
                let two_pi = T::lit(2.0 * std::f64::consts::PI);
                let two = T::lit(2.0);
                let (lv, bv) = (val(*low), val(*band));
                let mut dlow = Vec::with_capacity(lv.len());
                let mut dband = Vec::with_capacity(lv.len());
                for i in 0..lv.len() {
                    let lo = lv.data()[i] / *sample_rate;
                    let bw = bv.data()[i];
                    let hi = lo + bw.abs() / *sample_rate;
                    let (mut s_hi, mut s_lo) = (T::zero(), T::zero());
                    for (j, &w) in window.iter().enumerate() {
                        let n = T::lit((j as isize - half) as f64);
                        let g = gy.data()[i * taps + j] * w;
                        s_hi += g * two * (two_pi * hi * n).cos();
                        s_lo += g * two * (two_pi * lo * n).cos();
                    }
                    // d f_high / d low = d f_low / d low = 1/sr
                    dlow.push((s_hi - s_lo) / *sample_rate);
                    dband.push(s_hi * bw.signum() / *sample_rate);
                }
                send(grads, *low, Tensor::new(lv.shape().to_vec(), dlow).expect("shape"));
                send(grads, *band, Tensor::new(bv.shape().to_vec(), dband).expect("shape"));
            }
            Op::MaxPoolCols { x, argmax } => {
                let xv = val(*x);
                let mut d = vec![T::zero(); xv.len()];
                for (&idx, &g) in argmax.iter().zip(gy.data()) {
                    d[idx] += g;
                }
                send(grads, *x, Tensor::new(xv.shape().to_vec(), d).expect("shape"));
            }
            Op::AvgPoolRows { x, bins } => {
                let xv = val(*x);
                let (r, c) = (xv.rows(), xv.cols());
                let mut d = vec![T::zero(); xv.len()];
                for b in 0..*bins {
                    let (s, e) = adaptive_range(b, r, *bins);
                    let inv = T::one() / T::lit((e - s) as f64);
                    for t in s..e {
                        for (o, &g) in d[t * c..(t + 1) * c].iter_mut().zip(gy.row(b)) {
                            *o += g * inv;
                        }
                    }
                }
                send(grads, *x, Tensor::new(xv.shape().to_vec(), d).expect("shape"));
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let groups = inv_std.len();
                let c = y.cols();
                let gv = val(*gamma).data();
                let mut dgamma = vec![T::zero(); groups];
                let mut dbeta = vec![T::zero(); groups];
                let mut sum_dxhat = vec![T::zero(); groups];
                let mut sum_dxhat_xhat = vec![T::zero(); groups];
                for (i, gr) in gy.data().chunks(c).enumerate() {
                    let g = i % groups;
                    for (j, &dy) in gr.iter().enumerate() {
                        let h = xhat[i * c + j];
                        dgamma[g] += dy * h;
                        dbeta[g] += dy;
                        let dh = dy * gv[g];
                        sum_dxhat[g] += dh;
                        sum_dxhat_xhat[g] += dh * h;
                    }
                }
                if self.ng(*x) {
                    let n = T::lit((y.len() / groups) as f64);
                    let mut d = Vec::with_capacity(y.len());
                    for (i, gr) in gy.data().chunks(c).enumerate() {
                        let g = i % groups;
                        for (j, &dy) in gr.iter().enumerate() {
                            let dh = dy * gv[g];
                            if *batch_stats {
                                let h = xhat[i * c + j];
                                d.push(inv_std[g] / n * (n * dh - sum_dxhat[g] - h * sum_dxhat_xhat[g]));
                            } else {
                                d.push(dh * inv_std[g]);
                            }
                        }
                    }
                    send(grads, *x, Tensor::new(val(*x).shape().to_vec(), d).expect("shape"));
                }
                send(grads, *gamma, Tensor::new(val(*gamma).shape().to_vec(), dgamma).expect("shape"));
                send(grads, *beta, Tensor::new(val(*beta).shape().to_vec(), dbeta).expect("shape"));
            }
        }
    }
}

fn reshape_like<T: Scalar>(g: Tensor<T>, like: &Tensor<T>) -> Tensor<T> {
    if g.shape() == like.shape() {
        g
    } else {
        g.reshape(like.shape().to_vec()).expect("same element count")
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &b| a + b * b).sqrt()
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s = row.iter().fold(T::zero(), |a, &v| a + (v - m).exp());
    m + s.ln()
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T], scale: T) {
    let m = row.iter().map(|&v| v * scale).fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v * scale - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Symmetric Hamming window of `n` points.
pub fn hamming<T: Scalar>(n: usize) -> Vec<T> {
    if n == 1 {
        return vec![T::one()];
    }
    (0..n)
        .map(|i| T::lit(0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

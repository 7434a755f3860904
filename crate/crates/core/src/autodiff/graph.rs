//! Reverse-mode automatic differentiation over a recorded operation list.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::kernels::{
    batch_to_channel_major, channel_to_batch_major, col2im, conv_output_size,
    conv_transpose_output_size, im2col, ConvGeometry,
};
use crate::error::{invalid, shape_err, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::{numel, Tensor};

/// Rows with a Euclidean norm below this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

static DEGENERATE_COUNT: AtomicU64 = AtomicU64::new(0);

/// Number of degenerate (near-zero-norm) vectors seen by normalisation
/// and cosine similarity since process start.
pub fn degenerate_count() -> u64 {
    DEGENERATE_COUNT.load(Ordering::Relaxed)
}

pub(crate) fn note_degenerate(count: u64) {
    if count > 0 {
        DEGENERATE_COUNT.fetch_add(count, Ordering::Relaxed);
        log::warn!("{count} degenerate embedding(s) scored as zero similarity");
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether batch normalisation uses batch statistics or stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvParts {
    input: Var,
    weight: Var,
    bias: Var,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, T),
    AddScalar(Var),
    Sqrt(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    LeakyRelu(Var, T),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose(Var),
    Diag(Var),
    Matmul(Var, Var),
    LogSumExp(Var, usize),
    L2Norm(Var, usize),
    NormalizeRows(Var),
    Linear(ConvParts),
    Conv2d(ConvParts, ConvGeometry),
    ConvTranspose2d(ConvParts, ConvGeometry),
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Ordered record of tensor operations. Nodes are only appended, so every
/// node's inputs precede it and backward visits nodes in reverse creation
/// order.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{op}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn dims2<T: Scalar>(op: &str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        ref s => Err(shape_err!("{op}: expected a 2-D tensor, got {s:?}")),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient; `None` until a backward pass reaches `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op, &[a])
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(name, x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |p, q| p * q)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |p, q| p / q)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), |x| x.sqrt())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// `x` for `x >= 0`, otherwise `slope * x`.
    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        debug_assert!(slope > T::zero() && slope < T::one());
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x >= T::zero() { x } else { slope * x })
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: T = t.data().iter().copied().sum();
        let m = s / T::of(t.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Collapses all dimensions after the first.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let rows = *shape.first().ok_or_else(|| shape_err!("flatten: scalar input"))?;
        let cols = numel(&shape[1..]);
        self.reshape(a, vec![rows, cols])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = dims2("transpose", t)?;
        let value = Tensor::new(vec![c, r], transpose(t.data(), r, c))?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    /// Main diagonal of a square matrix.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = dims2("diag", t)?;
        if r != c {
            return Err(shape_err!("diag: matrix {r}x{c} is not square"));
        }
        let data = (0..r).map(|i| t.data()[i * c + i]).collect();
        let value = Tensor::new(vec![r], data)?;
        Ok(self.push(value, Op::Diag(a), &[a]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let (m, k) = dims2("matmul", x)?;
        let (k2, n) = dims2("matmul", y)?;
        if k != k2 {
            return Err(shape_err!("matmul: {:?} x {:?}", x.shape(), y.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(false, false, m, n, k, T::one(), x.data(), y.data(), T::zero(), &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::Matmul(a, b), &[a, b]))
    }

    /// Stabilised `log(sum(exp(x)))` of a 2-D tensor along `axis`
    /// (1: one value per row, 0: one value per column).
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = dims2("logsumexp", t)?;
        let lines = axis_lines(t.data(), r, c, axis)?;
        let data = lines.iter().map(|line| logsumexp_slice(line)).collect::<Vec<_>>();
        let value = Tensor::new(vec![data.len()], data)?;
        Ok(self.push(value, Op::LogSumExp(a, axis), &[a]))
    }

    /// Euclidean norm of a 2-D tensor along `axis`.
    pub fn l2_norm(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = dims2("l2_norm", t)?;
        let lines = axis_lines(t.data(), r, c, axis)?;
        let data = lines
            .iter()
            .map(|line| line.iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect::<Vec<_>>();
        let value = Tensor::new(vec![data.len()], data)?;
        Ok(self.push(value, Op::L2Norm(a, axis), &[a]))
    }

    /// Scales every row of a 2-D tensor to unit length. Degenerate rows
    /// (norm below [`DEGENERATE_NORM`]) map to zero and are counted.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = dims2("normalize_rows", t)?;
        let mut out = t.data().to_vec();
        let mut degenerate = 0;
        for row in out.chunks_mut(c) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm.as_f64() < DEGENERATE_NORM {
                degenerate += 1;
                row.fill(T::zero());
            } else {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        note_degenerate(degenerate);
        let value = Tensor::new(vec![r, c], out)?;
        Ok(self.push(value, Op::NormalizeRows(a), &[a]))
    }

    /// `input[B,F] · weightᵀ[F,O] + bias[O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (batch, features) = dims2("linear input", x)?;
        let (outputs, wf) = dims2("linear weight", w)?;
        if wf != features {
            return Err(shape_err!(
                "linear: input {:?} incompatible with weight {:?}",
                x.shape(),
                w.shape()
            ));
        }
        if b.shape() != [outputs] {
            return Err(shape_err!("linear: bias {:?} for {outputs} outputs", b.shape()));
        }
        let mut out = Vec::with_capacity(batch * outputs);
        for _ in 0..batch {
            out.extend_from_slice(b.data());
        }
        gemm(false, true, batch, outputs, features, T::one(), x.data(), w.data(), T::one(), &mut out);
        let value = Tensor::new(vec![batch, outputs], out)?;
        let parts = ConvParts { input, weight, bias };
        Ok(self.push(value, Op::Linear(parts), &[input, weight, bias]))
    }

    /// Cross-correlation of `input[B,Cin,H,W]` with `weight[Cout,Cin,k,k]` plus `bias[Cout]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let &[batch, cin, h, wd] = x.shape() else {
            return Err(shape_err!("conv2d: input must be [B,C,H,W], got {:?}", x.shape()));
        };
        let &[cout, wcin, k, k2] = w.shape() else {
            return Err(shape_err!("conv2d: weight must be [Cout,Cin,k,k], got {:?}", w.shape()));
        };
        if wcin != cin || k != k2 {
            return Err(shape_err!(
                "conv2d: input {:?} has {cin} channels but weight {:?} expects {wcin}",
                x.shape(),
                w.shape()
            ));
        }
        if b.shape() != [cout] {
            return Err(shape_err!("conv2d: bias {:?} for {cout} output channels", b.shape()));
        }
        if stride == 0 {
            return Err(invalid!("conv2d: stride must be at least 1"));
        }
        let (Some(oh), Some(ow)) = (
            conv_output_size(h, k, stride, padding),
            conv_output_size(wd, k, stride, padding),
        ) else {
            return Err(shape_err!(
                "conv2d: padded input {h}x{wd} (padding {padding}) smaller than kernel {k}"
            ));
        };
        let geom = ConvGeometry {
            batch,
            channels: cin,
            height: h,
            width: wd,
            kernel: k,
            stride,
            padding,
            out_h: oh,
            out_w: ow,
        };
        let cols = im2col(x.data(), &geom);
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let mut out_cm = vec![T::zero(); cout * ncols];
        gemm(false, false, cout, ncols, rows, T::one(), w.data(), &cols, T::zero(), &mut out_cm);
        for (co, chunk) in out_cm.chunks_mut(ncols).enumerate() {
            let bias_v = b.data()[co];
            chunk.iter_mut().for_each(|v| *v += bias_v);
        }
        let out = channel_to_batch_major(&out_cm, batch, cout, oh * ow);
        let value = Tensor::new(vec![batch, cout, oh, ow], out)?;
        let parts = ConvParts { input, weight, bias };
        Ok(self.push(value, Op::Conv2d(parts, geom), &[input, weight, bias]))
    }

    /// Transposed convolution (the adjoint of [`Graph::conv2d`] in its input):
    /// `input[B,Cin,H,W]`, `weight[Cin,Cout,k,k]`, output
    /// `[B,Cout,(H-1)s-2p+k,(W-1)s-2p+k]`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let &[batch, cin, h, wd] = x.shape() else {
            return Err(shape_err!("conv_transpose2d: input must be [B,C,H,W], got {:?}", x.shape()));
        };
        let &[wcin, cout, k, k2] = w.shape() else {
            return Err(shape_err!(
                "conv_transpose2d: weight must be [Cin,Cout,k,k], got {:?}",
                w.shape()
            ));
        };
        if wcin != cin || k != k2 {
            return Err(shape_err!(
                "conv_transpose2d: input {:?} has {cin} channels but weight {:?} expects {wcin}",
                x.shape(),
                w.shape()
            ));
        }
        if b.shape() != [cout] {
            return Err(shape_err!("conv_transpose2d: bias {:?} for {cout} channels", b.shape()));
        }
        let (Some(oh), Some(ow)) = (
            conv_transpose_output_size(h, k, stride, padding),
            conv_transpose_output_size(wd, k, stride, padding),
        ) else {
            return Err(shape_err!("conv_transpose2d: degenerate output for {h}x{wd}"));
        };
        let geom = ConvGeometry {
            batch,
            channels: cout,
            height: oh,
            width: ow,
            kernel: k,
            stride,
            padding,
            out_h: h,
            out_w: wd,
        };
        let spatial = h * wd;
        let xm = batch_to_channel_major(x.data(), batch, cin, spatial);
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![T::zero(); rows * ncols];
        gemm(true, false, rows, ncols, cin, T::one(), w.data(), &xm, T::zero(), &mut cols);
        let mut out = vec![T::zero(); batch * cout * oh * ow];
        col2im(&cols, &geom, &mut out);
        for (i, chunk) in out.chunks_mut(oh * ow).enumerate() {
            let bias_v = b.data()[i % cout];
            chunk.iter_mut().for_each(|v| *v += bias_v);
        }
        let value = Tensor::new(vec![batch, cout, oh, ow], out)?;
        let parts = ConvParts { input, weight, bias };
        Ok(self.push(value, Op::ConvTranspose2d(parts, geom), &[input, weight, bias]))
    }

    /// Batch normalisation over dimension 1 of a `[B,C,...]` tensor.
    ///
    /// Train mode normalises with the (biased) batch statistics and folds
    /// them into `running` by exponential averaging; eval mode normalises
    /// with `running` and is independent of the other batch members.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        config: BatchNormConfig,
        mode: Mode,
    ) -> Result<Var> {
        let (x, gm, bt) = (self.value(input), self.value(gamma), self.value(beta));
        if x.ndim() < 2 {
            return Err(shape_err!("batch_norm: input must be [B,C,...], got {:?}", x.shape()));
        }
        let (batch, channels) = (x.shape()[0], x.shape()[1]);
        let spatial = numel(&x.shape()[2..]);
        if gm.shape() != [channels] || bt.shape() != [channels] {
            return Err(shape_err!(
                "batch_norm: gamma {:?} / beta {:?} for {channels} channels",
                gm.shape(),
                bt.shape()
            ));
        }
        if running.mean.len() != channels || running.var.len() != channels {
            return Err(shape_err!("batch_norm: running stats sized for {} channels", running.mean.len()));
        }
        let train = mode == Mode::Train;
        if train && batch < 2 {
            return Err(invalid!("batch_norm: train mode needs a batch of at least 2, got {batch}"));
        }
        let eps = T::of(config.epsilon);
        let count = batch * spatial;
        let mut mean = vec![T::zero(); channels];
        let mut inv_std = vec![T::zero(); channels];
        if train {
            let momentum = T::of(config.momentum);
            let nf = T::of(count as f64);
            for c in 0..channels {
                let mut s = T::zero();
                for b in 0..batch {
                    s += x.data()[(b * channels + c) * spatial..][..spatial].iter().copied().sum();
                }
                let mu = s / nf;
                let mut ss = T::zero();
                for b in 0..batch {
                    for &v in &x.data()[(b * channels + c) * spatial..][..spatial] {
                        ss += (v - mu) * (v - mu);
                    }
                }
                let var = ss / nf;
                mean[c] = mu;
                inv_std[c] = T::one() / (var + eps).sqrt();
                let unbiased = ss / T::of((count - 1) as f64);
                running.mean[c] = (T::one() - momentum) * running.mean[c] + momentum * mu;
                running.var[c] = (T::one() - momentum) * running.var[c] + momentum * unbiased;
            }
        } else {
            for c in 0..channels {
                mean[c] = running.mean[c];
                inv_std[c] = T::one() / (running.var[c] + eps).sqrt();
            }
        }
        let mut xhat = vec![T::zero(); x.numel()];
        let mut out = vec![T::zero(); x.numel()];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * spatial;
                for i in base..base + spatial {
                    let h = (x.data()[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = gm.data()[c] * h + bt.data()[c];
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let op = Op::BatchNorm {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        };
        Ok(self.push(value, op, &[input, gamma, beta]))
    }

    /// Propagates d(loss)/d(node) to every node that requires grad and adds
    /// the result to its stored gradient (so repeated calls accumulate).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.value(loss).numel();
        if n != 1 {
            return Err(shape_err!(
                "backward: loss must be a scalar, got shape {:?}",
                self.shape(loss)
            ));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                None => {
                    node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let out = node.value.data();
        let val = |v: Var| nodes[v.0].value.data();
        // Gradient slot for an input, or None when it does not need one.
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].requires_grad {
                    let len = nodes[v.0].value.numel();
                    Some(adj[v.0].get_or_insert_with(|| vec![T::zero(); len]))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(s) = slot!(v) {
                        s.iter_mut().zip(g).for_each(|(s, &g)| *s += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = slot!(*a) {
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s += g);
                }
                if let Some(s) = slot!(*b) {
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s -= g);
                }
            }
            Op::Mul(a, b) => {
                if let Some(s) = slot!(*a) {
                    for ((s, &g), &y) in s.iter_mut().zip(g).zip(val(*b)) {
                        *s += g * y;
                    }
                }
                if let Some(s) = slot!(*b) {
                    for ((s, &g), &x) in s.iter_mut().zip(g).zip(val(*a)) {
                        *s += g * x;
                    }
                }
            }
            Op::Div(a, b) => {
                if let Some(s) = slot!(*a) {
                    for ((s, &g), &y) in s.iter_mut().zip(g).zip(val(*b)) {
                        *s += g / y;
                    }
                }
                if let Some(s) = slot!(*b) {
                    for (((s, &g), &x), &y) in s.iter_mut().zip(g).zip(val(*a)).zip(val(*b)) {
                        *s -= g * x / (y * y);
                    }
                }
            }
            Op::Neg(a) => {
                if let Some(s) = slot!(*a) {
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s -= g);
                }
            }
            Op::Scale(a, c) => {
                if let Some(s) = slot!(*a) {
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s += g * *c);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(s) = slot!(*a) {
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s += g);
                }
            }
            Op::Sqrt(a) => {
                if let Some(s) = slot!(*a) {
                    let half = T::of(0.5);
                    for ((s, &g), &y) in s.iter_mut().zip(g).zip(out) {
                        *s += g * half / y;
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(s) = slot!(*a) {
                    for ((s, &g), &y) in s.iter_mut().zip(g).zip(out) {
                        *s += g * y;
                    }
                }
            }
            Op::Log(a) => {
                if let Some(s) = slot!(*a) {
                    for ((s, &g), &x) in s.iter_mut().zip(g).zip(val(*a)) {
                        *s += g / x;
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(s) = slot!(*a) {
                    for ((s, &g), &y) in s.iter_mut().zip(g).zip(out) {
                        *s += g * y * (T::one() - y);
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                if let Some(s) = slot!(*a) {
                    for ((s, &g), &x) in s.iter_mut().zip(g).zip(val(*a)) {
                        *s += if x >= T::zero() { g } else { g * *slope };
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                if let Some(s) = slot!(*a) {
                    for ((s, &g), &x) in s.iter_mut().zip(g).zip(val(*a)) {
                        if x >= *lo && x <= *hi {
                            *s += g;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(s) = slot!(*a) {
                    s.iter_mut().for_each(|s| *s += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(s) = slot!(*a) {
                    let gi = g[0] / T::of(s.len() as f64);
                    s.iter_mut().for_each(|s| *s += gi);
                }
            }
            Op::Transpose(a) => {
                if let Some(s) = slot!(*a) {
                    let shape = nodes[a.0].value.shape();
                    let (r, c) = (shape[0], shape[1]);
                    // g is [c, r]
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Diag(a) => {
                if let Some(s) = slot!(*a) {
                    let n = g.len();
                    for (k, &gk) in g.iter().enumerate() {
                        s[k * n + k] += gk;
                    }
                }
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if let Some(s) = slot!(*a) {
                    gemm(false, true, m, k, n, T::one(), g, val(*b), T::one(), s);
                }
                if let Some(s) = slot!(*b) {
                    gemm(true, false, k, n, m, T::one(), val(*a), g, T::one(), s);
                }
            }
            Op::LogSumExp(a, axis) => {
                if let Some(s) = slot!(*a) {
                    let shape = nodes[a.0].value.shape();
                    let c = shape[1];
                    for (idx, (&x, s)) in val(*a).iter().zip(s.iter_mut()).enumerate() {
                        let line = if *axis == 1 { idx / c } else { idx % c };
                        *s += g[line] * (x - out[line]).exp();
                    }
                }
            }
            Op::L2Norm(a, axis) => {
                if let Some(s) = slot!(*a) {
                    let c = nodes[a.0].value.shape()[1];
                    for (idx, (&x, s)) in val(*a).iter().zip(s.iter_mut()).enumerate() {
                        let line = if *axis == 1 { idx / c } else { idx % c };
                        if out[line] > T::zero() {
                            *s += g[line] * x / out[line];
                        }
                    }
                }
            }
            Op::NormalizeRows(a) => {
                if let Some(s) = slot!(*a) {
                    let c = nodes[a.0].value.shape()[1];
                    let x = val(*a);
                    for ((srow, xrow), (yrow, grow)) in s
                        .chunks_mut(c)
                        .zip(x.chunks(c))
                        .zip(out.chunks(c).zip(g.chunks(c)))
                    {
                        let norm = xrow.iter().map(|&v| v * v).sum::<T>().sqrt();
                        if norm.as_f64() < DEGENERATE_NORM {
                            continue;
                        }
                        let dot: T = yrow.iter().zip(grow).map(|(&y, &g)| y * g).sum();
                        for ((s, &y), &g) in srow.iter_mut().zip(yrow).zip(grow) {
                            *s += (g - y * dot) / norm;
                        }
                    }
                }
            }
            Op::Linear(p) => {
                let (xs, ws) = (nodes[p.input.0].value.shape(), nodes[p.weight.0].value.shape());
                let (batch, features, outputs) = (xs[0], xs[1], ws[0]);
                if let Some(s) = slot!(p.input) {
                    gemm(false, false, batch, features, outputs, T::one(), g, val(p.weight), T::one(), s);
                }
                if let Some(s) = slot!(p.weight) {
                    gemm(true, false, outputs, features, batch, T::one(), g, val(p.input), T::one(), s);
                }
                if let Some(s) = slot!(p.bias) {
                    for row in g.chunks(outputs) {
                        s.iter_mut().zip(row).for_each(|(s, &g)| *s += g);
                    }
                }
            }
            Op::Conv2d(p, geom) => {
                let cout = nodes[p.weight.0].value.shape()[0];
                let spatial = geom.out_h * geom.out_w;
                let gm = batch_to_channel_major(g, geom.batch, cout, spatial);
                let (rows, ncols) = (geom.col_rows(), geom.col_cols());
                if let Some(s) = slot!(p.bias) {
                    for (sb, row) in s.iter_mut().zip(gm.chunks(ncols)) {
                        *sb += row.iter().copied().sum();
                    }
                }
                if nodes[p.weight.0].requires_grad {
                    let cols = im2col(val(p.input), geom);
                    let s = slot!(p.weight).expect("weight requires grad");
                    gemm(false, true, cout, rows, ncols, T::one(), &gm, &cols, T::one(), s);
                }
                if let Some(s) = slot!(p.input) {
                    let mut dcols = vec![T::zero(); rows * ncols];
                    gemm(true, false, rows, ncols, cout, T::one(), val(p.weight), &gm, T::zero(), &mut dcols);
                    col2im(&dcols, geom, s);
                }
            }
            Op::ConvTranspose2d(p, geom) => {
                let cin = nodes[p.weight.0].value.shape()[0];
                let cout = geom.channels;
                let (rows, ncols) = (geom.col_rows(), geom.col_cols());
                if let Some(s) = slot!(p.bias) {
                    let spatial = geom.height * geom.width;
                    for (i, chunk) in g.chunks(spatial).enumerate() {
                        s[i % cout] += chunk.iter().copied().sum();
                    }
                }
                let dcols = im2col(g, geom);
                if nodes[p.weight.0].requires_grad {
                    let xm = batch_to_channel_major(val(p.input), geom.batch, cin, geom.out_h * geom.out_w);
                    let s = slot!(p.weight).expect("weight requires grad");
                    gemm(false, true, cin, rows, ncols, T::one(), &xm, &dcols, T::one(), s);
                }
                if let Some(s) = slot!(p.input) {
                    let mut dxm = vec![T::zero(); cin * ncols];
                    gemm(false, false, cin, ncols, rows, T::one(), val(p.weight), &dcols, T::zero(), &mut dxm);
                    let dx = channel_to_batch_major(&dxm, geom.batch, cin, geom.out_h * geom.out_w);
                    s.iter_mut().zip(&dx).for_each(|(s, &d)| *s += d);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = nodes[input.0].value.shape();
                let (batch, channels) = (shape[0], shape[1]);
                let spatial = numel(&shape[2..]);
                let mut sum_g = vec![T::zero(); channels];
                let mut sum_gx = vec![T::zero(); channels];
                for b in 0..batch {
                    for c in 0..channels {
                        let base = (b * channels + c) * spatial;
                        for i in base..base + spatial {
                            sum_g[c] += g[i];
                            sum_gx[c] += g[i] * xhat[i];
                        }
                    }
                }
                if let Some(s) = slot!(*gamma) {
                    s.iter_mut().zip(&sum_gx).for_each(|(s, &v)| *s += v);
                }
                if let Some(s) = slot!(*beta) {
                    s.iter_mut().zip(&sum_g).for_each(|(s, &v)| *s += v);
                }
                if let Some(s) = slot!(*input) {
                    let gm = val(*gamma);
                    let m = T::of((batch * spatial) as f64);
                    for b in 0..batch {
                        for c in 0..channels {
                            let base = (b * channels + c) * spatial;
                            let k = gm[c] * inv_std[c];
                            for i in base..base + spatial {
                                s[i] += if *train {
                                    k / m * (m * g[i] - sum_g[c] - xhat[i] * sum_gx[c])
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn transpose<T: Scalar>(data: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = data[i * c + j];
        }
    }
    out
}

fn axis_lines<T: Scalar>(data: &[T], r: usize, c: usize, axis: usize) -> Result<Vec<Vec<T>>> {
    match axis {
        1 => Ok(data.chunks(c).map(<[T]>::to_vec).collect()),
        0 => Ok((0..c).map(|j| (0..r).map(|i| data[i * c + j]).collect()).collect()),
        _ => Err(invalid!("axis {axis} out of range for a 2-D tensor")),
    }
}

/// `max(x) + log(sum(exp(x - max(x))))`.
pub fn logsumexp_slice<T: Scalar>(x: &[T]) -> T {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + x.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

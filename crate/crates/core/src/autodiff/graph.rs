//! Computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order and only ever reference earlier
//! nodes, so the graph is acyclic by construction and a single reverse sweep
//! over node indices is a valid topological order for backward.

use rand::Rng;
use rayon::prelude::*;

use crate::autodiff::real::{gemm, MatRef};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// Lower bound applied to `log` inputs.
pub const LOG_CLAMP: f64 = 1e-12;

const BN_EPS: f64 = 1e-5;

/// Samples per parallel task in conv kernels. Fixed so the reduction order of
/// weight gradients does not depend on the thread count.
const CONV_SAMPLE_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv1d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        pad: usize,
    },
    MaxPool1d {
        input: NodeId,
        pool: usize,
        argmax: Vec<u32>,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Log {
        input: NodeId,
        clamped: Vec<bool>,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
        training: bool,
    },
    Dropout {
        input: NodeId,
        mask: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    param: bool,
    needs_grad: bool,
}

/// Gradients of a scalar root with respect to parameter leaves.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

/// How batch normalization picks its statistics.
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a> {
    /// Normalize with the current batch.
    Batch,
    /// Normalize with fixed (running) per-channel mean and variance.
    Fixed { mean: &'a [f64], var: &'a [f64] },
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    strict_log: bool,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            strict_log: false,
        }
    }

    /// In strict mode `log` fails on non-positive input instead of clamping.
    pub fn with_strict_log(mut self, strict: bool) -> Self {
        self.strict_log = strict;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            param: false,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: false,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: true,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Length-preserving 1-D cross-correlation with replication padding.
    ///
    /// `input` is `[C_in, L]` or batched `[B, C_in, L]`, `kernel` is
    /// `[C_out, C_in, K]` and `bias` is `[C_out]`. `pad` must equal `K / 2`
    /// with `K` odd.
    pub fn conv1d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId, pad: usize) -> Result<NodeId> {
        let (x, w, b) = (self.value(input), self.value(kernel), self.value(bias));
        let (batch, c_in, len, batched) = match *x.shape() {
            [c, l] => (1, c, l, false),
            [n, c, l] => (n, c, l, true),
            ref s => return Err(Error::shape(format!("conv1d input must be rank 2 or 3, got {s:?}"))),
        };
        let [c_out, kc_in, k] = *w.shape() else {
            return Err(Error::shape(format!("conv1d kernel must be rank 3, got {:?}", w.shape())));
        };
        if k % 2 == 0 {
            return Err(Error::config(format!("conv1d kernel length {k} must be odd")));
        }
        if pad != k / 2 {
            return Err(Error::config(format!(
                "conv1d pad {pad} must equal kernel length / 2 = {}",
                k / 2
            )));
        }
        if kc_in != c_in {
            return Err(Error::shape(format!(
                "conv1d channel mismatch: input has {c_in}, kernel expects {kc_in}"
            )));
        }
        if b.shape() != [c_out] {
            return Err(Error::shape(format!("conv1d bias must be [{c_out}], got {:?}", b.shape())));
        }
        let geom = ConvGeom { c_in, k, len, pad };
        let mut out = vec![T::zero(); batch * c_out * len];
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let sample_in = c_in * len;
        let sample_out = c_out * len;
        out.par_chunks_mut(CONV_SAMPLE_CHUNK * sample_out)
            .enumerate()
            .for_each(|(chunk, out_chunk)| {
                let nb = out_chunk.len() / sample_out;
                let wide = nb * len;
                let first = chunk * CONV_SAMPLE_CHUNK;
                let mut cols = vec![T::zero(); geom.col_rows() * wide];
                for i in 0..nb {
                    let s = first + i;
                    geom.im2col(&xd[s * sample_in..(s + 1) * sample_in], &mut cols, wide, i * len);
                }
                let mut y = vec![T::zero(); c_out * wide];
                gemm(
                    MatRef::new(wd, c_out, geom.col_rows()),
                    MatRef::new(&cols, geom.col_rows(), wide),
                    &mut y,
                    false,
                );
                for (i, dst) in out_chunk.chunks_mut(sample_out).enumerate() {
                    for (co, (row, &bias)) in dst.chunks_mut(len).zip(bd).enumerate() {
                        let src = &y[co * wide + i * len..co * wide + (i + 1) * len];
                        for (d, &v) in row.iter_mut().zip(src) {
                            *d = v + bias;
                        }
                    }
                }
            });
        let shape = if batched { vec![batch, c_out, len] } else { vec![c_out, len] };
        let value = Tensor::from_vec(shape, out)?;
        Ok(self.push(value, Op::Conv1d { input, kernel, bias, pad }, &[input, kernel, bias]))
    }

    /// Non-overlapping max pooling along the last axis; trailing samples that
    /// do not fill a window are dropped.
    pub fn maxpool1d(&mut self, input: NodeId, pool: usize) -> Result<NodeId> {
        let x = self.value(input);
        if pool == 0 {
            return Err(Error::config("pool size must be positive"));
        }
        let len = *x.shape().last().expect("non-empty shape");
        if x.rank() < 2 {
            return Err(Error::shape(format!("maxpool1d input must be rank >= 2, got {:?}", x.shape())));
        }
        if pool > len {
            return Err(Error::shape(format!("pool {pool} exceeds length {len}: empty output")));
        }
        let out_len = len / pool;
        let rows = x.numel() / len;
        let mut out = Vec::with_capacity(rows * out_len);
        let mut argmax = Vec::with_capacity(rows * out_len);
        for row in x.data().chunks(len) {
            for w in 0..out_len {
                let base = w * pool;
                let mut best = base;
                for j in base + 1..base + pool {
                    // Strict comparison credits the first maximal element.
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                out.push(row[best]);
                argmax.push(best as u32);
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = out_len;
        let value = Tensor::from_vec(shape, out)?;
        Ok(self.push(value, Op::MaxPool1d { input, pool, argmax }, &[input]))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(input), &[input])
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(softplus);
        self.push(value, Op::Softplus(input), &[input])
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(sigmoid);
        self.push(value, Op::Sigmoid(input), &[input])
    }

    /// Natural log with inputs clamped to at least [`LOG_CLAMP`] (or an error
    /// in strict mode).
    pub fn log(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let floor = T::of_f64(LOG_CLAMP);
        if self.strict_log {
            if let Some(bad) = x.data().iter().find(|&&v| v <= T::zero()) {
                return Err(Error::LogDomain(bad.as_f64()));
            }
        }
        let clamped: Vec<bool> = x.data().iter().map(|&v| v < floor).collect();
        let value = x.map(|v| v.max(floor).ln());
        Ok(self.push(value, Op::Log { input, clamped }, &[input]))
    }

    fn binary_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<Vec<usize>> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() == y.shape() || y.is_scalar() {
            Ok(x.shape().to_vec())
        } else if x.is_scalar() {
            Ok(y.shape().to_vec())
        } else {
            Err(Error::shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                x.shape(),
                y.shape()
            )))
        }
    }

    fn zip_with(&self, a: NodeId, b: NodeId, shape: Vec<usize>, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| f(x[if x.len() == 1 { 0 } else { i }], y[if y.len() == 1 { 0 } else { i }]))
            .collect();
        Tensor::from_vec(shape, data).expect("shape checked")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.binary_shape(a, b, "add")?;
        let value = self.zip_with(a, b, shape, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.binary_shape(a, b, "sub")?;
        let value = self.zip_with(a, b, shape, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.binary_shape(a, b, "mul")?;
        let value = self.zip_with(a, b, shape, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let f = T::of_f64(factor);
        let value = self.value(input).map(|v| v * f);
        self.push(value, Op::Scale(input, f), &[input])
    }

    /// Affine map `weight · x + bias`. `input` is `[n]` or batched `[B, n]`,
    /// `weight` is `[m, n]`, `bias` is `[m]`.
    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let [m, n] = *w.shape() else {
            return Err(Error::shape(format!("dense weight must be rank 2, got {:?}", w.shape())));
        };
        let (rows, batched) = match *x.shape() {
            [k] if k == n => (1, false),
            [r, k] if k == n => (r, true),
            ref s => {
                return Err(Error::shape(format!(
                    "dense input {s:?} does not match weight [{m}, {n}]"
                )))
            }
        };
        if b.shape() != [m] {
            return Err(Error::shape(format!("dense bias must be [{m}], got {:?}", b.shape())));
        }
        let mut out = vec![T::zero(); rows * m];
        for row in out.chunks_mut(m) {
            row.copy_from_slice(b.data());
        }
        gemm(MatRef::new(x.data(), rows, n), MatRef::new(w.data(), m, n).t(), &mut out, true);
        let shape = if batched { vec![rows, m] } else { vec![m] };
        let value = Tensor::from_vec(shape, out)?;
        Ok(self.push(value, Op::Dense { input, weight, bias }, &[input, weight, bias]))
    }

    pub fn reshape(&mut self, input: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(input), &[input]))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(input), &[input])
    }

    pub fn mean(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let s = x.data().iter().copied().sum::<T>() / T::of_f64(x.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(input), &[input])
    }

    /// Mean squared error between equally shaped nodes.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let diff = self.sub(pred, target)?;
        let sq = self.mul(diff, diff)?;
        Ok(self.mean(sq))
    }

    /// Per-channel normalization of `[B, C, L]` input over batch and length.
    pub fn batch_norm(&mut self, input: NodeId, gamma: NodeId, beta: NodeId, stats: NormStats<'_>) -> Result<NodeId> {
        let x = self.value(input);
        let [batch, ch, len] = *x.shape() else {
            return Err(Error::shape(format!("batch_norm input must be [B, C, L], got {:?}", x.shape())));
        };
        if self.value(gamma).shape() != [ch] || self.value(beta).shape() != [ch] {
            return Err(Error::shape("batch_norm affine parameters must be [C]"));
        }
        let count = (batch * len) as f64;
        let xd = x.data();
        let (mean, var, training) = match stats {
            NormStats::Batch => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let mut s = 0.0;
                    for b in 0..batch {
                        s += xd[(b * ch + c) * len..(b * ch + c + 1) * len].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let mu = s / count;
                    let mut q = 0.0;
                    for b in 0..batch {
                        q += xd[(b * ch + c) * len..(b * ch + c + 1) * len]
                            .iter()
                            .map(|v| (v.as_f64() - mu).powi(2))
                            .sum::<f64>();
                    }
                    mean[c] = mu;
                    var[c] = q / count;
                }
                (mean, var, true)
            }
            NormStats::Fixed { mean, var } => {
                if mean.len() != ch || var.len() != ch {
                    return Err(Error::shape("batch_norm running statistics must have C entries"));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::of_f64(1.0 / (v + BN_EPS).sqrt())).collect();
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..batch {
            for c in 0..ch {
                let mu = T::of_f64(mean[c]);
                for i in (b * ch + c) * len..(b * ch + c + 1) * len {
                    let h = (xd[i] - mu) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + be[c];
                }
            }
        }
        let value = Tensor::from_vec(x.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                training,
            },
            &[input, gamma, beta],
        ))
    }

    /// Batch mean and (biased) variance used by a batch-norm node.
    pub fn batch_norm_stats(&self, id: NodeId) -> Option<(&[f64], &[f64])> {
        match &self.nodes[id.0].op {
            Op::BatchNorm {
                batch_mean, batch_var, ..
            } => Some((batch_mean, batch_var)),
            _ => None,
        }
    }

    /// Inverted dropout: zeroes entries with probability `p` and rescales the
    /// survivors by `1 / (1 - p)`.
    pub fn dropout(&mut self, input: NodeId, p: f64, rng: &mut impl Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout probability {p} outside [0, 1)")));
        }
        let keep = T::of_f64(1.0 / (1.0 - p));
        let x = self.value(input);
        let mask: Vec<T> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::from_vec(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { input, mask }, &[input]))
    }

    /// Fingerprint of every non-differentiable branch taken in the forward
    /// pass (ReLU signs, pooling winners, log clamping). Two evaluations with
    /// equal fingerprints lie on the same smooth piece of the function.
    pub fn kink_fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(PRIME);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(input) => {
                    for v in self.nodes[input.0].value.data() {
                        feed((*v > T::zero()) as u64);
                    }
                }
                Op::MaxPool1d { argmax, .. } => argmax.iter().for_each(|&a| feed(a as u64)),
                Op::Log { clamped, .. } => clamped.iter().for_each(|&c| feed(c as u64)),
                _ => {}
            }
        }
        h
    }

    /// Reverse sweep from a scalar root. Gradients are retained only for
    /// parameter leaves.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_value.shape().to_vec(), T::one()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.param {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Relu(input) => {
                if self.wants(*input) {
                    let x = self.value(*input).data();
                    let slot = slot(grads, *input, self.value(*input));
                    for ((s, &xi), &gi) in slot.iter_mut().zip(x).zip(gd) {
                        if xi > T::zero() {
                            *s = *s + gi;
                        }
                    }
                }
            }
            Op::Softplus(input) => {
                if self.wants(*input) {
                    let x = self.value(*input).data();
                    let slot = slot(grads, *input, self.value(*input));
                    for ((s, &xi), &gi) in slot.iter_mut().zip(x).zip(gd) {
                        *s = *s + gi * sigmoid(xi);
                    }
                }
            }
            Op::Sigmoid(input) => {
                if self.wants(*input) {
                    let y = node.value.data();
                    let slot = slot(grads, *input, self.value(*input));
                    for ((s, &yi), &gi) in slot.iter_mut().zip(y).zip(gd) {
                        *s = *s + gi * yi * (T::one() - yi);
                    }
                }
            }
            Op::Log { input, clamped } => {
                if self.wants(*input) {
                    let x = self.value(*input).data();
                    let slot = slot(grads, *input, self.value(*input));
                    for (((s, &xi), &gi), &c) in slot.iter_mut().zip(x).zip(gd).zip(clamped) {
                        if !c {
                            *s = *s + gi / xi;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate_broadcast(*a, gd, grads, |gi, _| gi, *b);
                self.accumulate_broadcast(*b, gd, grads, |gi, _| gi, *a);
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(*a, gd, grads, |gi, _| gi, *b);
                self.accumulate_broadcast(*b, gd, grads, |gi, _| -gi, *a);
            }
            Op::Mul(a, b) => {
                self.accumulate_broadcast(*a, gd, grads, |gi, other| gi * other, *b);
                self.accumulate_broadcast(*b, gd, grads, |gi, other| gi * other, *a);
            }
            Op::Scale(input, f) => {
                if self.wants(*input) {
                    let slot = slot(grads, *input, self.value(*input));
                    for (s, &gi) in slot.iter_mut().zip(gd) {
                        *s = *s + gi * *f;
                    }
                }
            }
            Op::Reshape(input) => {
                if self.wants(*input) {
                    let slot = slot(grads, *input, self.value(*input));
                    for (s, &gi) in slot.iter_mut().zip(gd) {
                        *s = *s + gi;
                    }
                }
            }
            Op::Sum(input) | Op::Mean(input) => {
                if self.wants(*input) {
                    let n = self.value(*input).numel();
                    let gi = match node.op {
                        Op::Mean(_) => gd[0] / T::of_f64((n) as f64),
                        _ => gd[0],
                    };
                    let slot = slot(grads, *input, self.value(*input));
                    slot.iter_mut().for_each(|s| *s = *s + gi);
                }
            }
            Op::MaxPool1d { input, pool, argmax } => {
                if self.wants(*input) {
                    let x = self.value(*input);
                    let len = *x.shape().last().unwrap();
                    let out_len = len / pool;
                    let slot = slot(grads, *input, x);
                    for (row, (gr, ar)) in gd.chunks(out_len).zip(argmax.chunks(out_len)).enumerate() {
                        for (&gi, &a) in gr.iter().zip(ar) {
                            let i = row * len + a as usize;
                            slot[i] = slot[i] + gi;
                        }
                    }
                }
            }
            Op::Dense { input, weight, bias } => self.dense_backward(*input, *weight, *bias, g, grads),
            Op::Conv1d { input, kernel, bias, pad } => {
                self.conv_backward(*input, *kernel, *bias, *pad, g, grads)
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
                ..
            } => self.batch_norm_backward(*input, *gamma, *beta, xhat, inv_std, *training, g, grads),
            Op::Dropout { input, mask } => {
                if self.wants(*input) {
                    let slot = slot(grads, *input, self.value(*input));
                    for ((s, &gi), &m) in slot.iter_mut().zip(gd).zip(mask) {
                        *s = *s + gi * m;
                    }
                }
            }
        }
    }

    fn accumulate_broadcast(
        &self,
        target: NodeId,
        gd: &[T],
        grads: &mut [Option<Tensor<T>>],
        f: impl Fn(T, T) -> T,
        other: NodeId,
    ) {
        if !self.wants(target) {
            return;
        }
        let od = self.value(other).data();
        let other_at = |i: usize| od[if od.len() == 1 { 0 } else { i }];
        let tv = self.value(target);
        let slot = slot(grads, target, tv);
        if slot.len() == 1 && gd.len() > 1 {
            let total = gd.iter().enumerate().map(|(i, &gi)| f(gi, other_at(i))).sum::<T>();
            slot[0] = slot[0] + total;
        } else {
            for (i, (s, &gi)) in slot.iter_mut().zip(gd).enumerate() {
                *s = *s + f(gi, other_at(i));
            }
        }
    }

    fn dense_backward(&self, input: NodeId, weight: NodeId, bias: NodeId, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let x = self.value(input);
        let w = self.value(weight);
        let [m, n] = *w.shape() else { unreachable!() };
        let rows = x.numel() / n;
        let gd = g.data();
        if self.wants(bias) {
            let slot = slot(grads, bias, self.value(bias));
            for row in gd.chunks(m) {
                for (s, &gi) in slot.iter_mut().zip(row) {
                    *s = *s + gi;
                }
            }
        }
        if self.wants(weight) {
            let slot = slot(grads, weight, w);
            gemm(MatRef::new(gd, rows, m).t(), MatRef::new(x.data(), rows, n), slot, true);
        }
        if self.wants(input) {
            let slot = slot(grads, input, x);
            gemm(MatRef::new(gd, rows, m), MatRef::new(w.data(), m, n), slot, true);
        }
    }

    fn conv_backward(
        &self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        pad: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let x = self.value(input);
        let w = self.value(kernel);
        let [c_out, c_in, k] = *w.shape() else { unreachable!() };
        let len = *x.shape().last().unwrap();
        let geom = ConvGeom { c_in, k, len, pad };
        let gd = g.data();
        let sample_in = c_in * len;
        let sample_out = c_out * len;

        if self.wants(bias) {
            let slot = slot(grads, bias, self.value(bias));
            for y in gd.chunks(sample_out) {
                for (s, row) in slot.iter_mut().zip(y.chunks(len)) {
                    *s = *s + row.iter().copied().sum::<T>();
                }
            }
        }
        let want_w = self.wants(kernel);
        let want_x = self.wants(input);
        if !want_w && !want_x {
            return;
        }
        let xd = x.data();
        let wd = w.data();
        let rows = geom.col_rows();
        // Per chunk: optional weight-gradient partial and the input gradient
        // of the chunk's samples.
        let parts: Vec<(Vec<T>, Vec<T>)> = gd
            .par_chunks(CONV_SAMPLE_CHUNK * sample_out)
            .enumerate()
            .map(|(chunk, gchunk)| {
                let nb = gchunk.len() / sample_out;
                let wide = nb * len;
                let first = chunk * CONV_SAMPLE_CHUNK;
                let mut gwide = vec![T::zero(); c_out * wide];
                for (i, gy) in gchunk.chunks(sample_out).enumerate() {
                    for (co, row) in gy.chunks(len).enumerate() {
                        gwide[co * wide + i * len..co * wide + (i + 1) * len].copy_from_slice(row);
                    }
                }
                let mut dw = Vec::new();
                if want_w {
                    let mut cols = vec![T::zero(); rows * wide];
                    for i in 0..nb {
                        let s = first + i;
                        geom.im2col(&xd[s * sample_in..(s + 1) * sample_in], &mut cols, wide, i * len);
                    }
                    dw = vec![T::zero(); c_out * rows];
                    gemm(
                        MatRef::new(&gwide, c_out, wide),
                        MatRef::new(&cols, rows, wide).t(),
                        &mut dw,
                        false,
                    );
                }
                let mut dx = Vec::new();
                if want_x {
                    let mut dcols = vec![T::zero(); rows * wide];
                    gemm(
                        MatRef::new(wd, c_out, rows).t(),
                        MatRef::new(&gwide, c_out, wide),
                        &mut dcols,
                        false,
                    );
                    dx = vec![T::zero(); nb * sample_in];
                    for (i, dxs) in dx.chunks_mut(sample_in).enumerate() {
                        geom.col2im(&dcols, dxs, wide, i * len);
                    }
                }
                (dw, dx)
            })
            .collect();
        if want_w {
            let slot = slot(grads, kernel, w);
            for (dw, _) in &parts {
                for (s, &v) in slot.iter_mut().zip(dw) {
                    *s = *s + v;
                }
            }
        }
        if want_x {
            let slot = slot(grads, input, x);
            for (s, &v) in slot.iter_mut().zip(parts.iter().flat_map(|(_, dx)| dx)) {
                *s = *s + v;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn batch_norm_backward(
        &self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: &[T],
        inv_std: &[T],
        training: bool,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let x = self.value(input);
        let [batch, ch, len] = *x.shape() else { unreachable!() };
        let gd = g.data();
        let mut sum_g = vec![T::zero(); ch];
        let mut sum_gx = vec![T::zero(); ch];
        for b in 0..batch {
            for c in 0..ch {
                for i in (b * ch + c) * len..(b * ch + c + 1) * len {
                    sum_g[c] = sum_g[c] + gd[i];
                    sum_gx[c] = sum_gx[c] + gd[i] * xhat[i];
                }
            }
        }
        if self.wants(gamma) {
            let slot = slot(grads, gamma, self.value(gamma));
            for (s, &v) in slot.iter_mut().zip(&sum_gx) {
                *s = *s + v;
            }
        }
        if self.wants(beta) {
            let slot = slot(grads, beta, self.value(beta));
            for (s, &v) in slot.iter_mut().zip(&sum_g) {
                *s = *s + v;
            }
        }
        if self.wants(input) {
            let gam: Vec<T> = self.value(gamma).data().to_vec();
            let count = T::of_f64((batch * len) as f64);
            let slot = slot(grads, input, x);
            for b in 0..batch {
                for c in 0..ch {
                    let scale = gam[c] * inv_std[c];
                    for i in (b * ch + c) * len..(b * ch + c + 1) * len {
                        let d = if training {
                            scale * (gd[i] - sum_g[c] / count - xhat[i] * sum_gx[c] / count)
                        } else {
                            scale * gd[i]
                        };
                        slot[i] = slot[i] + d;
                    }
                }
            }
        }
    }
}

fn softplus<T: Real>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

fn sigmoid<T: Real>(v: T) -> T {
    // Split on sign so exp never overflows.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn slot<'a, T: Real>(grads: &'a mut [Option<Tensor<T>>], id: NodeId, like: &Tensor<T>) -> &'a mut [T] {
    grads[id.0]
        .get_or_insert_with(|| Tensor::zeros(like.shape().to_vec()))
        .data_mut()
}

#[derive(Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    k: usize,
    len: usize,
    pad: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c_in * self.k
    }

    /// Source index of output position `l`, kernel tap `j`, under
    /// replication padding.
    #[inline]
    fn src(&self, l: usize, j: usize) -> usize {
        (l + j).saturating_sub(self.pad).min(self.len - 1)
    }

    /// Writes the column matrix of one sample into `cols`, whose rows are
    /// `stride` long, starting at column `offset`.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T], stride: usize, offset: usize) {
        let len = self.len;
        for ci in 0..self.c_in {
            let row_in = &x[ci * len..(ci + 1) * len];
            for j in 0..self.k {
                let r = (ci * self.k + j) * stride + offset;
                let dst = &mut cols[r..r + len];
                // Interior positions copy a contiguous run; only the edges clamp.
                let lo = self.pad.saturating_sub(j).min(len);
                let hi = (len + self.pad).saturating_sub(j).min(len).max(lo);
                for (l, d) in dst[..lo].iter_mut().enumerate() {
                    *d = row_in[self.src(l, j)];
                }
                if hi > lo {
                    let start = lo + j - self.pad;
                    dst[lo..hi].copy_from_slice(&row_in[start..start + (hi - lo)]);
                }
                for (l, d) in dst.iter_mut().enumerate().skip(hi) {
                    *d = row_in[self.src(l, j)];
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T], stride: usize, offset: usize) {
        let len = self.len;
        for ci in 0..self.c_in {
            let row_out = &mut dx[ci * len..(ci + 1) * len];
            for j in 0..self.k {
                let r = (ci * self.k + j) * stride + offset;
                let src = &cols[r..r + len];
                for (l, &v) in src.iter().enumerate() {
                    let s = self.src(l, j);
                    row_out[s] = row_out[s] + v;
                }
            }
        }
    }
}

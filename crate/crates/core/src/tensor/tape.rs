//! A minimal reverse-mode tape (Wengert list).
//!
//! Every op appends a node holding its output tensor plus whatever it needs
//! for the backward pass. [`Tape::backward`] walks the list in reverse and
//! leaves each reachable node's gradient in its tensor's `grad` field.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::norm::RunningStats;
use super::{conv, norm, pool, Real, Tensor};
use crate::error::{bail, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv3d { input: Var, kernel: Var, bias: Var },
    MaxPool3d { input: Var, argmax: Vec<usize> },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<f64>, training: bool },
    Relu { input: Var },
    Linear { input: Var, weight: Var, bias: Var },
    Dropout { input: Var, scale: Option<Vec<T>> },
    Reshape { input: Var },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    L2Penalty { weights: Vec<Var>, lambda: f64 },
    Add { a: Var, b: Var },
}

struct Node<T> {
    tensor: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node { tensor, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, true, Op::Leaf)
    }

    /// A leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, false, Op::Leaf)
    }

    pub fn tensor(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].tensor
    }

    pub fn value(&self, v: Var) -> &[T] {
        self.nodes[v.0].tensor.values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].tensor.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].tensor.take_grad()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    /// Which side of every non-smooth point the current values sit on: one
    /// entry per ReLU input element (1 if positive) followed by every
    /// max-pool winner index. Two evaluations with equal signatures lie in the
    /// same smooth piece of the graph.
    pub fn branch_signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    sig.extend(self.value(*input).iter().map(|v| usize::from(*v > T::zero())))
                }
                Op::MaxPool3d { argmax, .. } => sig.extend_from_slice(argmax),
                _ => {}
            }
        }
        sig
    }

    /// `[N, C_in, D, H, W] ⊛ [C_out, C_in, 3, 3, 3] + [C_out]`, stride 1,
    /// zero padding 1, no kernel flip.
    pub fn conv3d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (xs, ks, bs) = (self.shape(input), self.shape(kernel), self.shape(bias));
        if xs.len() != 5 {
            bail!(Shape, "conv3d input must be [N,C,D,H,W], got {:?}", xs);
        }
        if ks.len() != 5 || ks[2..] != [3, 3, 3] {
            bail!(Shape, "conv3d kernel must be [C_out,C_in,3,3,3], got {:?}", ks);
        }
        if ks[1] != xs[1] {
            bail!(Shape, "conv3d channel mismatch: input has {}, kernel expects {}", xs[1], ks[1]);
        }
        if bs != [ks[0]] {
            bail!(Shape, "conv3d bias must be [{}], got {:?}", ks[0], bs);
        }
        let g = conv::ConvGeom { n: xs[0], ci: xs[1], co: ks[0], s: [xs[2], xs[3], xs[4]] };
        let out = conv::forward(&g, self.value(input), self.value(kernel), self.value(bias));
        let shape = [g.n, g.co, g.s[0], g.s[1], g.s[2]];
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(Tensor::new(&shape, out)?, rg, Op::Conv3d { input, kernel, bias }))
    }

    /// 2×2×2 max pooling, stride 2, trailing odd slices dropped.
    pub fn maxpool3d(&mut self, input: Var) -> Result<Var> {
        let xs = self.shape(input);
        if xs.len() != 5 {
            bail!(Shape, "maxpool3d input must be [N,C,D,H,W], got {:?}", xs);
        }
        if xs[2..].iter().any(|&d| d < 2) {
            bail!(Shape, "maxpool3d needs every spatial extent >= 2, got {:?}", &xs[2..]);
        }
        let s = [xs[2], xs[3], xs[4]];
        let shape = [xs[0], xs[1], s[0] / 2, s[1] / 2, s[2] / 2];
        let (out, argmax) = pool::forward(self.value(input), xs[0] * xs[1], s);
        let rg = self.rg(input);
        Ok(self.push(Tensor::new(&shape, out)?, rg, Op::MaxPool3d { input, argmax }))
    }

    /// Per-channel normalization of `[N, C, ...]`. In training mode the batch
    /// statistics are used and `running` is updated; otherwise `running` is
    /// used as is.
    pub fn batchnorm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        training: bool,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() < 2 {
            bail!(Shape, "batchnorm input must be [N,C,...], got {:?}", xs);
        }
        let (n, c) = (xs[0], xs[1]);
        let sp: usize = xs[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || running.channels() != c {
            bail!(Shape, "batchnorm parameters must all have {} channels", c);
        }
        if training && n < 2 {
            bail!(Precondition, "batchnorm in training mode needs a batch of at least 2, got {}", n);
        }
        let f = norm::forward(
            self.value(input),
            n,
            c,
            sp,
            self.value(gamma),
            self.value(beta),
            running,
            training,
        );
        if training {
            running.update(&f.batch_mean, &f.batch_var_unbiased);
        }
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        let op = Op::BatchNorm { input, gamma, beta, xhat: f.xhat, inv_std: f.inv_std, training };
        Ok(self.push(Tensor::new(&xs, f.out)?, rg, op))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let t = self.tensor(input);
        let out: Vec<T> = t.values().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(input);
        self.push(Tensor::new(&shape, out).expect("same shape"), rg, Op::Relu { input })
    }

    /// `[N, F] · [F, U] + [U]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            bail!(Shape, "linear: input {:?}, weight {:?}, bias {:?} are incompatible", xs, ws, bs);
        }
        let (n, f, u) = (xs[0], xs[1], ws[1]);
        let mut out = Vec::with_capacity(n * u);
        for _ in 0..n {
            out.extend_from_slice(self.value(bias));
        }
        super::gemm::matmul(n, f, u, self.value(input), false, self.value(weight), false, &mut out, T::one());
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(Tensor::new(&[n, u], out)?, rg, Op::Linear { input, weight, bias }))
    }

    /// Inverted dropout: in training mode each element survives with
    /// probability `keep_rate` and survivors are scaled by `1 / keep_rate`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        keep_rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(keep_rate > 0.0 && keep_rate <= 1.0) {
            bail!(Parameter, "dropout keep rate must lie in (0, 1], got {}", keep_rate);
        }
        let t = self.tensor(input);
        let shape = t.shape().to_vec();
        let rg = self.rg(input);
        if !training || keep_rate == 1.0 {
            let out = t.values().to_vec();
            return Ok(self.push(Tensor::new(&shape, out)?, rg, Op::Dropout { input, scale: None }));
        }
        let keep = T::of(1.0 / keep_rate);
        let scale: Vec<T> = (0..t.len())
            .map(|_| if rng.random::<f64>() < keep_rate { keep } else { T::zero() })
            .collect();
        let out = t.values().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        Ok(self.push(Tensor::new(&shape, out)?, rg, Op::Dropout { input, scale: Some(scale) }))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let t = self.tensor(input).clone();
        let mut t = t.reshape(shape)?;
        t.clear_grad();
        let rg = self.rg(input);
        Ok(self.push(t, rg, Op::Reshape { input }))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, computed with
    /// the max-subtraction trick. Output is a one-element tensor.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits);
        if ls.len() != 2 || ls[0] != labels.len() {
            bail!(Shape, "logits {:?} do not match {} labels", ls, labels.len());
        }
        let (n, c) = (ls[0], ls[1]);
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            bail!(Parameter, "label {} out of range for {} classes", bad, c);
        }
        let x = self.value(logits);
        if x.iter().any(|v| !v.is_finite()) {
            bail!(Numeric, "non-finite logits");
        }
        let mut probs = vec![0.0f64; n * c];
        let mut loss = 0.0f64;
        for (i, &label) in labels.iter().enumerate() {
            let row = &x[i * c..(i + 1) * c];
            let mx = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| num_traits::Float::exp(v.f64() - mx)).sum();
            let log_z = mx + num_traits::Float::ln(z);
            for (j, v) in row.iter().enumerate() {
                probs[i * c + j] = num_traits::Float::exp(v.f64() - log_z);
            }
            loss += log_z - row[label].f64();
        }
        loss /= n as f64;
        let rg = self.rg(logits);
        let op = Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs };
        Ok(self.push(Tensor::scalar(T::of(loss)), rg, op))
    }

    /// `lambda * Σ ||W||²` over the given weight tensors.
    pub fn l2_penalty(&mut self, weights: &[Var], lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) {
            bail!(Parameter, "L2 weight decay must be non-negative, got {}", lambda);
        }
        let total: f64 = weights.iter().map(|&w| self.tensor(w).sum_squares()).sum();
        let rg = lambda > 0.0 && weights.iter().any(|&w| self.rg(w));
        let op = Op::L2Penalty { weights: weights.to_vec(), lambda };
        Ok(self.push(Tensor::scalar(T::of(lambda * total)), rg, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            bail!(Shape, "add: {:?} vs {:?}", self.shape(a), self.shape(b));
        }
        let shape = self.shape(a).to_vec();
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, rg, Op::Add { a, b }))
    }

    /// Back-propagates from a one-element node with seed gradient 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.tensor(root).len() != 1 {
            bail!(Shape, "backward from a non-scalar node of shape {:?}", self.shape(root));
        }
        self.backward_seeded(root, vec![T::one()])
    }

    /// Back-propagates an explicit upstream gradient for `root`.
    pub fn backward_seeded(&mut self, root: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.tensor(root).len() {
            bail!(Shape, "seed gradient length {} for node of length {}", seed.len(), self.tensor(root).len());
        }
        for node in &mut self.nodes {
            node.tensor.clear_grad();
        }
        if !self.rg(root) {
            return Ok(());
        }
        self.nodes[root.0].tensor.set_grad(seed)?;
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].tensor.take_grad() else { continue };
            let contributions = self.local_grads(i, &g);
            self.nodes[i].tensor.set_grad(g)?;
            for (v, c) in contributions {
                self.accumulate(v, c)?;
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, c: Vec<T>) -> Result<()> {
        let t = &mut self.nodes[v.0].tensor;
        match t.take_grad() {
            None => t.set_grad(c),
            Some(mut g) => {
                if g.len() != c.len() {
                    return Err(crate::Error::Shape(format!("gradient length mismatch at node {}", v.0)));
                }
                for (a, b) in g.iter_mut().zip(c) {
                    *a += b;
                }
                t.set_grad(g)
            }
        }
    }

    fn local_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let mut out = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv3d { input, kernel, bias } => {
                let xs = self.shape(*input);
                let ks = self.shape(*kernel);
                let geom = conv::ConvGeom { n: xs[0], ci: xs[1], co: ks[0], s: [xs[2], xs[3], xs[4]] };
                let grads = conv::backward(&geom, self.value(*input), self.value(*kernel), g, self.rg(*input));
                if let Some(dx) = grads.input {
                    out.push((*input, dx));
                }
                if self.rg(*kernel) {
                    out.push((*kernel, grads.kernel));
                }
                if self.rg(*bias) {
                    out.push((*bias, grads.bias));
                }
            }
            Op::MaxPool3d { input, argmax } => {
                if self.rg(*input) {
                    out.push((*input, pool::backward(g, argmax, self.tensor(*input).len())));
                }
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, training } => {
                let xs = self.shape(*input);
                let sp: usize = xs[2..].iter().product();
                let grads =
                    norm::backward(g, xhat, inv_std, self.value(*gamma), xs[0], xs[1], sp, *training);
                if self.rg(*input) {
                    out.push((*input, grads.input));
                }
                if self.rg(*gamma) {
                    out.push((*gamma, grads.gamma));
                }
                if self.rg(*beta) {
                    out.push((*beta, grads.beta));
                }
            }
            Op::Relu { input } => {
                let dx = self
                    .value(*input)
                    .iter()
                    .zip(g)
                    .map(|(&x, &d)| if x > T::zero() { d } else { T::zero() })
                    .collect();
                out.push((*input, dx));
            }
            Op::Linear { input, weight, bias } => {
                let (xs, ws) = (self.shape(*input), self.shape(*weight));
                let (n, f, u) = (xs[0], xs[1], ws[1]);
                if self.rg(*input) {
                    let mut dx = vec![T::zero(); n * f];
                    super::gemm::matmul(n, u, f, g, false, self.value(*weight), true, &mut dx, T::zero());
                    out.push((*input, dx));
                }
                if self.rg(*weight) {
                    let mut dw = vec![T::zero(); f * u];
                    super::gemm::matmul(f, n, u, self.value(*input), true, g, false, &mut dw, T::zero());
                    out.push((*weight, dw));
                }
                if self.rg(*bias) {
                    let db = (0..u)
                        .map(|j| T::of((0..n).map(|r| g[r * u + j].f64()).sum::<f64>()))
                        .collect();
                    out.push((*bias, db));
                }
            }
            Op::Dropout { input, scale } => {
                let dx = match scale {
                    Some(s) => g.iter().zip(s).map(|(&d, &m)| d * m).collect(),
                    None => g.to_vec(),
                };
                out.push((*input, dx));
            }
            Op::Reshape { input } => out.push((*input, g.to_vec())),
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let c = self.shape(*logits)[1];
                let n = labels.len() as f64;
                let up = g[0].f64();
                let mut dx: Vec<T> = probs.iter().map(|&p| T::of(p * up / n)).collect();
                for (r, &l) in labels.iter().enumerate() {
                    dx[r * c + l] = T::of((probs[r * c + l] - 1.0) * up / n);
                }
                out.push((*logits, dx));
            }
            Op::L2Penalty { weights, lambda } => {
                let k = 2.0 * lambda * g[0].f64();
                for &w in weights {
                    if self.rg(w) {
                        out.push((w, self.value(w).iter().map(|&v| T::of(k * v.f64())).collect()));
                    }
                }
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.rg(*b) {
                    out.push((*b, g.to_vec()));
                }
            }
        }
        out.retain(|(v, _)| self.rg(*v));
        out
    }
}

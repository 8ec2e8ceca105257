//! Batch normalization over the batch and spatial axes of `[N, C, ...]`.

use alloc::vec;
use alloc::vec::Vec;

use super::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Running statistics used at inference time.
///
/// Updated as `running = momentum * running + (1 - momentum) * batch`; the
/// batch variance fed into the update is the unbiased estimate. The first
/// update replaces the initial (0, 1) values outright.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    pub updates: u64,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub(crate) fn update(&mut self, batch_mean: &[f64], batch_var_unbiased: &[f64]) {
        let m = if self.updates == 0 { 0.0 } else { self.momentum };
        self.updates += 1;
        for (r, &b) in self.mean.iter_mut().zip(batch_mean) {
            *r = T::of(m * r.f64() + (1.0 - m) * b);
        }
        for (r, &b) in self.var.iter_mut().zip(batch_var_unbiased) {
            *r = T::of((m * r.f64() + (1.0 - m) * b).max(0.0));
        }
    }

    pub fn cast<U: Real>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.iter().map(|v| U::of(v.f64())).collect(),
            var: self.var.iter().map(|v| U::of(v.f64())).collect(),
            momentum: self.momentum,
            eps: self.eps,
            updates: self.updates,
        }
    }
}

/// Learnable scale/shift plus running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running: RunningStats<T>,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running: RunningStats::new(channels),
        }
    }

    pub fn cast<U: Real>(&self) -> BatchNormState<U> {
        BatchNormState { gamma: self.gamma.cast(), beta: self.beta.cast(), running: self.running.cast() }
    }
}

/// Sum with eight independent accumulators, which lets the compiler keep
/// several additions in flight.
fn sum_f64(it: impl Iterator<Item = f64>) -> f64 {
    let mut acc = [0.0f64; 8];
    for (i, v) in it.enumerate() {
        acc[i & 7] += v;
    }
    acc.iter().sum()
}

pub(crate) struct BnForward<T> {
    pub out: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var_unbiased: Vec<f64>,
}

/// `n` samples, `c` channels, `sp` spatial elements per channel.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    sp: usize,
    gamma: &[T],
    beta: &[T],
    running: &RunningStats<T>,
    training: bool,
) -> BnForward<T> {
    let m = (n * sp) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    let mut unbiased = Vec::new();
    if training {
        for ch in 0..c {
            let mut s = 0.0;
            for s_ in 0..n {
                let off = (s_ * c + ch) * sp;
                s += sum_f64(x[off..off + sp].iter().map(|v| v.f64()));
            }
            mean[ch] = s / m;
            let mu = mean[ch];
            let mut q = 0.0;
            for s_ in 0..n {
                let off = (s_ * c + ch) * sp;
                q += sum_f64(x[off..off + sp].iter().map(|v| (v.f64() - mu) * (v.f64() - mu)));
            }
            var[ch] = q / m;
        }
        unbiased = var.iter().map(|v| v * m / (m - 1.0)).collect();
    } else {
        for ch in 0..c {
            mean[ch] = running.mean[ch].f64();
            var[ch] = running.var[ch].f64();
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / num_traits::Float::sqrt(v + running.eps)).collect();
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for s_ in 0..n {
        for ch in 0..c {
            let off = (s_ * c + ch) * sp;
            let (mu, is) = (T::of(mean[ch]), T::of(inv_std[ch]));
            let (g, b) = (gamma[ch], beta[ch]);
            for ((h, o), &v) in xhat[off..off + sp].iter_mut().zip(&mut out[off..off + sp]).zip(&x[off..off + sp]) {
                *h = (v - mu) * is;
                *o = g * *h + b;
            }
        }
    }
    BnForward { out, xhat, inv_std, batch_mean: mean, batch_var_unbiased: unbiased }
}

pub(crate) struct BnGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[f64],
    gamma: &[T],
    n: usize,
    c: usize,
    sp: usize,
    training: bool,
) -> BnGrads<T> {
    let m = (n * sp) as f64;
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xhat = vec![0.0f64; c];
    for s_ in 0..n {
        for ch in 0..c {
            let off = (s_ * c + ch) * sp;
            let (d, h) = (&dy[off..off + sp], &xhat[off..off + sp]);
            sum_dy[ch] += sum_f64(d.iter().map(|v| v.f64()));
            sum_dy_xhat[ch] += sum_f64(d.iter().zip(h).map(|(a, b)| a.f64() * b.f64()));
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for s_ in 0..n {
        for ch in 0..c {
            let off = (s_ * c + ch) * sp;
            let scale = T::of(gamma[ch].f64() * inv_std[ch]);
            let (d, h) = (&dy[off..off + sp], &xhat[off..off + sp]);
            let out = &mut dx[off..off + sp];
            if training {
                let (a, b) = (T::of(sum_dy[ch] / m), T::of(sum_dy_xhat[ch] / m));
                for ((o, &d), &h) in out.iter_mut().zip(d).zip(h) {
                    *o = scale * (d - a - h * b);
                }
            } else {
                for (o, &d) in out.iter_mut().zip(d) {
                    *o = scale * d;
                }
            }
        }
    }
    BnGrads {
        input: dx,
        gamma: sum_dy_xhat.into_iter().map(T::of).collect(),
        beta: sum_dy.into_iter().map(T::of).collect(),
    }
}

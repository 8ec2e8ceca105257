use alloc::vec;
use alloc::vec::Vec;


use super::{Real, Tensor};
use crate::error::{bail, Result};

/// Bias-corrected Adam.
///
/// Moments are allocated lazily on the first step and their shapes are fixed
/// from then on.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Default for AdamState<T> {
    /// lr 1e-6, β₁ 0.9, β₂ 0.999, ε 1e-8.
    fn default() -> Self {
        Self::new(1e-6, 0.9, 0.999, 1e-8)
    }
}

impl<T: Real> AdamState<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            bail!(Shape, "{} parameters but {} gradients", params.len(), grads.len());
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                bail!(Shape, "parameter {} has {} elements, gradient {}", i, p.len(), g.len());
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            bail!(Shape, "parameter shapes changed between Adam steps");
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - num_traits::Float::powi(b1, self.t as i32);
        let c2 = 1.0 - num_traits::Float::powi(b2, self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((w, &gi), mi), vi) in p.values_mut().iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gd = gi.f64();
                let mn = b1 * mi.f64() + (1.0 - b1) * gd;
                let vn = b2 * vi.f64() + (1.0 - b2) * gd * gd;
                *mi = T::of(mn);
                *vi = T::of(vn);
                let upd = self.lr * (mn / c1) / (num_traits::Float::sqrt(vn / c2) + self.eps);
                *w = T::of(w.f64() - upd);
            }
        }
        Ok(())
    }
}

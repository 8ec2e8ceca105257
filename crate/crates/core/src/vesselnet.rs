//! The vessel classifier: four conv blocks (3×3×3 conv, ReLU, batch norm,
//! 2×2×2 max pool) followed by flatten, a hidden fully connected layer with
//! ReLU and dropout, and a two-way output layer.
//!
//! Network tensors are `[N, C, W, H, L]` with `L` fastest. Volumes store `x`
//! fastest, so [`batch_tensor`] transposes on the way in.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{bail, Result};
use crate::pipeline::PreprocessedVolume;
use crate::rng::{self, tag};
use crate::tensor::{BatchNormState, Real, Tape, Tensor, Var};
use crate::volume::Dims3;

pub const DEFAULT_FILTERS: [usize; 4] = [32, 64, 128, 256];
pub const DEFAULT_FC_HIDDEN: usize = 256;
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VesselNetConfig {
    pub input_dims: Dims3,
    pub conv_filters: [usize; 4],
    pub fc_hidden: usize,
    pub keep_rate: f64,
    pub lambda_l2: f64,
}

impl Default for VesselNetConfig {
    fn default() -> Self {
        Self::with_dims(Dims3::new(21, 21, 350))
    }
}

impl VesselNetConfig {
    pub fn with_dims(input_dims: Dims3) -> Self {
        Self {
            input_dims,
            conv_filters: DEFAULT_FILTERS,
            fc_hidden: DEFAULT_FC_HIDDEN,
            keep_rate: 0.5,
            lambda_l2: 1e-3,
        }
    }

    /// Spatial extents `[W, H, L]` entering each block, then after the last pool.
    pub fn block_extents(&self) -> [[usize; 3]; 5] {
        let d = self.input_dims;
        let mut e = [[d.w, d.h, d.l]; 5];
        for b in 1..5 {
            e[b] = e[b - 1].map(|v| v / 2);
        }
        e
    }

    pub fn flatten_width(&self) -> usize {
        self.block_extents()[4].iter().product::<usize>() * self.conv_filters[3]
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.block_extents();
        if let Some(b) = (0..4).find(|&b| e[b].iter().any(|&v| v < 2)) {
            bail!(
                Config,
                "input {} collapses before pool {} (extents {:?})",
                self.input_dims,
                b + 1,
                e[b]
            );
        }
        if self.conv_filters.contains(&0) || self.fc_hidden == 0 {
            bail!(Config, "layer widths must be positive");
        }
        if !(self.keep_rate > 0.0 && self.keep_rate <= 1.0) {
            bail!(Config, "keep rate {} outside (0, 1]", self.keep_rate);
        }
        if !(self.lambda_l2 >= 0.0) {
            bail!(Config, "L2 weight decay {} is negative", self.lambda_l2);
        }
        Ok(())
    }

    /// Learnable scalars: conv `27·Ci·Co + Co`, batch norm `2·C`, dense `F·U + U`.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut ci = 1;
        for &co in &self.conv_filters {
            n += 27 * ci * co + co + 2 * co;
            ci = co;
        }
        let f = self.flatten_width();
        n + f * self.fc_hidden + self.fc_hidden + self.fc_hidden * NUM_CLASSES + NUM_CLASSES
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub bn: BatchNormState<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VesselNetParams<T> {
    pub config: VesselNetConfig,
    pub blocks: Vec<ConvBlock<T>>,
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
}

fn he_normal<T: Real>(shape: &[usize], fan_in: usize, seed: u64, layer: u64) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let mut rng = rng::stream(seed, &[tag::INIT, layer]);
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| T::of(dist.sample(&mut rng))).collect();
    Tensor::new(shape, values).expect("consistent shape")
}

/// Fresh parameters: He-normal weights, zero biases, identity batch norm.
pub fn build<T: Real>(config: &VesselNetConfig, seed: u64) -> Result<VesselNetParams<T>> {
    config.validate()?;
    let mut blocks = Vec::with_capacity(4);
    let mut ci = 1;
    for (b, &co) in config.conv_filters.iter().enumerate() {
        blocks.push(ConvBlock {
            kernel: he_normal(&[co, ci, 3, 3, 3], 27 * ci, seed, b as u64),
            bias: Tensor::zeros(&[co]),
            bn: BatchNormState::new(co),
        });
        ci = co;
    }
    let f = config.flatten_width();
    let u = config.fc_hidden;
    Ok(VesselNetParams {
        config: *config,
        blocks,
        fc1_w: he_normal(&[f, u], f, seed, 4),
        fc1_b: Tensor::zeros(&[u]),
        fc2_w: he_normal(&[u, NUM_CLASSES], u, seed, 5),
        fc2_b: Tensor::zeros(&[NUM_CLASSES]),
    })
}

impl<T: Real> VesselNetParams<T> {
    /// Learnable tensors in declaration order: per block kernel, bias, gamma,
    /// beta; then the two dense layers' weight and bias.
    pub fn learnables(&self) -> Vec<&Tensor<T>> {
        let mut v = Vec::with_capacity(20);
        for b in &self.blocks {
            v.extend([&b.kernel, &b.bias, &b.bn.gamma, &b.bn.beta]);
        }
        v.extend([&self.fc1_w, &self.fc1_b, &self.fc2_w, &self.fc2_b]);
        v
    }

    pub fn learnables_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::with_capacity(20);
        for b in &mut self.blocks {
            v.extend([&mut b.kernel, &mut b.bias, &mut b.bn.gamma, &mut b.bn.beta]);
        }
        v.extend([&mut self.fc1_w, &mut self.fc1_b, &mut self.fc2_w, &mut self.fc2_b]);
        v
    }

    /// Tensors subject to weight decay: conv kernels and dense weights.
    pub fn decayed_weights(&self) -> Vec<&Tensor<T>> {
        let mut v: Vec<&Tensor<T>> = self.blocks.iter().map(|b| &b.kernel).collect();
        v.extend([&self.fc1_w, &self.fc2_w]);
        v
    }

    pub fn all_finite(&self) -> bool {
        self.learnables().iter().all(|t| t.all_finite())
            && self
                .blocks
                .iter()
                .all(|b| b.bn.running.mean.iter().chain(&b.bn.running.var).all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> VesselNetParams<U> {
        VesselNetParams {
            config: self.config,
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock { kernel: b.kernel.cast(), bias: b.bias.cast(), bn: b.bn.cast() })
                .collect(),
            fc1_w: self.fc1_w.cast(),
            fc1_b: self.fc1_b.cast(),
            fc2_w: self.fc2_w.cast(),
            fc2_b: self.fc2_b.cast(),
        }
    }
}

/// Handles into a forward pass recorded on a tape.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Var,
    /// Fourth block's activation after ReLU, before normalization and pooling.
    pub conv4: Var,
    /// Learnable leaves, in [`VesselNetParams::learnables`] order.
    pub learnables: Vec<Var>,
    /// Weight-decayed leaves, in [`VesselNetParams::decayed_weights`] order.
    pub decayed: Vec<Var>,
}

/// Records the network on `tape`. In training mode batch statistics are used
/// (and folded into the running statistics) and dropout draws from `rng`.
pub fn forward<T: Real, R: Rng + ?Sized>(
    params: &mut VesselNetParams<T>,
    tape: &mut Tape<T>,
    batch: Tensor<T>,
    training: bool,
    rng: &mut R,
) -> Result<ForwardTrace> {
    let d = params.config.input_dims;
    let s = batch.shape();
    if s.len() != 5 || s[1] != 1 || s[2..] != [d.w, d.h, d.l] {
        bail!(Shape, "batch shape {:?} does not match [N, 1, {}, {}, {}]", s, d.w, d.h, d.l);
    }
    let n = s[0];
    if training && n < 2 {
        bail!(Precondition, "training batches need at least 2 samples, got {}", n);
    }
    let mut x = tape.constant(batch);
    let mut learnables = Vec::with_capacity(20);
    let mut decayed = Vec::with_capacity(6);
    let mut conv4 = x;
    for (bi, block) in params.blocks.iter_mut().enumerate() {
        let k = tape.param(block.kernel.clone());
        let b = tape.param(block.bias.clone());
        let g = tape.param(block.bn.gamma.clone());
        let be = tape.param(block.bn.beta.clone());
        learnables.extend([k, b, g, be]);
        decayed.push(k);
        let c = tape.conv3d(x, k, b)?;
        let a = tape.relu(c);
        if bi == 3 {
            conv4 = a;
        }
        let nrm = tape.batchnorm(a, g, be, &mut block.bn.running, training)?;
        x = tape.maxpool3d(nrm)?;
    }
    let flat = tape.reshape(x, &[n, params.config.flatten_width()])?;
    let w1 = tape.param(params.fc1_w.clone());
    let b1 = tape.param(params.fc1_b.clone());
    let w2 = tape.param(params.fc2_w.clone());
    let b2 = tape.param(params.fc2_b.clone());
    learnables.extend([w1, b1, w2, b2]);
    decayed.extend([w1, w2]);
    let h = tape.linear(flat, w1, b1)?;
    let h = tape.relu(h);
    let h = tape.dropout(h, params.config.keep_rate, training, rng)?;
    let logits = tape.linear(h, w2, b2)?;
    Ok(ForwardTrace { logits, conv4, learnables, decayed })
}

/// Packs volumes into `[N, 1, W, H, L]`.
pub fn batch_tensor<T: Real>(volumes: &[&PreprocessedVolume]) -> Result<Tensor<T>> {
    let Some(first) = volumes.first() else {
        bail!(Shape, "empty batch");
    };
    let d = first.dims;
    let mut values = Vec::with_capacity(volumes.len() * d.len());
    for v in volumes {
        if v.dims != d {
            bail!(Shape, "batch mixes dims {} and {}", d, v.dims);
        }
        values.extend(to_network_order(d, &v.values).into_iter().map(|x| T::of(f64::from(x))));
    }
    Tensor::new(&[volumes.len(), 1, d.w, d.h, d.l], values)
}

/// Reorders an `x`-fastest volume into `[W, H, L]` with `L` fastest.
pub fn to_network_order<V: Copy>(d: Dims3, values: &[V]) -> Vec<V> {
    let mut out = Vec::with_capacity(values.len());
    for x in 0..d.w {
        for y in 0..d.h {
            for z in 0..d.l {
                out.push(values[d.index(x, y, z)]);
            }
        }
    }
    out
}

/// Inverse of [`to_network_order`].
pub fn to_volume_order<V: Copy + Default>(d: Dims3, values: &[V]) -> Vec<V> {
    let mut out = alloc::vec![V::default(); values.len()];
    let mut i = 0;
    for x in 0..d.w {
        for y in 0..d.h {
            for z in 0..d.l {
                out[d.index(x, y, z)] = values[i];
                i += 1;
            }
        }
    }
    out
}

/// Row-wise `P(abnormal)` from `[N, 2]` logits.
pub fn softmax_abnormal(logits: &[f64]) -> Vec<f64> {
    logits
        .chunks_exact(NUM_CLASSES)
        .map(|r| {
            let m = r[0].max(r[1]);
            let (e0, e1) = ((r[0] - m).exp(), (r[1] - m).exp());
            e1 / (e0 + e1)
        })
        .collect()
}

/// Inference-mode logits for a batch, as `f64`.
pub fn logits<T: Real>(params: &VesselNetParams<T>, batch: Tensor<T>) -> Result<Vec<f64>> {
    let mut p = params.clone();
    let mut tape = Tape::new();
    let mut unused = rng::stream(0, &[]);
    let tr = forward(&mut p, &mut tape, batch, false, &mut unused)?;
    let out: Vec<f64> = tape.value(tr.logits).iter().map(|v| v.f64()).collect();
    if out.iter().any(|v| !v.is_finite()) {
        bail!(Numeric, "non-finite logits");
    }
    Ok(out)
}

/// Inference-mode abnormal-class probabilities.
pub fn predict_proba<T: Real>(params: &VesselNetParams<T>, batch: Tensor<T>) -> Result<Vec<f64>> {
    Ok(softmax_abnormal(&logits(params, batch)?))
}

/// Probabilities for any number of volumes, evaluated in chunks.
pub fn predict_volumes<T: Real>(params: &VesselNetParams<T>, volumes: &[&PreprocessedVolume], chunk: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(volumes.len());
    for c in volumes.chunks(chunk.max(1)) {
        out.extend(predict_proba(params, batch_tensor(c)?)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extents_walk() {
        let c = VesselNetConfig::default();
        let e = c.block_extents();
        assert_eq!(e[4], [1, 1, 21]);
        assert_eq!(e[3], [2, 2, 43]);
    }

    #[test]
    fn network_order_round_trip() {
        let d = Dims3::new(3, 2, 4);
        let v: Vec<u32> = (0..24).collect();
        let n = to_network_order(d, &v);
        assert_eq!(n[1], v[d.index(0, 0, 1)]);
        assert_eq!(to_volume_order(d, &n), v);
    }
}

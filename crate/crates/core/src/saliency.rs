//! Grad-CAM heat maps over the fourth convolution block.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{bail, Result};
use crate::pipeline::PreprocessedVolume;
use crate::rng;
use crate::tensor::{Real, Tape};
use crate::vesselnet::{batch_tensor, forward, VesselNetParams, NUM_CLASSES};
use crate::volume::Dims3;

/// Input voxels per fourth-block cell along each axis (three pools of 2).
pub const COARSE_STRIDE: usize = 8;

/// Heat map on the volume grid (`x` fastest), values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub dims: Dims3,
    pub values: Vec<f32>,
    pub vessel_id: String,
    pub class_index: usize,
}

impl SaliencyMap {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Linear index of the first maximal voxel.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

/// Un-normalized class activation on the fourth-block grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseCam {
    /// `[W, H, L]` extents, `L` fastest.
    pub extents: [usize; 3],
    pub values: Vec<f64>,
    /// Per-channel weights (spatial mean of the logit gradient).
    pub weights: Vec<f64>,
    pub logit: f64,
}

fn argmax<V: PartialOrd + Copy>(v: &[V]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Class-activation map of one volume before upsampling.
pub fn coarse_cam<T: Real>(params: &VesselNetParams<T>, volume: &PreprocessedVolume, class_index: usize) -> Result<CoarseCam> {
    if class_index >= NUM_CLASSES {
        bail!(Parameter, "class index {} out of range", class_index);
    }
    if !params.all_finite() {
        bail!(Numeric, "model parameters contain NaN or infinity");
    }
    let mut p = params.clone();
    let mut tape = Tape::new();
    let mut unused = rng::stream(0, &[]);
    let tr = forward(&mut p, &mut tape, batch_tensor(&[volume])?, false, &mut unused)?;
    let logit = tape.value(tr.logits)[class_index].f64();
    let mut seed = vec![T::zero(); NUM_CLASSES];
    seed[class_index] = T::one();
    tape.backward_seeded(tr.logits, seed)?;

    let shape = tape.shape(tr.conv4).to_vec();
    let (c, sp) = (shape[1], shape[2] * shape[3] * shape[4]);
    let act = tape.value(tr.conv4);
    let Some(grad) = tape.grad(tr.conv4) else {
        bail!(Numeric, "no gradient reached the fourth convolution block");
    };
    let weights: Vec<f64> = (0..c)
        .map(|k| grad[k * sp..(k + 1) * sp].iter().map(|g| g.f64()).sum::<f64>() / sp as f64)
        .collect();
    let mut values = vec![0.0f64; sp];
    for (k, &wk) in weights.iter().enumerate() {
        for (o, a) in values.iter_mut().zip(&act[k * sp..(k + 1) * sp]) {
            *o += wk * a.f64();
        }
    }
    for v in &mut values {
        *v = v.max(0.0);
    }
    if !logit.is_finite() || values.iter().any(|v| !v.is_finite()) {
        bail!(Numeric, "non-finite class activation");
    }
    Ok(CoarseCam { extents: [shape[2], shape[3], shape[4]], values, weights, logit })
}

/// Position on a coarse axis of `n` cells for input coordinate `x`, taking
/// each cell's value to sit at the center of the input block it covers.
fn coarse_coord(x: usize, n: usize) -> (usize, usize, f64) {
    let stride = COARSE_STRIDE as f64;
    let u = ((x as f64 + 0.5) / stride - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = (u.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, u - i0 as f64)
}

/// Trilinear interpolation of a coarse `[W, H, L]` grid (`L` fastest) onto
/// the volume grid `dims` (`x` fastest).
pub fn upsample(extents: [usize; 3], coarse: &[f64], dims: Dims3) -> Result<Vec<f64>> {
    if extents.iter().any(|&e| e == 0) || coarse.len() != extents.iter().product::<usize>() {
        bail!(Shape, "coarse grid {:?} with {} values", extents, coarse.len());
    }
    let [cw, ch, cl] = extents;
    let at = |i: usize, j: usize, k: usize| coarse[(i * ch + j) * cl + k];
    let zs: Vec<_> = (0..dims.l).map(|z| coarse_coord(z, cl)).collect();
    let mut out = Vec::with_capacity(dims.len());
    for z in 0..dims.l {
        let (k0, k1, fk) = zs[z];
        for y in 0..dims.h {
            let (j0, j1, fj) = coarse_coord(y, ch);
            for x in 0..dims.w {
                let (i0, i1, fi) = coarse_coord(x, cw);
                let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
                let plane = |k: usize| {
                    lerp(lerp(at(i0, j0, k), at(i1, j0, k), fi), lerp(at(i0, j1, k), at(i1, j1, k), fi), fj)
                };
                out.push(lerp(plane(k0), plane(k1), fk));
            }
        }
    }
    Ok(out)
}

/// Scales by the maximum so the peak is 1. A map with no positive value
/// becomes all zeros.
pub fn max_normalize(values: &[f64]) -> Vec<f32> {
    let m = values.iter().cloned().fold(0.0f64, f64::max);
    if m <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v.max(0.0) / m) as f32).collect()
}

/// Grad-CAM for `class_index`, upsampled to the volume grid and
/// max-normalized.
pub fn grad_cam<T: Real>(params: &VesselNetParams<T>, volume: &PreprocessedVolume, class_index: usize) -> Result<SaliencyMap> {
    let cam = coarse_cam(params, volume, class_index)?;
    let up = upsample(cam.extents, &cam.values, volume.dims)?;
    Ok(SaliencyMap {
        dims: volume.dims,
        values: max_normalize(&up),
        vessel_id: volume.provenance.vessel_id.clone(),
        class_index,
    })
}

/// Voxels at or above `tau` times the map maximum. A zero map gives an empty mask.
pub fn binarize(map: &SaliencyMap, tau: f64) -> Result<Vec<bool>> {
    if !(tau > 0.0 && tau < 1.0) {
        bail!(Parameter, "binarization threshold must lie in (0, 1), got {}", tau);
    }
    let m = map.values.iter().cloned().fold(0.0f32, f32::max);
    if m <= 0.0 {
        return Ok(vec![false; map.values.len()]);
    }
    let cut = tau * f64::from(m);
    Ok(map.values.iter().map(|&v| f64::from(v) >= cut).collect())
}

/// Class logit of `volume` and of a copy with every `occluded` voxel set to 0.
pub fn occlusion_logits<T: Real>(
    params: &VesselNetParams<T>,
    volume: &PreprocessedVolume,
    occluded: &[bool],
    class_index: usize,
) -> Result<(f64, f64)> {
    if occluded.len() != volume.values.len() {
        bail!(Shape, "occlusion mask of {} voxels for a volume of {}", occluded.len(), volume.values.len());
    }
    let mut masked = volume.clone();
    for (v, &o) in masked.values.iter_mut().zip(occluded) {
        if o {
            *v = 0.0;
        }
    }
    let l = crate::vesselnet::logits(params, batch_tensor(&[volume, &masked])?)?;
    Ok((l[class_index], l[NUM_CLASSES + class_index]))
}

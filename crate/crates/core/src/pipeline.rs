//! Preprocessing of straightened MPR volumes: intensity clamping, fixed-range
//! normalization, distal zero padding, rotation about the centerline and
//! class-balancing augmentation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{bail, Result};
use crate::rng::{self, tag};
use crate::volume::{Dims3, RawVesselVolume, VesselLabel};

pub const CLAMP_LOW: u16 = 800;
pub const CLAMP_HIGH: u16 = 2200;
/// Default processing length along the centerline.
pub const DEFAULT_PROCESSING_LENGTH: usize = 350;

/// Where a preprocessed volume came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub subject_id: String,
    pub vessel_id: String,
    /// Rotation applied by augmentation, in degrees; `None` for originals.
    pub angle: Option<f64>,
}

/// Normalized volume with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedVolume {
    pub dims: Dims3,
    pub values: Vec<f32>,
    pub mask: Option<Vec<u8>>,
    pub provenance: Provenance,
    pub label: VesselLabel,
}

/// Restricts every voxel to `[800, 2200]`.
pub fn clamp(volume: &RawVesselVolume) -> Result<RawVesselVolume> {
    volume.validate()?;
    let mut out = volume.clone();
    for v in &mut out.intensities {
        *v = (*v).clamp(CLAMP_LOW, CLAMP_HIGH);
    }
    Ok(out)
}

/// Maps a clamped volume linearly from `[800, 2200]` onto `[0, 1]`.
pub fn normalize(volume: &RawVesselVolume) -> Result<PreprocessedVolume> {
    if volume.intensities.len() != volume.dims.len() {
        bail!(Shape, "volume {}: payload does not match dims {}", volume.vessel_id, volume.dims);
    }
    if let Some(v) = volume.intensities.iter().find(|v| !(CLAMP_LOW..=CLAMP_HIGH).contains(*v)) {
        bail!(Contract, "volume {} is not clamped: found intensity {}", volume.vessel_id, v);
    }
    let span = f64::from(CLAMP_HIGH - CLAMP_LOW);
    let values = volume
        .intensities
        .iter()
        .map(|&v| ((f64::from(v) - f64::from(CLAMP_LOW)) / span) as f32)
        .collect();
    Ok(PreprocessedVolume {
        dims: volume.dims,
        values,
        mask: volume.mask.clone(),
        provenance: Provenance {
            subject_id: volume.subject_id.clone(),
            vessel_id: volume.vessel_id.clone(),
            angle: None,
        },
        label: volume.label,
    })
}

/// Appends empty (0.0) frames at the distal end up to `target` frames.
pub fn pad_to_length(volume: &PreprocessedVolume, target: usize) -> Result<PreprocessedVolume> {
    let l = volume.dims.l;
    if l > target {
        bail!(
            Length,
            "volume {} has {} frames, longer than the processing length {}",
            volume.provenance.vessel_id,
            l,
            target
        );
    }
    let mut out = volume.clone();
    let extra = (target - l) * volume.dims.frame_len();
    out.values.extend(core::iter::repeat_n(0.0f32, extra));
    if let Some(m) = &mut out.mask {
        m.extend(core::iter::repeat_n(0u8, extra));
    }
    out.dims.l = target;
    Ok(out)
}

/// Clamp, normalize and pad in one go.
pub fn preprocess(volume: &RawVesselVolume, target: usize) -> Result<PreprocessedVolume> {
    pad_to_length(&normalize(&clamp(volume)?)?, target)
}

/// Rotates every cross-sectional frame by `theta` degrees about the grid
/// center. Intensities are resampled bilinearly (outside samples read 0.0),
/// the mask by nearest neighbour. Multiples of 90° are exact permutations:
/// a quarter turn sends `(row, col)` to `(col, W-1-row)`.
pub fn rotate_about_centerline(volume: &PreprocessedVolume, theta: f64) -> Result<PreprocessedVolume> {
    let Dims3 { w, h, l } = volume.dims;
    if w != h || w % 2 == 0 {
        bail!(UnsupportedGeometry, "rotation needs an odd square cross-section, got {}x{}", w, h);
    }
    if !theta.is_finite() {
        bail!(Parameter, "rotation angle must be finite, got {}", theta);
    }
    let mut out = volume.clone();
    out.provenance.angle = Some(theta);
    let turns = theta / 90.0;
    if turns == turns.round() {
        let q = (turns.round() as i64).rem_euclid(4) as usize;
        if q != 0 {
            permute_quarter_turns(volume, &mut out, q);
        }
        return Ok(out);
    }

    let n = w;
    let c = (n as f64 - 1.0) / 2.0;
    let (sin, cos) = theta.to_radians().sin_cos();
    let frame = n * n;
    // Source coordinates are the same for every frame.
    let mut taps: Vec<Option<([usize; 4], [f64; 4])>> = Vec::with_capacity(frame);
    let mut nearest: Vec<Option<usize>> = Vec::with_capacity(frame);
    for r in 0..n {
        for col in 0..n {
            let (u, v) = (col as f64 - c, r as f64 - c);
            let su = u * cos + v * sin;
            let sv = -u * sin + v * cos;
            let (sx, sy) = (su + c, sv + c);
            taps.push(bilinear_taps(sx, sy, n));
            let (nx, ny) = (sx.round(), sy.round());
            nearest.push(
                (nx >= 0.0 && ny >= 0.0 && nx < n as f64 && ny < n as f64)
                    .then(|| ny as usize * n + nx as usize),
            );
        }
    }
    for z in 0..l {
        let src = &volume.values[z * frame..(z + 1) * frame];
        let dst = &mut out.values[z * frame..(z + 1) * frame];
        for (d, tap) in dst.iter_mut().zip(&taps) {
            *d = match tap {
                Some((idx, wt)) => {
                    let s: f64 = idx.iter().zip(wt).map(|(&i, &w)| w * f64::from(src[i])).sum();
                    s as f32
                }
                None => 0.0,
            };
        }
    }
    if let (Some(src_mask), Some(dst_mask)) = (&volume.mask, &mut out.mask) {
        for z in 0..l {
            let src = &src_mask[z * frame..(z + 1) * frame];
            let dst = &mut dst_mask[z * frame..(z + 1) * frame];
            for (d, nb) in dst.iter_mut().zip(&nearest) {
                *d = nb.map_or(0, |i| src[i]);
            }
        }
    }
    Ok(out)
}

/// Four neighbours and weights of `(x, y)`; taps outside the grid get
/// weight on a zero-valued sample, encoded by pointing them at a valid index
/// with weight 0. Returns `None` when the point lies entirely outside.
fn bilinear_taps(x: f64, y: f64, n: usize) -> Option<([usize; 4], [f64; 4])> {
    let nf = n as f64;
    if x <= -1.0 || y <= -1.0 || x >= nf || y >= nf {
        return None;
    }
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let mut idx = [0usize; 4];
    let mut wt = [0.0f64; 4];
    let corners = [(0.0, 0.0, (1.0 - fx) * (1.0 - fy)), (1.0, 0.0, fx * (1.0 - fy)), (0.0, 1.0, (1.0 - fx) * fy), (1.0, 1.0, fx * fy)];
    for (k, (dx, dy, w)) in corners.into_iter().enumerate() {
        let (cx, cy) = (x0 + dx, y0 + dy);
        if cx >= 0.0 && cy >= 0.0 && cx < nf && cy < nf {
            idx[k] = cy as usize * n + cx as usize;
            wt[k] = w;
        }
    }
    Some((idx, wt))
}

fn permute_quarter_turns(src: &PreprocessedVolume, dst: &mut PreprocessedVolume, q: usize) {
    let n = src.dims.w;
    let frame = n * n;
    let map = |r: usize, c: usize| -> (usize, usize) {
        let (mut r, mut c) = (r, c);
        for _ in 0..q {
            (r, c) = (c, n - 1 - r);
        }
        (r, c)
    };
    for z in 0..src.dims.l {
        for r in 0..n {
            for c in 0..n {
                let (r2, c2) = map(r, c);
                let (si, di) = (z * frame + r * n + c, z * frame + r2 * n + c2);
                dst.values[di] = src.values[si];
                if let (Some(sm), Some(dm)) = (&src.mask, &mut dst.mask) {
                    dm[di] = sm[si];
                }
            }
        }
    }
}

/// Tops up every class with rotated copies until each class holds
/// `max(target, largest class)` volumes.
///
/// Originals come first, in input order, followed by the copies. Copy `k` of
/// a class is drawn from original `k mod count` with a uniform angle in
/// `[0, 360)` from a stream keyed by `(seed, vessel_id, k)`.
pub fn augment_balance(
    training: &[PreprocessedVolume],
    target: Option<usize>,
    seed: u64,
) -> Result<Vec<PreprocessedVolume>> {
    let normals: Vec<&PreprocessedVolume> = training.iter().filter(|v| !v.label.is_abnormal()).collect();
    let abnormals: Vec<&PreprocessedVolume> = training.iter().filter(|v| v.label.is_abnormal()).collect();
    if normals.is_empty() || abnormals.is_empty() {
        bail!(
            Data,
            "augmentation needs both classes, got {} normal and {} abnormal",
            normals.len(),
            abnormals.len()
        );
    }
    let goal = target.unwrap_or(0).max(normals.len()).max(abnormals.len());
    let mut out = training.to_vec();
    for class in [&normals, &abnormals] {
        for k in 0..goal - class.len() {
            let src = class[k % class.len()];
            let mut rng = rng::stream(seed, &[tag::AUGMENT, rng::hash_str(&src.provenance.vessel_id), k as u64]);
            let angle = rng.random_range(0.0..360.0);
            out.push(rotate_about_centerline(src, angle).map_err(|e| {
                crate::Error::Data(format!("augmenting {}: {}", src.provenance.vessel_id, e))
            })?);
        }
    }
    Ok(out)
}

/// Counts `(normal, abnormal)` volumes.
pub fn class_counts(set: &[PreprocessedVolume]) -> (usize, usize) {
    let ab = set.iter().filter(|v| v.label.is_abnormal()).count();
    (set.len() - ab, ab)
}

#[doc(hidden)]
pub fn blank(dims: Dims3, vessel_id: &str, label: VesselLabel) -> PreprocessedVolume {
    PreprocessedVolume {
        dims,
        values: vec![0.0; dims.len()],
        mask: None,
        provenance: Provenance { subject_id: String::new(), vessel_id: vessel_id.into(), angle: None },
        label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(vals: &[u16]) -> RawVesselVolume {
        RawVesselVolume {
            dims: Dims3::new(vals.len(), 1, 1),
            intensities: vals.to_vec(),
            mask: None,
            subject_id: "S".into(),
            vessel_id: "V".into(),
            label: VesselLabel::Normal,
        }
    }

    #[test]
    fn clamp_branches() {
        let c = clamp(&raw(&[500, 1500, 3000, 800, 2200, 0, 4095])).unwrap();
        assert_eq!(c.intensities, [800, 1500, 2200, 800, 2200, 800, 2200]);
    }

    #[test]
    fn clamp_rejects_out_of_range() {
        assert!(matches!(clamp(&raw(&[4096])), Err(crate::Error::Format(_))));
    }

    #[test]
    fn normalize_endpoints() {
        let n = normalize(&raw(&[800, 2200, 1500])).unwrap();
        assert_eq!(n.values, [0.0, 1.0, 0.5]);
        assert!(matches!(normalize(&raw(&[799])), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn padding_rules() {
        let mut v = blank(Dims3::new(3, 3, 300), "v", VesselLabel::Normal);
        v.values.iter_mut().for_each(|x| *x = 0.5);
        let p = pad_to_length(&v, 350).unwrap();
        assert_eq!(p.dims.l, 350);
        assert!(p.values[..2700].iter().all(|&x| x == 0.5));
        assert!(p.values[2700..].iter().all(|&x| x == 0.0));
        assert_eq!(p.values.len() - 2700, 50 * 9);

        let same = pad_to_length(&p, 350).unwrap();
        assert_eq!(same, p);
        let long = blank(Dims3::new(3, 3, 351), "v", VesselLabel::Normal);
        assert!(matches!(pad_to_length(&long, 350), Err(crate::Error::Length(_))));
    }

    #[test]
    fn rotation_rejects_non_square() {
        let v = blank(Dims3::new(5, 7, 2), "v", VesselLabel::Normal);
        assert!(matches!(rotate_about_centerline(&v, 10.0), Err(crate::Error::UnsupportedGeometry(_))));
    }

    #[test]
    fn quarter_turn_mapping() {
        let mut v = blank(Dims3::new(21, 21, 1), "v", VesselLabel::Normal);
        for (i, x) in v.values.iter_mut().enumerate() {
            *x = i as f32;
        }
        let r = rotate_about_centerline(&v, 90.0).unwrap();
        for row in 0..21 {
            for col in 0..21 {
                assert_eq!(r.values[col * 21 + (20 - row)], v.values[row * 21 + col]);
            }
        }
        let mut back = r;
        for _ in 0..3 {
            back = rotate_about_centerline(&back, 90.0).unwrap();
        }
        assert_eq!(back.values, v.values);
    }

    #[test]
    fn bilinear_matches_quarter_turn_permutation_closely() {
        // Interpolation path at 90° ± tiny must agree with the exact permutation.
        let mut v = blank(Dims3::new(9, 9, 1), "v", VesselLabel::Normal);
        for (i, x) in v.values.iter_mut().enumerate() {
            *x = ((i * 37) % 17) as f32 / 17.0;
        }
        let exact = rotate_about_centerline(&v, 90.0).unwrap();
        let near = rotate_about_centerline(&v, 90.0 + 1e-9).unwrap();
        for (a, b) in exact.values.iter().zip(&near.values) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

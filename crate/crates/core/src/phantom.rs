//! Synthetic straightened-MPR vessels with ground-truth lesion masks.
//!
//! A vessel is a straight tube along `z`: a bright contrast-filled lumen, a
//! darker wall ring and soft-tissue background, plus Gaussian noise. A lesion
//! narrows the lumen over a run of frames (the lost lumen reads as wall) and
//! may carry a calcified blob in the wall. Masks are segment level: every voxel
//! of a frame covered by a lesion carries that lesion's severity code.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{bail, Result};
use crate::rng::{self, tag};
use crate::volume::{Dims3, RawVesselVolume, VesselLabel, MASK_MILD, MASK_SEVERE, MAX_RAW_INTENSITY};

/// Bumped whenever the rendered bytes for a given seed change.
pub const GENERATOR_VERSION: u32 = 1;

pub const LUMEN_INTENSITY: f64 = 1400.0;
pub const WALL_INTENSITY: f64 = 1050.0;
pub const BACKGROUND_INTENSITY: f64 = 900.0;
pub const CALCIFICATION_INTENSITY: f64 = 2600.0;
pub const NOISE_SIGMA: f64 = 40.0;
pub const WALL_THICKNESS: f64 = 1.5;
pub const CALCIFICATION_RADIUS: f64 = 1.5;
const SUBSAMPLES: usize = 4;

/// Coronary branch analogues, in generation order.
pub const BRANCHES: [&str; 3] = ["LAD", "LCX", "RCA"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Mild,
    Severe,
}

impl Severity {
    pub fn of_narrowing(fraction: f64) -> Self {
        if fraction > 0.5 { Severity::Severe } else { Severity::Mild }
    }

    pub fn mask_code(self) -> u8 {
        match self {
            Severity::Mild => MASK_MILD,
            Severity::Severe => MASK_SEVERE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LesionSpec {
    pub center_frame: usize,
    pub extent: usize,
    pub narrowing_fraction: f64,
    pub calcified: bool,
}

impl LesionSpec {
    pub fn severity(&self) -> Severity {
        Severity::of_narrowing(self.narrowing_fraction)
    }

    /// Half-open frame range `[start, end)` covered by the lesion.
    pub fn frames(&self) -> core::ops::Range<usize> {
        let start = self.center_frame.saturating_sub(self.extent / 2);
        start..start + self.extent
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    /// `dims.l` is the vessel length; the tube fills every frame.
    pub dims: Dims3,
    pub lumen_radius_profile: Vec<f64>,
    pub lumen_intensity: f64,
    pub wall_intensity: f64,
    pub background_intensity: f64,
    pub calcification_intensity: f64,
    pub noise_sigma: f64,
    pub wall_thickness: f64,
    pub lesions: Vec<LesionSpec>,
    pub seed: u64,
    pub subject_id: String,
    pub vessel_id: String,
}

impl PhantomSpec {
    /// Lesion-free tube of constant radius with the default intensities.
    pub fn straight(dims: Dims3, radius: f64, seed: u64) -> Self {
        Self {
            dims,
            lumen_radius_profile: vec![radius; dims.l],
            lumen_intensity: LUMEN_INTENSITY,
            wall_intensity: WALL_INTENSITY,
            background_intensity: BACKGROUND_INTENSITY,
            calcification_intensity: CALCIFICATION_INTENSITY,
            noise_sigma: NOISE_SIGMA,
            wall_thickness: WALL_THICKNESS,
            lesions: Vec::new(),
            seed,
            subject_id: String::from("S0000"),
            vessel_id: String::from("S0000-LAD"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Dims3 { w, h, l } = self.dims;
        if self.dims.is_empty() {
            bail!(Spec, "empty dims {}", self.dims);
        }
        if self.lumen_radius_profile.len() != l {
            bail!(Spec, "radius profile has {} entries for {} frames", self.lumen_radius_profile.len(), l);
        }
        let r_max = (w.min(h) as f64 - 1.0) / 2.0;
        if let Some(r) = self.lumen_radius_profile.iter().find(|r| !(**r > 0.0 && **r <= r_max)) {
            bail!(Spec, "lumen radius {} outside (0, {}]", r, r_max);
        }
        for (name, v) in [
            ("lumen", self.lumen_intensity),
            ("wall", self.wall_intensity),
            ("background", self.background_intensity),
            ("calcification", self.calcification_intensity),
        ] {
            if !(0.0..=f64::from(MAX_RAW_INTENSITY)).contains(&v) {
                bail!(Spec, "{} intensity {} outside [0, 4095]", name, v);
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            bail!(Spec, "noise sigma must be finite and non-negative, got {}", self.noise_sigma);
        }
        if !(self.wall_thickness >= 0.0) {
            bail!(Spec, "wall thickness must be non-negative, got {}", self.wall_thickness);
        }
        for les in &self.lesions {
            if !(les.narrowing_fraction > 0.0 && les.narrowing_fraction < 1.0) {
                bail!(Spec, "narrowing fraction {} outside (0, 1)", les.narrowing_fraction);
            }
            if les.extent == 0 || les.frames().end > l {
                bail!(Spec, "lesion frames {:?} outside [0, {})", les.frames(), l);
            }
        }
        for z in 0..l {
            let total: f64 = self.lesions.iter().filter(|s| s.frames().contains(&z)).map(|s| s.narrowing_fraction).sum();
            if total >= 1.0 {
                bail!(Spec, "overlapping lesions occlude frame {} (combined narrowing {})", z, total);
            }
        }
        Ok(())
    }
}

/// Renders one vessel. Deterministic in `spec` (including `spec.seed`).
pub fn generate_vessel(spec: &PhantomSpec) -> Result<RawVesselVolume> {
    spec.validate()?;
    let dims = spec.dims;
    let Dims3 { w, h, l } = dims;
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut rng = rng::stream(spec.seed, &[tag::PHANTOM_VESSEL, rng::hash_str(&spec.vessel_id)]);

    let mut narrowing = vec![0.0f64; l];
    let mut code = vec![0u8; l];
    for les in &spec.lesions {
        for z in les.frames() {
            narrowing[z] += les.narrowing_fraction;
            code[z] = code[z].max(les.severity().mask_code());
        }
    }
    // Calcified blobs sit mid-wall at a random angle around the lesion center.
    let mut blobs: Vec<(f64, f64, f64)> = Vec::new();
    for les in spec.lesions.iter().filter(|s| s.calcified) {
        let angle = rng.random_range(0.0..core::f64::consts::TAU);
        let rad = spec.lumen_radius_profile[les.center_frame] + spec.wall_thickness / 2.0;
        let (s, c) = angle.sin_cos();
        blobs.push((cx + rad * c, cy + rad * s, les.center_frame as f64));
    }

    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| crate::Error::Spec(format!("noise model: {}", e)))?;
    let mut intensities = Vec::with_capacity(dims.len());
    let mut mask = Vec::with_capacity(dims.len());
    for z in 0..l {
        let outer = spec.lumen_radius_profile[z];
        let lumen = outer * (1.0 - narrowing[z]);
        let wall = outer + spec.wall_thickness;
        for y in 0..h {
            for x in 0..w {
                // Partial-volume rendering: average the piecewise profile over a
                // SUBSAMPLES x SUBSAMPLES grid inside the voxel.
                let mut mean = 0.0;
                for sy in 0..SUBSAMPLES {
                    for sx in 0..SUBSAMPLES {
                        let px = x as f64 + (sx as f64 + 0.5) / SUBSAMPLES as f64 - 0.5;
                        let py = y as f64 + (sy as f64 + 0.5) / SUBSAMPLES as f64 - 0.5;
                        let (dx, dy) = (px - cx, py - cy);
                        let r = (dx * dx + dy * dy).sqrt();
                        let in_blob = blobs.iter().any(|&(bx, by, bz)| {
                            let (ex, ey, ez) = (px - bx, py - by, z as f64 - bz);
                            ex * ex + ey * ey + ez * ez <= CALCIFICATION_RADIUS * CALCIFICATION_RADIUS
                        });
                        mean += if in_blob {
                            spec.calcification_intensity
                        } else if r <= lumen {
                            spec.lumen_intensity
                        } else if r <= wall {
                            spec.wall_intensity
                        } else {
                            spec.background_intensity
                        };
                    }
                }
                mean /= (SUBSAMPLES * SUBSAMPLES) as f64;
                let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                let v = (mean + n).round().clamp(0.0, f64::from(MAX_RAW_INTENSITY));
                intensities.push(v as u16);
                mask.push(code[z]);
            }
        }
    }
    let label = if spec.lesions.is_empty() { VesselLabel::Normal } else { VesselLabel::Abnormal };
    Ok(RawVesselVolume {
        dims,
        intensities,
        mask: Some(mask),
        subject_id: spec.subject_id.clone(),
        vessel_id: spec.vessel_id.clone(),
        label,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub label: VesselLabel,
}

#[derive(Debug, Clone)]
pub struct PhantomDataset {
    pub dims: Dims3,
    pub seed: u64,
    pub subjects: Vec<SubjectRecord>,
    pub vessels: Vec<RawVesselVolume>,
}

impl PhantomDataset {
    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject_id.clone()).collect()
    }
}

/// Number of abnormal subjects for a cohort of `n` at `fraction`.
pub fn abnormal_count(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

/// Generates a cohort of `n_subjects`, `round(n * abnormal_fraction)` of them
/// abnormal. Each subject has one to three vessels; each abnormal subject gets
/// one to three non-overlapping lesions spread over its vessels.
pub fn generate_dataset(n_subjects: usize, abnormal_fraction: f64, dims: Dims3, seed: u64) -> Result<PhantomDataset> {
    if n_subjects < 10 {
        bail!(Parameter, "a cohort needs at least 10 subjects, got {}", n_subjects);
    }
    if !(abnormal_fraction > 0.0 && abnormal_fraction < 1.0) {
        bail!(Parameter, "abnormal fraction must lie in (0, 1), got {}", abnormal_fraction);
    }
    if dims.w != dims.h || dims.w < 9 {
        bail!(Parameter, "cross-section must be square and at least 9 voxels, got {}", dims);
    }
    if dims.l < 24 {
        bail!(Parameter, "length must be at least 24 frames, got {}", dims.l);
    }
    let n_abnormal = abnormal_count(n_subjects, abnormal_fraction);
    let mut order: Vec<usize> = (0..n_subjects).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::PHANTOM_COHORT]));
    let mut abnormal = vec![false; n_subjects];
    for &i in &order[..n_abnormal] {
        abnormal[i] = true;
    }

    let mut subjects = Vec::with_capacity(n_subjects);
    let mut vessels = Vec::new();
    for (si, &is_abnormal) in abnormal.iter().enumerate() {
        let subject_id = format!("S{:04}", si + 1);
        let mut rng = rng::stream(seed, &[tag::PHANTOM_SUBJECT, si as u64]);
        let n_vessels = rng.random_range(1..=3usize);
        let mut lesions: Vec<Vec<LesionSpec>> = vec![Vec::new(); n_vessels];
        if is_abnormal {
            let n_lesions = rng.random_range(1..=3usize);
            for _ in 0..n_lesions {
                let vi = rng.random_range(0..n_vessels);
                if let Some(les) = place_lesion(&mut rng, dims.l, &lesions[vi]) {
                    lesions[vi].push(les);
                }
            }
            if lesions.iter().all(Vec::is_empty) {
                // Placement can only fail on a crowded vessel, never on an empty one.
                let les = place_lesion(&mut rng, dims.l, &[]).expect("empty vessel has room");
                lesions[0].push(les);
            }
        }
        for (vi, les) in lesions.into_iter().enumerate() {
            let vessel_id = format!("{}-{}", subject_id, BRANCHES[vi]);
            let base = rng.random_range(3.3..3.7);
            let taper = rng.random_range(0.0..0.2);
            let profile = (0..dims.l).map(|z| base - taper * z as f64 / dims.l as f64).collect();
            let spec = PhantomSpec {
                dims,
                lumen_radius_profile: profile,
                lesions: les,
                seed: rng::derive_id(&[seed, si as u64, vi as u64]),
                subject_id: subject_id.clone(),
                vessel_id,
                ..PhantomSpec::straight(dims, base, 0)
            };
            vessels.push(generate_vessel(&spec)?);
        }
        let label = if is_abnormal { VesselLabel::Abnormal } else { VesselLabel::Normal };
        subjects.push(SubjectRecord { subject_id, label });
    }
    Ok(PhantomDataset { dims, seed, subjects, vessels })
}

/// Draws a lesion that stays inside `[2, len - 2)` and keeps a two-frame gap
/// to `existing`. Gives up after a bounded number of tries.
fn place_lesion<R: Rng + ?Sized>(rng: &mut R, len: usize, existing: &[LesionSpec]) -> Option<LesionSpec> {
    for _ in 0..32 {
        let extent = rng.random_range(16..=32usize).min(len.saturating_sub(4)).max(1);
        let start = rng.random_range(2..=len - 2 - extent);
        let les = LesionSpec {
            center_frame: start + extent / 2,
            extent,
            narrowing_fraction: rng.random_range(0.35..0.85),
            calcified: rng.random_bool(0.5),
        };
        let r = les.frames();
        let clear = existing.iter().all(|o| {
            let q = o.frames();
            r.end + 2 <= q.start || q.end + 2 <= r.start
        });
        if clear {
            return Some(les);
        }
    }
    None
}

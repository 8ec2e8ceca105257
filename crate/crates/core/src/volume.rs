//! Volume containers shared by the pipeline, the phantom generator and the
//! evaluation code. Voxels are stored with the cross-section width axis
//! fastest: `index = x + w * (y + h * z)`, `z` running along the centerline.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Largest raw intensity of a 12-bit scanner.
pub const MAX_RAW_INTENSITY: u16 = 4095;

/// Mask codes.
pub const MASK_BACKGROUND: u8 = 0;
pub const MASK_MILD: u8 = 1;
pub const MASK_SEVERE: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims3 {
    pub w: usize,
    pub h: usize,
    pub l: usize,
}

impl Dims3 {
    pub const fn new(w: usize, h: usize, l: usize) -> Self {
        Self { w, h, l }
    }

    pub const fn len(&self) -> usize {
        self.w * self.h * self.l
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn frame_len(&self) -> usize {
        self.w * self.h
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.w * (y + self.h * z)
    }

    #[inline]
    pub const fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.w;
        let y = (idx / self.w) % self.h;
        let z = idx / (self.w * self.h);
        (x, y, z)
    }
}

impl core::fmt::Display for Dims3 {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}x{}x{}", self.w, self.h, self.l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VesselLabel {
    Normal,
    Abnormal,
}

impl VesselLabel {
    pub fn is_abnormal(self) -> bool {
        self == VesselLabel::Abnormal
    }

    /// Class index used by the classifier (abnormal = 1).
    pub fn class_index(self) -> usize {
        match self {
            VesselLabel::Normal => 0,
            VesselLabel::Abnormal => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VesselLabel::Normal => "normal",
            VesselLabel::Abnormal => "abnormal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "normal" => Some(VesselLabel::Normal),
            "abnormal" => Some(VesselLabel::Abnormal),
            _ => None,
        }
    }
}

/// A straightened MPR volume with raw 12-bit intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVesselVolume {
    pub dims: Dims3,
    pub intensities: Vec<u16>,
    pub mask: Option<Vec<u8>>,
    pub subject_id: String,
    pub vessel_id: String,
    pub label: VesselLabel,
}

impl RawVesselVolume {
    /// Checks the storage invariants: payload sizes and the 12-bit range.
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            bail!(Shape, "volume {} has an empty extent {}", self.vessel_id, self.dims);
        }
        if self.intensities.len() != self.dims.len() {
            bail!(
                Shape,
                "volume {}: {} intensities for dims {}",
                self.vessel_id,
                self.intensities.len(),
                self.dims
            );
        }
        if let Some(mask) = &self.mask {
            if mask.len() != self.dims.len() {
                bail!(Shape, "volume {}: mask size {} != {}", self.vessel_id, mask.len(), self.dims.len());
            }
        }
        if let Some(v) = self.intensities.iter().find(|&&v| v > MAX_RAW_INTENSITY) {
            bail!(Format, "volume {}: intensity {} outside [0, 4095]", self.vessel_id, v);
        }
        Ok(())
    }

    pub fn has_lesion(&self) -> bool {
        self.mask.as_ref().is_some_and(|m| m.iter().any(|&v| v != 0))
    }
}

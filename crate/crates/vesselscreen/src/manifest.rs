//! Dataset manifest (JSON). Paths are relative to the manifest's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vesselscreen_core::{Dims3, RawVesselVolume, VesselLabel};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::v3d::{self, Voxels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl From<Label> for VesselLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::Normal => VesselLabel::Normal,
            Label::Abnormal => VesselLabel::Abnormal,
        }
    }
}

impl From<VesselLabel> for Label {
    fn from(l: VesselLabel) -> Self {
        match l {
            VesselLabel::Normal => Label::Normal,
            VesselLabel::Abnormal => Label::Abnormal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub vessel_id: String,
    pub subject_id: String,
    pub volume_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Set by the phantom generator; absent for external data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_version: Option<u32>,
    /// Processing dims `[W, H, L]`.
    pub dims: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub subjects: Vec<SubjectEntry>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn dims(&self) -> Dims3 {
        Dims3::new(self.dims[0], self.dims[1], self.dims[2])
    }

    /// Subject ids in first-seen order: the subject table if present,
    /// otherwise the entries.
    pub fn subject_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let from_table = self.subjects.iter().map(|s| &s.subject_id);
        let from_entries = self.entries.iter().map(|e| &e.subject_id);
        let all: Vec<&String> = if self.subjects.is_empty() { from_entries.collect() } else { from_table.collect() };
        all.into_iter().filter(|s| seen.insert(s.as_str())).cloned().collect()
    }

    fn check(&self, path: &Path) -> Result<()> {
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            if !ids.insert(e.vessel_id.as_str()) {
                return Err(Error::input(path, format!("duplicate vessel id {}", e.vessel_id)));
            }
        }
        if !self.subjects.is_empty() {
            let known: BTreeSet<&str> = self.subjects.iter().map(|s| s.subject_id.as_str()).collect();
            if known.len() != self.subjects.len() {
                return Err(Error::input(path, "duplicate subject id in subject table"));
            }
            if let Some(e) = self.entries.iter().find(|e| !known.contains(e.subject_id.as_str())) {
                return Err(Error::input(path, format!("vessel {} has unknown subject {}", e.vessel_id, e.subject_id)));
            }
        }
        if self.dims.contains(&0) {
            return Err(Error::input(path, "dims must be positive"));
        }
        Ok(())
    }
}

pub fn load(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::input(path, e.to_string()))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::input(path, format!("line {} column {}: {}", e.line(), e.column(), e)))?;
    m.check(path)?;
    Ok(m)
}

pub fn save(path: &Path, m: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(m).expect("manifest serializes");
    text.push('\n');
    fsutil::write_atomic(path, text.as_bytes())
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Reads one entry's volume and optional mask.
pub fn load_entry(manifest_path: &Path, m: &Manifest, e: &ManifestEntry) -> Result<RawVesselVolume> {
    let base = base_dir(manifest_path);
    let vpath = base.join(&e.volume_path);
    let vol = v3d::read(&vpath)?;
    let Voxels::U16(intensities) = vol.voxels else {
        return Err(Error::input(&vpath, "volume must hold u16 intensities"));
    };
    let mask = match &e.mask_path {
        Some(p) => {
            let mpath = base.join(p);
            let mv = v3d::read(&mpath)?;
            if mv.dims != vol.dims {
                return Err(Error::input(&mpath, format!("mask dims {} differ from volume dims {}", mv.dims, vol.dims)));
            }
            let Voxels::U8(mask) = mv.voxels else {
                return Err(Error::input(&mpath, "mask must hold u8 labels"));
            };
            Some(mask)
        }
        None => None,
    };
    let raw = RawVesselVolume {
        dims: vol.dims,
        intensities,
        mask,
        subject_id: e.subject_id.clone(),
        vessel_id: e.vessel_id.clone(),
        label: e.label.into(),
    };
    raw.validate().map_err(|err| Error::input(&vpath, err.to_string()))?;
    if m.generator_version.is_some() && raw.mask.is_some() && raw.has_lesion() != raw.label.is_abnormal() {
        return Err(Error::input(&vpath, format!("label {} disagrees with mask", raw.label.as_str())));
    }
    Ok(raw)
}

pub fn load_volumes(manifest_path: &Path, m: &Manifest) -> Result<Vec<RawVesselVolume>> {
    m.entries.iter().map(|e| load_entry(manifest_path, m, e)).collect()
}

//! `V3D1` volume container.
//!
//! Layout, little endian: magic `V3D1`, dtype `u8` (0 = u16, 1 = f32, 2 = u8),
//! `W`, `H`, `L` as `u32`, the voxel payload with `x` fastest, then the
//! payload length in bytes as `u64`.

use std::path::Path;

use vesselscreen_core::Dims3;

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"V3D1";
const HEADER: usize = 4 + 1 + 12;

#[derive(Debug, Clone, PartialEq)]
pub enum Voxels {
    U16(Vec<u16>),
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl Voxels {
    pub fn dtype(&self) -> u8 {
        match self {
            Voxels::U16(_) => 0,
            Voxels::F32(_) => 1,
            Voxels::U8(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Voxels::U16(v) => v.len(),
            Voxels::F32(v) => v.len(),
            Voxels::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn dtype_size(code: u8) -> Option<usize> {
    match code {
        0 => Some(2),
        1 => Some(4),
        2 => Some(1),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: Dims3,
    pub voxels: Voxels,
}

pub fn encode(vol: &Volume) -> Vec<u8> {
    assert_eq!(vol.voxels.len(), vol.dims.len(), "voxel count must match dims");
    let mut out = Vec::with_capacity(HEADER + vol.dims.len() * 4 + 8);
    out.extend_from_slice(MAGIC);
    out.push(vol.voxels.dtype());
    for d in [vol.dims.w, vol.dims.h, vol.dims.l] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match &vol.voxels {
        Voxels::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Voxels::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Voxels::U8(v) => out.extend_from_slice(v),
    }
    let payload = (out.len() - HEADER) as u64;
    out.extend_from_slice(&payload.to_le_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Volume, String> {
    if bytes.len() < HEADER + 8 {
        return Err(format!("truncated: {} bytes", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err("bad magic, expected V3D1".into());
    }
    let code = bytes[4];
    let size = dtype_size(code).ok_or_else(|| format!("unknown dtype code {}", code))?;
    let dim = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
    let dims = Dims3::new(dim(0), dim(1), dim(2));
    if dims.is_empty() {
        return Err(format!("empty dims {}", dims));
    }
    let payload = dims
        .len()
        .checked_mul(size)
        .ok_or_else(|| format!("dims {} overflow", dims))?;
    if bytes.len() != HEADER + payload + 8 {
        return Err(format!("expected {} payload bytes for {}, file has {}", payload, dims, bytes.len() - HEADER - 8));
    }
    let check = u64::from_le_bytes(bytes[HEADER + payload..].try_into().unwrap());
    if check != payload as u64 {
        return Err(format!("length check {} does not match payload {}", check, payload));
    }
    let body = &bytes[HEADER..HEADER + payload];
    let voxels = match code {
        0 => Voxels::U16(body.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()),
        1 => Voxels::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        _ => Voxels::U8(body.to_vec()),
    };
    Ok(Volume { dims, voxels })
}

pub fn read(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path).map_err(|e| Error::input(path, e.to_string()))?;
    decode(&bytes).map_err(|m| Error::input(path, m))
}

pub fn write(path: &Path, vol: &Volume) -> Result<()> {
    fsutil::write_atomic(path, &encode(vol))
}

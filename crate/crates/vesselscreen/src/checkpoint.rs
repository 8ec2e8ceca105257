//! `VNCK` model checkpoints.
//!
//! Little endian throughout: magic `VNCK`, a version byte, the configuration
//! echo (`W`, `H`, `L`, the four filter counts and the hidden width, each
//! `u32`), then every array as `f32` in declaration order: for each block the
//! kernel, bias, batch-norm gamma, beta, running mean and running variance;
//! then the hidden layer weight and bias and the output layer weight and
//! bias. A trailing `u64` holds the byte length of everything before it.

use std::path::Path;

use vesselscreen_core::tensor::Tensor;
use vesselscreen_core::vesselnet::{self, VesselNetConfig, VesselNetParams};
use vesselscreen_core::Dims3;

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"VNCK";
pub const VERSION: u8 = 1;

fn push_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(p: &VesselNetParams<f32>) -> Vec<u8> {
    let c = &p.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let echo = [c.input_dims.w, c.input_dims.h, c.input_dims.l]
        .into_iter()
        .chain(c.conv_filters)
        .chain([c.fc_hidden]);
    for v in echo {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for b in &p.blocks {
        push_f32s(&mut out, b.kernel.values());
        push_f32s(&mut out, b.bias.values());
        push_f32s(&mut out, b.bn.gamma.values());
        push_f32s(&mut out, b.bn.beta.values());
        push_f32s(&mut out, &b.bn.running.mean);
        push_f32s(&mut out, &b.bn.running.var);
    }
    for t in [&p.fc1_w, &p.fc1_b, &p.fc2_w, &p.fc2_b] {
        push_f32s(&mut out, t.values());
    }
    let len = out.len() as u64;
    out.extend_from_slice(&len.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, String> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn fill(&mut self, t: &mut Tensor<f32>) -> std::result::Result<(), String> {
        let v = self.f32s(t.len())?;
        t.values_mut().copy_from_slice(&v);
        Ok(())
    }
}

/// Decodes a checkpoint. Training-only settings (keep rate, weight decay)
/// take their defaults.
pub fn decode(bytes: &[u8]) -> std::result::Result<VesselNetParams<f32>, String> {
    if bytes.len() < 5 + 32 + 8 || &bytes[..4] != MAGIC {
        return Err("not a VNCK checkpoint".into());
    }
    if bytes[4] != VERSION {
        return Err(format!("unsupported checkpoint version {}", bytes[4]));
    }
    let body = bytes.len() - 8;
    let check = u64::from_le_bytes(bytes[body..].try_into().unwrap());
    if check != body as u64 {
        return Err(format!("length check {} does not match {} bytes", check, body));
    }
    let mut r = Reader { bytes: &bytes[..body], pos: 5 };
    let dims = Dims3::new(r.u32()?, r.u32()?, r.u32()?);
    let filters = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    let fc_hidden = r.u32()?;
    let config = VesselNetConfig { conv_filters: filters, fc_hidden, ..VesselNetConfig::with_dims(dims) };
    let mut p = vesselnet::build::<f32>(&config, 0).map_err(|e| e.to_string())?;
    for b in &mut p.blocks {
        r.fill(&mut b.kernel)?;
        r.fill(&mut b.bias)?;
        r.fill(&mut b.bn.gamma)?;
        r.fill(&mut b.bn.beta)?;
        let c = b.bn.running.mean.len();
        b.bn.running.mean = r.f32s(c)?;
        b.bn.running.var = r.f32s(c)?;
        // Loaded statistics are established, not the (0, 1) placeholder.
        b.bn.running.updates = 1;
    }
    for t in [&mut p.fc1_w, &mut p.fc1_b, &mut p.fc2_w, &mut p.fc2_b] {
        r.fill(t)?;
    }
    if r.pos != body {
        return Err(format!("{} trailing bytes", body - r.pos));
    }
    Ok(p)
}

pub fn save(path: &Path, p: &VesselNetParams<f32>) -> Result<()> {
    fsutil::write_atomic(path, &encode(p))
}

pub fn load(path: &Path) -> Result<VesselNetParams<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::input(path, e.to_string()))?;
    decode(&bytes).map_err(|m| Error::input(path, m))
}

//! File formats, reports and command implementations for `vesselscreen`.
//!
//! The numerical work lives in [`vesselscreen_core`]; this crate adds the
//! filesystem around it:
//!
//! * [`v3d`] reads and writes the volume container,
//! * [`checkpoint`] stores trained network weights,
//! * [`manifest`] describes a dataset on disk,
//! * [`config`] parses `key = value` training configurations,
//! * [`reports`] writes the CSV outputs,
//! * [`commands`] implements the `phantom`, `train`, `eval` and `saliency`
//!   subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod fsutil;
pub mod manifest;
pub mod reports;
pub mod v3d;

pub use error::{Error, Result};
pub use vesselscreen_core as core;

/// Keeps large tensor buffers on the heap between training steps.
///
/// glibc hands allocations above the mmap threshold straight back to the
/// kernel, so every step would fault its activation buffers in again.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator parameters.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, i32::MAX);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}

//! Algorithmic core for screening straightened coronary-artery MPR volumes.
//!
//! Everything in this crate is pure computation over in-memory data:
//!
//! * [`tensor`] holds the dense tensor type, a small reverse-mode tape with the
//!   handful of differentiable ops the classifier needs, and the Adam optimizer.
//! * [`pipeline`] clamps, normalizes, pads and rotates vessel volumes.
//! * [`phantom`] renders synthetic straightened vessels with lesion masks.
//! * [`vesselnet`] is the four-block 3D CNN classifier.
//! * [`trainer`] runs subject-level cross-validation with early stopping.
//! * [`saliency`] computes Grad-CAM heat maps.
//! * [`evalkit`] scores predictions and saliency overlap.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and all
//! filesystem access live in the `vesselscreen` companion crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod evalkit;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod saliency;
pub mod tensor;
pub mod trainer;
pub mod vesselnet;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Dims3, RawVesselVolume, VesselLabel};

//! Numerical core for rapid diffusion MRI evaluation.
//!
//! Everything in this crate is pure computation over in-memory buffers:
//! acquisition design, tensor and spherical-harmonic fitting, local PCA
//! denoising, phantom synthesis and the evaluation metrics. File formats,
//! the command line and the pipeline runner live in the `dmri` crate.
//!
//! The crate is `no_std` (with `alloc`). The `parallel` feature pulls in
//! `std` and rayon to spread restarts and patches over worker threads;
//! results are bitwise identical to the sequential path.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod design;
pub mod dti;
mod error;
mod exec;
pub mod jsd;
pub mod mppca;
pub mod phantom;
pub mod reliability;
pub mod sh;
pub mod sphere;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{GradientScheme, LabelVolume, Mask, Shell, Volume4D};

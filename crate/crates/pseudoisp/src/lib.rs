//! Unpaired noise modeling and denoiser adaption via a learned pseudo camera
//! ISP, with a synthetic ground-truth camera simulator for end-to-end
//! verification.
//!
//! The crate is organized around five subsystems:
//!
//! - [`tensor`]: a minimal reverse-mode autodiff engine (conv2d, elementwise
//!   ops, Adam) sized for the small fixed architectures used here.
//! - [`camera`]: the ground-truth simulator — clean raw scenes, a known
//!   signal-dependent noise model, and a known invertible ISP.
//! - [`isp`]: the learned model — three subnets (sRGB-to-raw, raw-to-sRGB,
//!   noise estimation) trained jointly on noisy/pseudo-clean pairs.
//! - [`synthesis`]: noisy-image synthesis from clean images via the trained
//!   model, plus empirical verification of its modeling assumptions.
//! - [`adaption`]: the four-step alternated loop that finetunes a denoiser
//!   from unpaired noisy and clean sets.
//!
//! [`metrics`], [`checkpoint`], [`imageio`], [`dataset`] and [`experiment`]
//! provide the evaluation and I/O surface used by the CLI.

pub mod adaption;
pub mod camera;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod imageio;
pub mod isp;
pub mod metrics;
pub mod parallel;
pub mod scenes;
pub mod synthesis;
pub mod tensor;

pub use error::{Error, Result};

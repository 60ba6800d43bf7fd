//! Volume-conditioned sequential diffusion over signed distance fields.
//!
//! Organs are generated one at a time by per-organ denoisers conditioned on
//! the body SDF, the max-composition of previously generated organs and a
//! habitus-decoupled volume control scalar (VCS).

pub mod cli;
pub mod cohort;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod sequence;
pub mod vcs;
pub mod voxel;

pub use error::{Error, Result};

//! Joint activity detection and channel estimation for grant-free massive access.
//!
//! The crate is organised along the processing chain:
//!
//! * [`scenario`] synthesises pilots, device states and received signals.
//! * [`reduction`] projects the `L x M` observation onto its `r`-dimensional signal space.
//! * [`denoiser`] holds the Bernoulli-Gaussian-mixture MMSE denoiser and shrinkage baselines.
//! * [`estimator`] runs VAMP, the unfolded FAT-DL network and the AMP/FISTA/OMP baselines.
//! * [`training`] builds datasets, computes hand-derived gradients and runs layerwise training.
//! * [`detection`] turns estimates into activity decisions, channels and error metrics.
//! * [`harness`] drives Monte-Carlo sweeps, presets and complexity benchmarks.

pub mod container;
pub mod denoiser;
pub mod detection;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod reduction;
pub mod rng;
pub mod scenario;
pub mod training;

pub use error::{JadceError, Result};
pub use linalg::{CMat, CVec};
pub use num_complex::Complex64;

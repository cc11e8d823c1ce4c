//! VAMP, the unfolded FAT-DL network and the AMP / FISTA / OMP baselines.
//!
//! Every estimator works column by column on the reduced observation
//! `V = A S + noise` (`L x r`) and returns an `N x r` estimate of `S`.

mod baselines;
mod fatdl;
mod lmmse;
mod params;
mod vamp;

pub use baselines::{amp_run, default_fista_lambda, fista_run, omp_run};
pub use fatdl::{
    fatdl_forward, inner_em_loop, FatDlConfig, FatDlOutput, InnerEmOut, Stop,
};
pub(crate) use fatdl::{check_config, forward_sample, layer_operators, SampleTape};
pub use lmmse::{lmmse_divergence, lmmse_step, LmmseOperator};
pub use params::{load_params, save_params, FatDlParams, Omega, PARAMS_VERSION};
pub use vamp::{vamp_run, Denoiser, VampInit};

use crate::error::{JadceError, Result};
use crate::linalg::{CMat, CVec};

pub const PREC_MIN: f64 = 1e-11;
pub const PREC_MAX: f64 = 1e11;

/// Clips a precision into `[PREC_MIN, PREC_MAX]`; returns whether it moved.
#[inline]
pub fn clip_precision(x: f64) -> (f64, bool) {
    if x < PREC_MIN {
        (PREC_MIN, true)
    } else if x > PREC_MAX {
        (PREC_MAX, true)
    } else {
        (x, false)
    }
}

/// Iterate of one column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnState {
    pub u1: CVec,
    pub s1: CVec,
    pub u2: CVec,
    pub s2: CVec,
    pub gamma1: f64,
    pub gamma2: f64,
    pub eta1: f64,
    pub eta2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    /// Final `N x r` estimate.
    pub estimate: CMat,
    /// One entry per executed layer when a probe was supplied.
    pub nmse_trace: Vec<f64>,
    /// Per-device sparsity at exit (empty for estimators that do not track it).
    pub eps: Vec<f64>,
    pub layers: usize,
    pub clip_count: usize,
    /// Denoiser-side estimate after each layer.
    pub s1_layers: Vec<CMat>,
    /// LMMSE-side estimate after each layer (empty for single-module estimators).
    pub s2_layers: Vec<CMat>,
}

/// Scores a per-layer estimate; injected by callers that know the ground truth.
pub type Probe<'a> = Option<&'a (dyn Fn(&CMat) -> f64 + Sync)>;

pub(crate) fn check_finite_vec(v: &CVec, layer: usize, column: usize, what: &'static str) -> Result<()> {
    if v.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(JadceError::NonFinite { layer, column, what })
    }
}

pub(crate) fn check_finite(x: f64, layer: usize, column: usize, what: &'static str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(JadceError::NonFinite { layer, column, what })
    }
}

pub(crate) fn check_problem(v: &CMat, a: &CMat, noise_var: f64) -> Result<()> {
    if v.nrows() != a.nrows() {
        return Err(JadceError::invalid(format!(
            "observation has {} rows, pilot matrix has {}",
            v.nrows(),
            a.nrows()
        )));
    }
    if v.ncols() == 0 {
        return Err(JadceError::invalid("observation has no columns"));
    }
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(JadceError::invalid(format!("noise variance {noise_var} must be positive")));
    }
    Ok(())
}

/// Matched-filter start `Aᴴ V / L`.
pub fn matched_filter(a: &CMat, v: &CMat) -> CMat {
    a.adjoint() * v / crate::linalg::c(a.nrows() as f64)
}

pub const GAMMA_INIT: f64 = 1e-6;

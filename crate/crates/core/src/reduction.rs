//! SVD projection of the `L x M` observation onto an `L x r` problem, and lifting back.

use serde::{Deserialize, Serialize};

use crate::error::{JadceError, Result};
use crate::linalg::{c, thin_svd, CMat};
use crate::scenario::ReceivedSignal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum RankPolicy {
    Fixed(usize),
    /// Count singular values at or above `tau * sigma_max`.
    Threshold(f64),
}

impl RankPolicy {
    /// Twice the expected number of active devices when known (overestimating
    /// the rank is harmless), otherwise a 5% relative singular-value threshold.
    pub fn default_for(expected_active: Option<f64>, l: usize, m: usize) -> RankPolicy {
        match expected_active {
            Some(k) if k > 0.0 => Fixed(((2.0 * k).ceil() as usize).clamp(1, l.min(m))),
            _ => Threshold(0.05),
        }
    }
}

use RankPolicy::{Fixed, Threshold};

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    /// `L x r` reduced observation.
    pub v: CMat,
    /// `r x M` with orthonormal rows.
    pub u: CMat,
    pub rank: usize,
}

pub fn estimate_rank(y: &ReceivedSignal, policy: RankPolicy) -> Result<usize> {
    let (l, m) = y.y.shape();
    match policy {
        Fixed(r) => {
            if r == 0 || r > l.min(m) {
                return Err(JadceError::invalid(format!("rank {r} outside 1..={}", l.min(m))));
            }
            Ok(r)
        }
        Threshold(tau) => {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(JadceError::invalid(format!("relative threshold {tau} outside (0, 1]")));
            }
            let s = thin_svd(&y.y)?.s;
            if s[0] == 0.0 {
                return Err(JadceError::invalid("cannot estimate the rank of an all-zero observation"));
            }
            Ok(s.iter().filter(|&&x| x >= tau * s[0]).count())
        }
    }
}

/// `Y = S_sd V_sd D_sd^H`; keeps `V = S_r diag(s_r)` and `U = (D_sd^H)_{1..r}`.
pub fn reduce(y: &ReceivedSignal, rank: usize) -> Result<ReducedModel> {
    let (l, m) = y.y.shape();
    if rank == 0 || rank > l.min(m) {
        return Err(JadceError::invalid(format!("rank {rank} outside 1..={}", l.min(m))));
    }
    let svd = thin_svd(&y.y)?;
    let mut v = svd.u.columns(0, rank).into_owned();
    for (j, &s) in svd.s.iter().take(rank).enumerate() {
        let mut col = v.column_mut(j);
        col *= c(s);
    }
    Ok(ReducedModel {
        v,
        u: svd.v_h.rows(0, rank).into_owned(),
        rank,
    })
}

/// `X̂ = Ŝ U`.
pub fn lift(s_hat: &CMat, u: &CMat) -> Result<CMat> {
    if s_hat.ncols() != u.nrows() {
        return Err(JadceError::invalid(format!(
            "estimate has {} columns, basis has {} rows",
            s_hat.ncols(),
            u.nrows()
        )));
    }
    Ok(s_hat * u)
}

/// Ground truth in the reduced space, `S = X U^H`.
pub fn project(x: &CMat, u: &CMat) -> Result<CMat> {
    if x.ncols() != u.ncols() {
        return Err(JadceError::invalid("state and basis disagree on the antenna count"));
    }
    Ok(x * u.adjoint())
}

//! Activity decisions, channel extraction and the AER / NMSE metrics.

use serde::{Deserialize, Serialize};

use crate::error::{JadceError, Result};
use crate::linalg::{c, CMat};

/// A decibel value; `degenerate` marks the `-inf` sentinel produced by a zero ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decibels {
    pub value: f64,
    pub degenerate: bool,
}

impl Decibels {
    pub fn from_ratio(ratio: f64) -> Self {
        if ratio > 0.0 {
            Decibels {
                value: 10.0 * ratio.log10(),
                degenerate: false,
            }
        } else {
            Decibels {
                value: f64::NEG_INFINITY,
                degenerate: true,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub active: Vec<bool>,
    /// Row-energy threshold `v^2 r`.
    pub threshold: f64,
    pub row_energy: Vec<f64>,
}

/// Declares device `k` active when `||s_k||^2 >= v^2 r` with `v = v1 max|s_nr|`.
/// An all-zero estimate is declared all-inactive.
pub fn detect_activity(s: &CMat, v1: f64) -> Result<DetectionResult> {
    if !(v1 > 0.0 && v1 < 1.0) {
        return Err(JadceError::invalid(format!("v1 = {v1} must lie in (0, 1)")));
    }
    let r = s.ncols() as f64;
    let peak = s.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let v = v1 * peak;
    let threshold = v * v * r;
    let row_energy: Vec<f64> = s.row_iter().map(|row| row.iter().map(|z| z.norm_sqr()).sum()).collect();
    let active = if peak == 0.0 {
        vec![false; s.nrows()]
    } else {
        row_energy.iter().map(|&e| e >= threshold).collect()
    };
    Ok(DetectionResult {
        active,
        threshold,
        row_energy,
    })
}

/// Channels of the detected devices, `x_k / sqrt(xi_k)`, keyed by device index.
pub fn estimate_channels(x_hat: &CMat, energies: &[f64], active: &[bool]) -> Result<Vec<(usize, CMat)>> {
    if energies.len() != x_hat.nrows() || active.len() != x_hat.nrows() {
        return Err(JadceError::invalid("energy / activity length does not match the estimate"));
    }
    let mut out = Vec::new();
    for (k, (&xi, &a)) in energies.iter().zip(active).enumerate() {
        if !a {
            continue;
        }
        if !(xi > 0.0) {
            return Err(JadceError::invalid(format!("device {k} has non-positive energy {xi}")));
        }
        out.push((k, x_hat.rows(k, 1).map(|z| z / c(xi.sqrt()))));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub aer: f64,
    pub miss_rate: f64,
    pub false_alarm_rate: f64,
    pub nmse_db: f64,
    /// No true actives, so the miss rate is reported as 0.
    pub no_actives: bool,
    /// No true inactives, so the false-alarm rate is reported as 0.
    pub no_inactives: bool,
}

/// Conditional miss and false-alarm rates; `nmse_db` is left as NaN.
pub fn aer(detected: &[bool], truth: &[bool]) -> Result<MetricSet> {
    if detected.len() != truth.len() {
        return Err(JadceError::invalid("activity vectors differ in length"));
    }
    let (mut act, mut inact, mut miss, mut fa) = (0usize, 0usize, 0usize, 0usize);
    for (&d, &t) in detected.iter().zip(truth) {
        match (t, d) {
            (true, false) => {
                act += 1;
                miss += 1
            }
            (true, true) => act += 1,
            (false, true) => {
                inact += 1;
                fa += 1
            }
            (false, false) => inact += 1,
        }
    }
    let miss_rate = if act == 0 { 0.0 } else { miss as f64 / act as f64 };
    let false_alarm_rate = if inact == 0 { 0.0 } else { fa as f64 / inact as f64 };
    Ok(MetricSet {
        aer: miss_rate + false_alarm_rate,
        miss_rate,
        false_alarm_rate,
        nmse_db: f64::NAN,
        no_actives: act == 0,
        no_inactives: inact == 0,
    })
}

/// `10 log10(||X̂_K - X_K||^2 / ||X_K||^2)` over the rows in `support`.
pub fn nmse_db(x_hat: &CMat, x: &CMat, support: &[usize]) -> Result<Decibels> {
    if x_hat.shape() != x.shape() {
        return Err(JadceError::invalid("estimate and truth differ in shape"));
    }
    if support.is_empty() {
        return Err(JadceError::invalid("NMSE needs a non-empty support"));
    }
    let (mut err, mut sig) = (0.0, 0.0);
    for &k in support {
        if k >= x.nrows() {
            return Err(JadceError::invalid(format!("support index {k} out of range")));
        }
        for m in 0..x.ncols() {
            err += (x_hat[(k, m)] - x[(k, m)]).norm_sqr();
            sig += x[(k, m)].norm_sqr();
        }
    }
    if sig == 0.0 {
        return Err(JadceError::invalid("true rows on the support are all zero"));
    }
    Ok(Decibels::from_ratio(err / sig))
}

//! Vector AMP: alternating entrywise denoising and LMMSE estimation.

use serde::{Deserialize, Serialize};

use super::lmmse::LmmseOperator;
use super::{check_finite, check_finite_vec, check_problem, clip_precision, matched_filter, EstimatorReport, Probe, GAMMA_INIT};
use crate::denoiser::{bgm_entry, soft_threshold, GmPrior};
use crate::error::{JadceError, Result};
use crate::linalg::{c, CMat, CVec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Denoiser {
    Bgm(GmPrior),
    /// Threshold `alpha / sqrt(gamma)`, i.e. `alpha` noise standard deviations.
    SoftThreshold { alpha: f64 },
}

impl Denoiser {
    /// Denoises one column; returns the estimate and `Σ_n g′_n`.
    pub(crate) fn apply(&self, u: &CVec, gamma: f64) -> (CVec, f64) {
        let mut out = CVec::zeros(u.len());
        let mut sum = 0.0;
        match self {
            Denoiser::Bgm(prior) => {
                for n in 0..u.len() {
                    let row = prior.row(n);
                    let d = bgm_entry(u[n], gamma, row.eps, row.weights, row.variances);
                    out[n] = d.value;
                    sum += d.derivative;
                }
            }
            Denoiser::SoftThreshold { alpha } => {
                let lambda = alpha / gamma.sqrt();
                for n in 0..u.len() {
                    let (v, d) = soft_threshold(u[n], lambda);
                    out[n] = v;
                    sum += d;
                }
            }
        }
        (out, sum)
    }

    /// Matched-filter start. The soft threshold at the vanishing precision
    /// would zero every entry, so it starts from the precision that treats
    /// the whole matched-filter output as noise.
    pub fn default_init(&self, a: &CMat, v: &CMat) -> VampInit {
        let mut init = VampInit::matched_filter(a, v);
        if let Denoiser::SoftThreshold { .. } = self {
            let n = a.ncols() as f64;
            for (r, g) in init.gamma1.iter_mut().enumerate() {
                let e = init.u1.column(r).norm_squared();
                if e > 0.0 {
                    *g = n / e;
                }
            }
        }
        init
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            Denoiser::Bgm(prior) => {
                if prior.n_devices() != n {
                    return Err(JadceError::invalid(format!(
                        "prior covers {} devices, problem has {n}",
                        prior.n_devices()
                    )));
                }
                prior.validate()
            }
            Denoiser::SoftThreshold { alpha } => {
                if *alpha >= 0.0 && alpha.is_finite() {
                    Ok(())
                } else {
                    Err(JadceError::invalid(format!("threshold multiplier {alpha} must be non-negative")))
                }
            }
        }
    }
}

/// Starting point of the denoiser side.
#[derive(Debug, Clone, PartialEq)]
pub struct VampInit {
    pub u1: CMat,
    pub gamma1: Vec<f64>,
}

impl VampInit {
    /// `u₁⁰ = Aᴴ v / L` with a vanishing starting precision.
    pub fn matched_filter(a: &CMat, v: &CMat) -> Self {
        VampInit {
            u1: matched_filter(a, v),
            gamma1: vec![GAMMA_INIT; v.ncols()],
        }
    }
}

/// Runs `layers` VAMP iterations per column; the estimate is `ŝ₁` of the last layer.
pub fn vamp_run(
    v: &CMat,
    a: &CMat,
    denoiser: &Denoiser,
    noise_var: f64,
    layers: usize,
    init: Option<VampInit>,
    probe: Probe<'_>,
) -> Result<EstimatorReport> {
    check_problem(v, a, noise_var)?;
    let n = a.ncols();
    denoiser.check(n)?;
    let init = init.unwrap_or_else(|| denoiser.default_init(a, v));
    if init.u1.shape() != (n, v.ncols()) || init.gamma1.len() != v.ncols() {
        return Err(JadceError::invalid("initial state does not match the problem size"));
    }
    let op = LmmseOperator::new(a, &vec![1.0; n], noise_var)?;
    let w = op.project_obs(v);
    let cols = v.ncols();
    let mut u1: Vec<CVec> = (0..cols).map(|r| init.u1.column(r).into_owned()).collect();
    let mut gamma1 = init.gamma1.clone();
    let mut report = EstimatorReport {
        estimate: init.u1.clone(),
        nmse_trace: Vec::new(),
        eps: Vec::new(),
        layers: 0,
        clip_count: 0,
        s1_layers: Vec::new(),
        s2_layers: Vec::new(),
    };
    let nf = n as f64;
    for t in 0..layers {
        let mut s1_mat = CMat::zeros(n, cols);
        let mut s2_mat = CMat::zeros(n, cols);
        for r in 0..cols {
            let g1 = gamma1[r];
            let (s1, sum_g) = denoiser.apply(&u1[r], g1);
            let (eta1, k1) = clip_precision(g1 * nf / sum_g);
            let (g2, k2) = clip_precision(eta1 - g1);
            let u2 = (&s1 * c(eta1) - &u1[r] * c(g1)) / c(g2);
            let s2 = op.solve_projected(&u2, g2, &w.column(r).into_owned());
            let (eta2, k3) = clip_precision(nf / op.trace_inverse(g2));
            let (g1n, k4) = clip_precision(eta2 - g2);
            let u1n = (&s2 * c(eta2) - &u2 * c(g2)) / c(g1n);
            report.clip_count += [k1, k2, k3, k4].iter().filter(|&&k| k).count();
            check_finite_vec(&s1, t, r, "denoiser estimate")?;
            check_finite_vec(&s2, t, r, "LMMSE estimate")?;
            check_finite_vec(&u1n, t, r, "denoiser input")?;
            check_finite(g1n, t, r, "precision")?;
            s1_mat.set_column(r, &s1);
            s2_mat.set_column(r, &s2);
            u1[r] = u1n;
            gamma1[r] = g1n;
        }
        if let Some(p) = probe {
            report.nmse_trace.push(p(&s1_mat));
        }
        report.estimate = s1_mat.clone();
        report.s1_layers.push(s1_mat);
        report.s2_layers.push(s2_mat);
        report.layers += 1;
    }
    Ok(report)
}

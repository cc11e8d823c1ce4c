//! Baselines: AMP with an Onsager term, FISTA for the LASSO, and OMP.

use super::vamp::Denoiser;
use super::{check_finite_vec, clip_precision, EstimatorReport, Probe};
use crate::denoiser::soft_threshold;
use crate::error::{JadceError, Result};
use crate::linalg::{c, singular_values, CMat, CVec};

/// AMP per column on any `L x c` observation (reduced `V` or raw `Y`).
///
/// The pilot matrix is rescaled to unit average column energy first; the
/// effective noise variance is tracked as `||z||^2 / L`.
pub fn amp_run(v: &CMat, a: &CMat, denoiser: &Denoiser, layers: usize, probe: Probe<'_>) -> Result<EstimatorReport> {
    if v.nrows() != a.nrows() || v.ncols() == 0 {
        return Err(JadceError::invalid("observation does not match the pilot matrix"));
    }
    let (l, n) = a.shape();
    if let Denoiser::Bgm(p) = denoiser {
        if p.n_devices() != n {
            return Err(JadceError::invalid("prior size does not match the pilot matrix"));
        }
    }
    let scale = (a.norm_squared() / n as f64).sqrt();
    if !(scale > 0.0) {
        return Err(JadceError::invalid("pilot matrix is zero"));
    }
    let at = a / c(scale);
    let at_h = at.adjoint();
    let cols = v.ncols();
    let mut s: Vec<CVec> = vec![CVec::zeros(n); cols];
    let mut z: Vec<CVec> = (0..cols).map(|r| v.column(r) / c(scale)).collect();
    let vt: Vec<CVec> = z.clone();
    let mut report = EstimatorReport {
        estimate: CMat::zeros(n, cols),
        nmse_trace: Vec::new(),
        eps: Vec::new(),
        layers: 0,
        clip_count: 0,
        s1_layers: Vec::new(),
        s2_layers: Vec::new(),
    };
    for t in 0..layers {
        let mut est = CMat::zeros(n, cols);
        for r in 0..cols {
            let pseudo = &s[r] + &at_h * &z[r];
            let (gamma, clipped) = clip_precision(l as f64 / z[r].norm_squared());
            report.clip_count += clipped as usize;
            let (s_new, sum_g) = denoiser.apply(&pseudo, gamma);
            let onsager = sum_g / l as f64;
            z[r] = &vt[r] - &at * &s_new + &z[r] * c(onsager);
            check_finite_vec(&s_new, t, r, "AMP estimate")?;
            check_finite_vec(&z[r], t, r, "AMP residual")?;
            est.set_column(r, &s_new);
            s[r] = s_new;
        }
        if let Some(p) = probe {
            report.nmse_trace.push(p(&est));
        }
        report.estimate = est.clone();
        report.s1_layers.push(est);
        report.layers += 1;
    }
    Ok(report)
}

/// `0.01 ||Aᴴ v||_∞`.
pub fn default_fista_lambda(v: &CVec, a: &CMat) -> f64 {
    0.01 * (a.adjoint() * v).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// FISTA on `½||v - A s||² + λ||s||₁` with step `1/σ_max(A)²`; stops after
/// `max_iter` iterations or when the relative change drops below `1e-6`.
pub fn fista_run(v: &CVec, a: &CMat, lambda: f64, max_iter: usize) -> Result<CVec> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(JadceError::invalid(format!("lambda {lambda} must be positive")));
    }
    if v.len() != a.nrows() {
        return Err(JadceError::invalid("observation does not match the pilot matrix"));
    }
    let lip = singular_values(a)?[0].powi(2);
    let n = a.ncols();
    if lip == 0.0 {
        return Ok(CVec::zeros(n));
    }
    let a_h = a.adjoint();
    let mut x = CVec::zeros(n);
    let mut y = CVec::zeros(n);
    let mut t = 1.0f64;
    for _ in 0..max_iter {
        let grad = &a_h * (a * &y - v);
        let step = &y - grad / c(lip);
        let x_new = step.map(|z| soft_threshold(z, lambda / lip).0);
        let t_new = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &x_new + (&x_new - &x) * c((t - 1.0) / t_new);
        let change = (&x_new - &x).norm();
        let size = x_new.norm();
        x = x_new;
        t = t_new;
        if change <= 1e-6 * size || (change == 0.0 && size == 0.0) {
            break;
        }
    }
    Ok(x)
}

/// Greedy selection of `k` columns by normalised correlation with the
/// residual, refitting by least squares after each pick.
pub fn omp_run(v: &CVec, a: &CMat, k: usize) -> Result<CVec> {
    let (l, n) = a.shape();
    if k == 0 || k > l.min(n) {
        return Err(JadceError::invalid(format!("sparsity {k} outside 1..={}", l.min(n))));
    }
    if v.len() != l {
        return Err(JadceError::invalid("observation does not match the pilot matrix"));
    }
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let a_h = a.adjoint();
    let mut support: Vec<usize> = Vec::with_capacity(k);
    let mut resid = v.clone();
    let mut coef = CVec::zeros(0);
    for _ in 0..k {
        let corr = &a_h * &resid;
        let pick = (0..n)
            .filter(|j| !support.contains(j) && norms[*j] > 0.0)
            .max_by(|&i, &j| (corr[i].norm() / norms[i]).total_cmp(&(corr[j].norm() / norms[j])))
            .ok_or_else(|| JadceError::numerical("no admissible column left to select"))?;
        support.push(pick);
        let sub = CMat::from_fn(l, support.len(), |i, j| a[(i, support[j])]);
        let qr = sub.clone().qr();
        let r = qr.r();
        let diag_max = (0..r.ncols()).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
        if (0..r.ncols()).any(|i| r[(i, i)].norm() <= 1e-12 * diag_max) {
            return Err(JadceError::numerical(format!(
                "selected columns {support:?} are linearly dependent"
            )));
        }
        let rhs = qr.q().adjoint() * v;
        coef = r
            .solve_upper_triangular(&rhs)
            .ok_or_else(|| JadceError::numerical("triangular solve failed"))?;
        resid = v - &sub * &coef;
    }
    let mut out = CVec::zeros(n);
    for (j, &idx) in support.iter().enumerate() {
        out[idx] = coef[j];
    }
    Ok(out)
}

//! Scalar Bernoulli-Gaussian-mixture MMSE denoiser and shrinkage baselines.
//!
//! All densities are circular complex Gaussians `CN(u; 0, b) = exp(-|u|^2/b) / (pi b)`
//! and are combined in log space, so the active/inactive likelihood ratio
//! never overflows even at precisions around `1e11`.
//!
//! With posterior weights `w_j` (component `j` active) and Wiener gains
//! `k_j = var_j / (var_j + 1/gamma)` the denoiser is `u * F` with
//! `F = Σ_j w_j k_j`. Its derivative with respect to `u` (holding `conj(u)`
//! fixed) simplifies to `F + gamma |u|^2 (Σ_j w_j k_j^2 - F^2)`, which is
//! `gamma` times the posterior variance and is what the message-passing
//! updates consume as the divergence.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{JadceError, Result};
use crate::linalg::CVec;

pub const EPS_MIN: f64 = 1e-6;
pub const EPS_MAX: f64 = 1.0 - 1e-6;
/// Upper bound on mixture components handled by the stack-allocated kernel.
pub const MAX_MIX: usize = 16;

pub fn clip_eps(eps: f64) -> f64 {
    eps.clamp(EPS_MIN, EPS_MAX)
}

/// Per-device Bernoulli-Gaussian-mixture parameters. Weights and variances
/// are stored row-major, `n_mix` entries per device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmPrior {
    pub n_mix: usize,
    pub activity: Vec<f64>,
    pub weights: Vec<f64>,
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct PriorRow<'a> {
    pub eps: f64,
    pub weights: &'a [f64],
    pub variances: &'a [f64],
}

impl GmPrior {
    pub fn new(n_mix: usize, activity: Vec<f64>, weights: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let prior = GmPrior {
            n_mix,
            activity: activity.into_iter().map(clip_eps).collect(),
            weights,
            variances,
        };
        prior.validate()?;
        Ok(prior)
    }

    /// Every device shares the same sparsity and mixture.
    pub fn shared(n_devices: usize, eps: f64, weights: &[f64], variances: &[f64]) -> Result<Self> {
        if weights.len() != variances.len() {
            return Err(JadceError::invalid("weights and variances differ in length"));
        }
        let j = weights.len();
        GmPrior::new(
            j,
            vec![eps; n_devices],
            weights.iter().copied().cycle().take(n_devices * j).collect(),
            variances.iter().copied().cycle().take(n_devices * j).collect(),
        )
    }

    pub fn n_devices(&self) -> usize {
        self.activity.len()
    }

    pub fn row(&self, n: usize) -> PriorRow<'_> {
        let j = self.n_mix;
        PriorRow {
            eps: self.activity[n],
            weights: &self.weights[n * j..(n + 1) * j],
            variances: &self.variances[n * j..(n + 1) * j],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.activity.len();
        let j = self.n_mix;
        if j == 0 || j > MAX_MIX {
            return Err(JadceError::invalid(format!("mixture size {j} outside 1..={MAX_MIX}")));
        }
        if self.weights.len() != n * j || self.variances.len() != n * j {
            return Err(JadceError::invalid("mixture arrays do not match N x J"));
        }
        for d in 0..n {
            let row = self.row(d);
            if !(row.eps > 0.0 && row.eps < 1.0) {
                return Err(JadceError::invalid(format!("device {d}: sparsity {} outside (0,1)", row.eps)));
            }
            let sum: f64 = row.weights.iter().sum();
            if row.weights.iter().any(|&q| !(q >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(JadceError::invalid(format!("device {d}: weights are not on the simplex (sum {sum})")));
            }
            if row.variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(JadceError::invalid(format!("device {d}: variances must be positive")));
            }
        }
        Ok(())
    }

    /// Same mixture with every variance multiplied by `factor`.
    pub fn scale_variances(&self, factor: f64) -> GmPrior {
        let mut out = self.clone();
        out.variances.iter_mut().for_each(|v| *v *= factor);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseOut {
    pub value: Complex64,
    /// Divergence contribution; real because the prior is circularly symmetric.
    pub derivative: f64,
    pub support_prob: f64,
}

/// Posterior quantities of one entry. Kept around so the adjoint can reuse them.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EntryPosterior {
    pub a: f64,
    pub n_mix: usize,
    pub w: [f64; MAX_MIX],
    pub w_off: f64,
    pub k: [f64; MAX_MIX],
    pub b: [f64; MAX_MIX],
    pub f: f64,
    pub g2: f64,
    pub pi: f64,
}

#[inline]
pub(crate) fn entry_posterior(u: Complex64, gamma: f64, eps: f64, q: &[f64], var: &[f64]) -> EntryPosterior {
    let j = q.len();
    let a = u.norm_sqr();
    let mut logit = [f64::NEG_INFINITY; MAX_MIX];
    let mut k = [0.0; MAX_MIX];
    let mut b = [0.0; MAX_MIX];
    let ln_eps = eps.ln();
    let inv_gamma = 1.0 / gamma;
    for i in 0..j {
        b[i] = var[i] + inv_gamma;
        k[i] = gamma * var[i] / (gamma * var[i] + 1.0);
        logit[i] = ln_eps + q[i].ln() - (PI * b[i]).ln() - a / b[i];
    }
    let logit_off = (1.0 - eps).ln() + (gamma / PI).ln() - a * gamma;
    let mut mx = logit_off;
    for &l in &logit[..j] {
        mx = mx.max(l);
    }
    let mut w = [0.0; MAX_MIX];
    let mut total = (logit_off - mx).exp();
    for i in 0..j {
        w[i] = (logit[i] - mx).exp();
        total += w[i];
    }
    let w_off = (logit_off - mx).exp() / total;
    let mut f = 0.0;
    let mut g2 = 0.0;
    let mut pi = 0.0;
    for i in 0..j {
        w[i] /= total;
        f += w[i] * k[i];
        g2 += w[i] * k[i] * k[i];
        pi += w[i];
    }
    EntryPosterior {
        a,
        n_mix: j,
        w,
        w_off,
        k,
        b,
        f,
        g2,
        pi,
    }
}

#[inline]
pub(crate) fn bgm_entry(u: Complex64, gamma: f64, eps: f64, q: &[f64], var: &[f64]) -> DenoiseOut {
    let p = entry_posterior(u, gamma, eps, q, var);
    DenoiseOut {
        value: u * p.f,
        derivative: p.f + gamma * p.a * (p.g2 - p.f * p.f),
        support_prob: p.pi,
    }
}

/// Adjoints of one entry's inputs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EntryGrad {
    pub u: Complex64,
    pub gamma: f64,
    pub eps: f64,
    pub q: [f64; MAX_MIX],
    pub var: [f64; MAX_MIX],
}

/// Reverse-mode sweep through [`bgm_entry`]. Complex adjoints follow the
/// `dL/dRe + i dL/dIm` convention.
pub(crate) fn bgm_entry_backward(
    u: Complex64,
    gamma: f64,
    eps: f64,
    q: &[f64],
    var: &[f64],
    adj_value: Complex64,
    adj_deriv: f64,
    adj_pi: f64,
) -> EntryGrad {
    let p = entry_posterior(u, gamma, eps, q, var);
    let j = p.n_mix;
    let a = p.a;
    let spread = p.g2 - p.f * p.f;

    let adj_f = (adj_value.conj() * u).re + adj_deriv * (1.0 - 2.0 * gamma * a * p.f);
    let adj_g2 = adj_deriv * gamma * a;
    let mut adj_gamma = adj_deriv * a * spread;
    let mut adj_a = adj_deriv * gamma * spread;

    let mut adj_w = [0.0; MAX_MIX];
    let mut adj_k = [0.0; MAX_MIX];
    let mut weighted = 0.0;
    for i in 0..j {
        adj_w[i] = adj_f * p.k[i] + adj_g2 * p.k[i] * p.k[i] + adj_pi;
        adj_k[i] = adj_f * p.w[i] + 2.0 * adj_g2 * p.w[i] * p.k[i];
        weighted += p.w[i] * adj_w[i];
    }
    let adj_logit_off = -p.w_off * weighted;

    let mut grad = EntryGrad {
        u: Complex64::new(0.0, 0.0),
        gamma: 0.0,
        eps: -adj_logit_off / (1.0 - eps),
        q: [0.0; MAX_MIX],
        var: [0.0; MAX_MIX],
    };
    adj_gamma += adj_logit_off * (1.0 / gamma - a);
    adj_a -= adj_logit_off * gamma;
    for i in 0..j {
        let adj_logit = p.w[i] * (adj_w[i] - weighted);
        grad.eps += adj_logit / eps;
        if q[i] > 0.0 {
            grad.q[i] = adj_logit / q[i];
        }
        let b = p.b[i];
        let adj_b = adj_logit * (-1.0 / b + a / (b * b));
        adj_a -= adj_logit / b;
        let one_minus_k_sq = (1.0 - p.k[i]) * (1.0 - p.k[i]);
        grad.var[i] = adj_b + adj_k[i] * gamma * one_minus_k_sq;
        adj_gamma += -adj_b / (gamma * gamma) + adj_k[i] * var[i] * one_minus_k_sq;
    }
    grad.gamma = adj_gamma;
    grad.u = adj_value * p.f + u * (2.0 * adj_a);
    grad
}

fn check_row(gamma: f64, row: &PriorRow<'_>) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(JadceError::invalid(format!("precision {gamma} must be positive and finite")));
    }
    if !(row.eps >= 0.0 && row.eps <= 1.0) {
        return Err(JadceError::invalid(format!("sparsity {} outside [0,1]", row.eps)));
    }
    if row.weights.is_empty() || row.weights.len() != row.variances.len() || row.weights.len() > MAX_MIX {
        return Err(JadceError::invalid("prior row has inconsistent mixture arrays"));
    }
    Ok(())
}

/// Posterior mean of one entry under the Bernoulli-Gaussian-mixture prior.
pub fn bgm_denoise(u: Complex64, gamma: f64, row: PriorRow<'_>) -> Result<DenoiseOut> {
    check_row(gamma, &row)?;
    Ok(bgm_entry(u, gamma, row.eps, row.weights, row.variances))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOut {
    pub values: CVec,
    pub mean_derivative: f64,
    pub support_prob: Vec<f64>,
}

/// Entrywise denoising of one column; device `n` uses row `n` of the prior.
pub fn bgm_denoise_batch(u: &CVec, gamma: f64, prior: &GmPrior) -> Result<BatchOut> {
    if u.len() != prior.n_devices() {
        return Err(JadceError::invalid(format!(
            "column has {} entries, prior has {} devices",
            u.len(),
            prior.n_devices()
        )));
    }
    if u.is_empty() {
        return Err(JadceError::invalid("empty column"));
    }
    check_row(gamma, &prior.row(0))?;
    let mut values = CVec::zeros(u.len());
    let mut support_prob = Vec::with_capacity(u.len());
    let mut sum = 0.0;
    for n in 0..u.len() {
        let row = prior.row(n);
        let out = bgm_entry(u[n], gamma, row.eps, row.weights, row.variances);
        values[n] = out.value;
        sum += out.derivative;
        support_prob.push(out.support_prob);
    }
    Ok(BatchOut {
        values,
        mean_derivative: sum / u.len() as f64,
        support_prob,
    })
}

/// Complex soft threshold `u max(1 - lambda/|u|, 0)` and its divergence
/// contribution `1 - lambda / (2|u|)` on the active branch.
pub fn soft_threshold(u: Complex64, lambda: f64) -> (Complex64, f64) {
    let mag = u.norm();
    if lambda <= 0.0 {
        return (u, 1.0);
    }
    if mag <= lambda {
        return (Complex64::new(0.0, 0.0), 0.0);
    }
    (u * (1.0 - lambda / mag), 1.0 - lambda / (2.0 * mag))
}

//! LMMSE step `(σ⁻² BᴴB + γ I)⁻¹ (γ u + σ⁻² Bᴴ v)` with `B = A diag(β)`.
//!
//! One thin SVD `B = P S Qᴴ` per parameter set makes every solve and trace
//! for any `γ` cost `O(kN)` with `k = min(L, N)`.

use crate::error::{JadceError, Result};
use crate::linalg::{c, thin_svd, CMat, CVec};

#[derive(Debug, Clone)]
pub struct LmmseOperator {
    a: CMat,
    beta: Vec<f64>,
    noise_var: f64,
    q: CMat,
    q_h: CMat,
    s: Vec<f64>,
    d: Vec<f64>,
}

impl LmmseOperator {
    pub fn new(a: &CMat, beta: &[f64], noise_var: f64) -> Result<Self> {
        if beta.len() != a.ncols() {
            return Err(JadceError::invalid(format!(
                "beta has {} entries for {} devices",
                beta.len(),
                a.ncols()
            )));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(JadceError::invalid(format!("noise variance {noise_var} must be positive")));
        }
        if beta.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(JadceError::invalid("beta entries must be positive and finite"));
        }
        let mut b = a.clone();
        for (j, &bj) in beta.iter().enumerate() {
            let mut col = b.column_mut(j);
            col *= c(bj);
        }
        let svd = thin_svd(&b)?;
        let d = svd.s.iter().map(|s| s * s / noise_var).collect();
        Ok(LmmseOperator {
            a: a.clone(),
            beta: beta.to_vec(),
            noise_var,
            q: svd.v_h.adjoint(),
            q_h: svd.v_h,
            s: svd.s,
            d,
        })
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// `Qᴴ Bᴴ V` for a block of observation columns; computed once per sample.
    pub fn project_obs(&self, v: &CMat) -> CMat {
        self.project_obs_from_ahv(&(self.a.adjoint() * v))
    }

    /// Same as [`Self::project_obs`] from a precomputed `Aᴴ V`.
    pub fn project_obs_from_ahv(&self, ahv: &CMat) -> CMat {
        let mut bhv = ahv.clone();
        for (n, &b) in self.beta.iter().enumerate() {
            let mut row = bhv.row_mut(n);
            row *= c(b);
        }
        &self.q_h * bhv
    }

    /// `ŝ = W⁻¹ (γ u + σ⁻² Bᴴ v)` given `w = Qᴴ Bᴴ v`. The null-space part of
    /// `u` is carried over exactly instead of being divided by `γ`.
    pub fn solve_projected(&self, u: &CVec, gamma: f64, w: &CVec) -> CVec {
        let p = &self.q_h * u;
        let inv_var = 1.0 / self.noise_var;
        let t = CVec::from_fn(p.len(), |k, _| (p[k] * gamma + w[k] * inv_var) / (self.d[k] + gamma) - p[k]);
        u + &self.q * t
    }

    pub fn solve(&self, u: &CVec, gamma: f64, v: &CVec) -> CVec {
        let w = self.project_obs(&CMat::from_column_slice(v.len(), 1, v.as_slice()));
        self.solve_projected(u, gamma, &w.column(0).into_owned())
    }

    /// `W⁻¹ x` for an arbitrary vector.
    pub fn apply_inverse(&self, x: &CVec, gamma: f64) -> CVec {
        let p = &self.q_h * x;
        let t = CVec::from_fn(p.len(), |k, _| p[k] * (1.0 / (self.d[k] + gamma) - 1.0 / gamma));
        x / c(gamma) + &self.q * t
    }

    pub fn trace_inverse(&self, gamma: f64) -> f64 {
        let k = self.d.len();
        self.d.iter().map(|d| 1.0 / (d + gamma)).sum::<f64>() + (self.n() - k) as f64 / gamma
    }

    pub fn trace_inverse_sq(&self, gamma: f64) -> f64 {
        let k = self.d.len();
        self.d.iter().map(|d| 1.0 / ((d + gamma) * (d + gamma))).sum::<f64>() + (self.n() - k) as f64 / (gamma * gamma)
    }

    /// `(⟨g₂′⟩, η₂)` with `⟨g₂′⟩ = γ tr(W⁻¹)/N` and `η₂ = γ / ⟨g₂′⟩`.
    pub fn divergence(&self, gamma: f64) -> (f64, f64) {
        let tr = self.trace_inverse(gamma);
        let n = self.n() as f64;
        (gamma * tr / n, n / tr)
    }

    /// `Aᴴ A diag(β) x`.
    pub(crate) fn gram_scaled(&self, x: &CVec) -> CVec {
        let bx = CVec::from_fn(x.len(), |n, _| x[n] * self.beta[n]);
        self.a.adjoint() * (&self.a * bx)
    }

    /// `∂ tr(W⁻¹) / ∂β_n`.
    pub(crate) fn trace_beta_grad(&self, gamma: f64) -> Vec<f64> {
        let inv_var = 1.0 / self.noise_var;
        let weight: Vec<f64> = self
            .s
            .iter()
            .zip(&self.d)
            .map(|(s, d)| s * s / ((d + gamma) * (d + gamma)))
            .collect();
        (0..self.n())
            .map(|n| {
                let acc: f64 = (0..weight.len()).map(|k| self.q[(n, k)].norm_sqr() * weight[k]).sum();
                -2.0 * inv_var * acc / self.beta[n]
            })
            .collect()
    }
}

pub fn lmmse_step(u2: &CVec, gamma2: f64, a: &CMat, beta: &[f64], noise_var: f64, v: &CVec) -> Result<CVec> {
    check_gamma(gamma2)?;
    if u2.len() != a.ncols() || v.len() != a.nrows() {
        return Err(JadceError::invalid("LMMSE operand dimensions disagree with the pilot matrix"));
    }
    Ok(LmmseOperator::new(a, beta, noise_var)?.solve(u2, gamma2, v))
}

pub fn lmmse_divergence(a: &CMat, beta: &[f64], noise_var: f64, gamma2: f64) -> Result<(f64, f64)> {
    check_gamma(gamma2)?;
    Ok(LmmseOperator::new(a, beta, noise_var)?.divergence(gamma2))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(JadceError::invalid(format!("precision {gamma} must be positive and finite")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use crate::rng::stream;
    use num_complex::Complex64;
    use rand::Rng;

    fn dense_w(a: &CMat, beta: &[f64], noise_var: f64, gamma: f64) -> CMat {
        let b = crate::linalg::diag_scale_columns(a, beta);
        b.adjoint() * &b / c(noise_var) + CMat::identity(a.ncols(), a.ncols()) * c(gamma)
    }

    fn dense_solve(a: &CMat, beta: &[f64], noise_var: f64, gamma: f64, u: &CVec, v: &CVec) -> CVec {
        let b = crate::linalg::diag_scale_columns(a, beta);
        let rhs = u * c(gamma) + b.adjoint() * v / c(noise_var);
        dense_w(a, beta, noise_var, gamma).lu().solve(&rhs).unwrap()
    }

    #[test]
    fn identity_algebra() {
        let a = CMat::identity(5, 5);
        let u = CVec::from_fn(5, |i, _| Complex64::new(i as f64, 1.0));
        let v = CVec::from_fn(5, |i, _| Complex64::new(-1.0, i as f64 * 0.5));
        let s = lmmse_step(&u, 1.0, &a, &[1.0; 5], 1.0, &v).unwrap();
        assert!((s - (&u + &v) / c(2.0)).norm() < 1e-14);
        let (g, eta) = lmmse_divergence(&a, &[1.0; 5], 1.0, 1.0).unwrap();
        assert!((g - 0.5).abs() < 1e-14 && (eta - 2.0).abs() < 1e-13);
    }

    #[test]
    fn huge_precision_returns_prior() {
        let mut rng = stream(1, 0);
        let a = gaussian_matrix(&mut rng, 4, 6);
        let u = gaussian_matrix(&mut rng, 6, 1).column(0).into_owned();
        let v = gaussian_matrix(&mut rng, 4, 1).column(0).into_owned();
        let s = lmmse_step(&u, 1e12, &a, &[1.0; 6], 0.5, &v).unwrap();
        assert!((&s - &u).norm() / u.norm() < 1e-6);
        let (g, eta) = lmmse_divergence(&a, &[1.0; 6], 0.5, 1e10).unwrap();
        assert!((g - 1.0).abs() < 1e-6 && (eta / 1e10 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matches_dense_solver() {
        let mut rng = stream(2, 0);
        for trial in 0..20 {
            let (l, n) = if trial % 2 == 0 { (4, 6) } else { (7, 5) };
            let a = gaussian_matrix(&mut rng, l, n);
            let beta: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..2.0)).collect();
            let nv = 10f64.powf(rng.random_range(-2.0..1.0));
            let g = 10f64.powf(rng.random_range(-3.0..3.0));
            let u = gaussian_matrix(&mut rng, n, 1).column(0).into_owned();
            let v = gaussian_matrix(&mut rng, l, 1).column(0).into_owned();
            let op = LmmseOperator::new(&a, &beta, nv).unwrap();
            let fast = op.solve(&u, g, &v);
            let slow = dense_solve(&a, &beta, nv, g, &u, &v);
            assert!((&fast - &slow).norm() / slow.norm() < 1e-10, "trial {trial}");
            let winv = dense_w(&a, &beta, nv, g).try_inverse().unwrap();
            let tr: f64 = (0..n).map(|i| winv[(i, i)].re).sum();
            assert!((op.trace_inverse(g) - tr).abs() / tr < 1e-10);
            let tr2: f64 = (&winv * &winv).diagonal().iter().map(|z| z.re).sum();
            assert!((op.trace_inverse_sq(g) - tr2).abs() / tr2 < 1e-10);
            let x = gaussian_matrix(&mut rng, n, 1).column(0).into_owned();
            assert!((op.apply_inverse(&x, g) - &winv * &x).norm() / (&winv * &x).norm() < 1e-10);
        }
    }

    #[test]
    fn trace_gradient_matches_differences() {
        let mut rng = stream(3, 0);
        let a = gaussian_matrix(&mut rng, 4, 7);
        let beta: Vec<f64> = (0..7).map(|_| rng.random_range(0.5..1.5)).collect();
        let (nv, g) = (0.3, 0.8);
        let grad = LmmseOperator::new(&a, &beta, nv).unwrap().trace_beta_grad(g);
        for n in 0..7 {
            let h = 1e-6;
            let mut bp = beta.clone();
            bp[n] += h;
            let mut bm = beta.clone();
            bm[n] -= h;
            let fd = (LmmseOperator::new(&a, &bp, nv).unwrap().trace_inverse(g)
                - LmmseOperator::new(&a, &bm, nv).unwrap().trace_inverse(g))
                / (2.0 * h);
            assert!((grad[n] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{n}: {} vs {fd}", grad[n]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = CMat::identity(3, 3);
        let u = CVec::zeros(3);
        assert!(lmmse_step(&u, 0.0, &a, &[1.0; 3], 1.0, &u).is_err());
        assert!(lmmse_step(&u, 1.0, &a, &[1.0; 3], 0.0, &u).is_err());
        assert!(lmmse_step(&u, 1.0, &a, &[1.0; 2], 1.0, &u).is_err());
    }
}

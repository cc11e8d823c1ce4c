//! Dense complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{JadceError, Result};
use crate::rng::complex_normal;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Thin SVD `m = u * diag(s) * v_h` with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v_h: CMat,
}

pub fn thin_svd(m: &CMat) -> Result<ThinSvd> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(JadceError::invalid("SVD of an empty matrix"));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(JadceError::numerical(format!(
            "SVD input {}x{} contains non-finite entries",
            m.nrows(),
            m.ncols()
        )));
    }
    let svd = nalgebra::linalg::SVD::try_new(m.clone(), true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| {
            JadceError::numerical(format!(
                "SVD did not converge for a {}x{} matrix (frobenius norm {:.3e})",
                m.nrows(),
                m.ncols(),
                m.norm()
            ))
        })?;
    let u = svd.u.expect("requested U");
    let v_h = svd.v_t.expect("requested V^H");
    let sv = svd.singular_values;
    let k = sv.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let mut u_sorted = CMat::zeros(u.nrows(), k);
    let mut v_sorted = CMat::zeros(k, v_h.ncols());
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
        v_sorted.set_row(dst, &v_h.row(src));
        s.push(sv[src]);
    }
    Ok(ThinSvd {
        u: u_sorted,
        s,
        v_h: v_sorted,
    })
}

pub fn singular_values(m: &CMat) -> Result<Vec<f64>> {
    Ok(thin_svd(m)?.s)
}

pub fn fro_norm_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    // column-major fill order; fixed so that seeds map to identical matrices
    CMat::from_fn(rows, cols, |_, _| complex_normal(rng, 1.0))
}

/// `rows x cols` matrix with orthonormal columns (`rows >= cols`), Haar distributed.
pub fn haar_orthonormal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    debug_assert!(rows >= cols);
    let g = gaussian_matrix(rng, rows, cols);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // fix the phase ambiguity so the distribution is Haar
    for j in 0..cols {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q.columns(0, cols).into_owned()
}

pub fn diag_scale_columns(a: &CMat, scale: &[f64]) -> CMat {
    let mut out = a.clone();
    for (j, &s) in scale.iter().enumerate() {
        let mut col = out.column_mut(j);
        col *= Complex64::new(s, 0.0);
    }
    out
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[inline]
pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn svd_reconstructs_and_sorts() {
        let mut rng = stream(3, 0);
        let m = gaussian_matrix(&mut rng, 5, 7);
        let svd = thin_svd(&m).unwrap();
        assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        let mut sig = CMat::zeros(5, 5);
        for i in 0..5 {
            sig[(i, i)] = c(svd.s[i]);
        }
        let back = &svd.u * sig * &svd.v_h;
        assert!((back - m).norm() < 1e-12);
    }

    #[test]
    fn haar_columns_orthonormal() {
        let mut rng = stream(4, 0);
        let q = haar_orthonormal(&mut rng, 9, 4);
        let g = q.adjoint() * &q;
        assert!((g - CMat::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn svd_rejects_nan() {
        let mut m = CMat::zeros(2, 2);
        m[(0, 0)] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(thin_svd(&m), Err(JadceError::Numerical(_))));
    }
}

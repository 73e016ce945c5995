//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Replace `m` by `(m + mᵀ) / 2` in place.
pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Whether `a ⪯ b` in the PSD order, i.e. all eigenvalues of `b - a` are ≥ `-tol`.
pub fn psd_leq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    let mut diff = b - a;
    symmetrize_in_place(&mut diff);
    min_eigenvalue(&diff) >= -tol
}

/// A factor `L` with `L Lᵀ = cov⁺`, where `cov⁺` is `cov` with negative
/// eigenvalues clipped to zero. Returns the factor and whether clipping was
/// needed.
pub fn psd_factor(cov: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if let Some(chol) = cov.clone().cholesky() {
        return (chol.l(), false);
    }
    let eig = SymmetricEigen::new(cov.clone());
    let n = cov.nrows();
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let mut clipped = false;
    let mut l = eig.eigenvectors.clone();
    for j in 0..n {
        let mut lambda = eig.eigenvalues[j];
        if lambda < 0.0 {
            // Round-off on an exactly singular matrix is not worth reporting.
            if lambda < -1e-12 * scale.max(1.0) {
                clipped = true;
            }
            lambda = 0.0;
        }
        let s = lambda.sqrt();
        for i in 0..n {
            l[(i, j)] *= s;
        }
    }
    (l, clipped)
}

/// Solve `a x = b` for symmetric `a`, via Cholesky when `a` is SPD and a
/// pseudo-inverse otherwise. The flag reports whether the fallback was used.
pub fn solve_symmetric(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if let Some(chol) = a.clone().cholesky() {
        return (chol.solve(b), false);
    }
    let pinv = pseudo_inverse(a);
    (pinv * b, true)
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let n = a.nrows();
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let cutoff = scale * 1e-12 * n as f64;
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let lambda = eig.eigenvalues[k];
        if lambda.abs() <= cutoff {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        out += (v * v.transpose()) / lambda;
    }
    out
}

/// Ratio of largest to smallest absolute eigenvalue of a symmetric matrix.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(a.clone());
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for v in eig.eigenvalues.iter() {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Ordinary least squares `β = argmin ‖y - Xβ‖²` with a tiny ridge for
/// numerical safety. Returns coefficients and the residual sum of squares.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, f64) {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let p = xtx.nrows();
    let ridge = 1e-10 * (0..p).map(|i| xtx[(i, i)]).fold(0.0, f64::max).max(1e-300);
    let reg = &xtx + DMatrix::identity(p, p) * ridge;
    let (beta, _) = solve_symmetric(&reg, &DMatrix::from_column_slice(p, 1, xty.as_slice()));
    let beta = DVector::from_column_slice(beta.as_slice());
    let resid = y - x * &beta;
    (beta, resid.norm_squared())
}

/// Inverse of a symmetric positive definite matrix (pseudo-inverse fallback).
pub fn spd_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    match a.clone().cholesky() {
        Some(chol) => chol.inverse(),
        None => pseudo_inverse(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_of_psd_reproduces_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let (l, clipped) = psd_factor(&m);
        assert!(!clipped);
        assert!((&l * l.transpose() - &m).abs().max() < 1e-12);
    }

    #[test]
    fn factor_clips_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let (l, clipped) = psd_factor(&m);
        assert!(clipped);
        let rebuilt = &l * l.transpose();
        assert!((rebuilt[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(rebuilt[(1, 1)].abs() < 1e-12);
    }

    #[test]
    fn singular_factor_is_not_flagged() {
        let m = DMatrix::zeros(3, 3);
        let (l, clipped) = psd_factor(&m);
        assert!(!clipped);
        assert_eq!(l.abs().max(), 0.0);
    }

    #[test]
    fn pseudo_inverse_of_rank_one() {
        let v = DVector::from_row_slice(&[1.0, 1.0]);
        let a = &v * v.transpose();
        let p = pseudo_inverse(&a);
        assert!((&a * &p * &a - &a).abs().max() < 1e-12);
    }

    #[test]
    fn least_squares_recovers_line() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_row_slice(&[1.0, 3.0, 5.0, 7.0]);
        let (b, rss) = least_squares(&x, &y);
        assert!((b[0] - 1.0).abs() < 1e-8 && (b[1] - 2.0).abs() < 1e-8);
        assert!(rss < 1e-12);
    }
}

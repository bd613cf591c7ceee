//! Small dense helpers shared by the network and estimator modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;

/// Largest singular value `‖A‖₂`, by power iteration on `AᵀA`.
///
/// Stops when the relative change of the Rayleigh quotient drops below
/// [`POWER_TOL`] or after [`POWER_MAX_ITER`] iterations.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let gram = a.transpose() * a;
    // Non-uniform start so the iterate is not orthogonal to the top
    // eigenvector for sign-alternating matrices.
    let mut v = DVector::from_fn(n, |j, _| 1.0 + 0.1 * (j as f64 + 1.0) / n as f64);
    v.normalize_mut();
    let mut lambda = 0.0_f64;
    for _ in 0..POWER_MAX_ITER {
        let w = &gram * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let converged = (next - lambda).abs() <= POWER_TOL * next.abs().max(f64::MIN_POSITIVE);
        lambda = next;
        if converged {
            break;
        }
    }
    // Final Rayleigh quotient on the converged direction.
    let rq = v.dot(&(&gram * &v)).max(lambda);
    rq.max(0.0).sqrt()
}

/// Smallest singular value `√λ_min(AᵀA)`.
pub fn min_singular_value(a: &DMatrix<f64>) -> f64 {
    min_eigenvalue(&(a.transpose() * a)).max(0.0).sqrt()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Maximum absolute row sum.
pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Maximum absolute column sum.
pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

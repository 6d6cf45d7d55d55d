use crate::error::{Error, Result};

use super::matrix::{norm2, Matrix};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// Slack added to the bound in [`operator_norm_bound_check`].
pub const BOUND_SLACK: f64 = 1e-9;

/// Largest singular value by power iteration on `mᵀm`.
///
/// The seed vector is the normalized all-ones vector. If that seed lies in
/// the null space of `mᵀm` the unit basis vectors are tried in order, and a
/// matrix annihilating all of them is zero. Iteration stops once two
/// successive estimates differ by less than `tol`; otherwise
/// [`Error::NotConverged`] carries the last estimate.
pub fn spectral_norm(m: &Matrix, tol: f64, max_iters: usize) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::config("tol", "must be positive"));
    }
    let n = m.cols();
    let seeds = std::iter::once(vec![1.0 / (n as f64).sqrt(); n]).chain((0..n).map(|j| {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        e
    }));

    for seed in seeds {
        if let Some(result) = power_iterate(m, seed, tol, max_iters) {
            return result;
        }
    }
    Ok(0.0)
}

/// `None` when the seed is annihilated on the first step.
fn power_iterate(m: &Matrix, mut v: Vec<f64>, tol: f64, max_iters: usize) -> Option<Result<f64>> {
    let mut prev: Option<f64> = None;
    let mut sigma = 0.0;
    for it in 0..max_iters {
        let mv = m.matvec(&v).expect("square-compatible by construction");
        sigma = norm2(&mv);
        let w = m.matvec_t(&mv).expect("square-compatible by construction");
        let wn = norm2(&w);
        if wn == 0.0 {
            return if it == 0 { None } else { Some(Ok(sigma)) };
        }
        if let Some(p) = prev {
            if (sigma - p).abs() < tol {
                return Some(Ok(sigma));
            }
        }
        prev = Some(sigma);
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
    }
    Some(Err(Error::NotConverged {
        estimate: sigma,
        iterations: max_iters,
    }))
}

/// `spectral_norm` with the default tolerance and budget; a non-converged
/// run yields its last estimate.
pub fn sigma_max(m: &Matrix) -> f64 {
    match spectral_norm(m, DEFAULT_TOL, DEFAULT_MAX_ITERS) {
        Ok(s) => s,
        Err(Error::NotConverged { estimate, .. }) => estimate,
        Err(e) => unreachable!("default tolerance is valid: {e}"),
    }
}

/// True iff `σ_max(m) ≤ bound + 1e-9`.
pub fn operator_norm_bound_check(m: &Matrix, bound: f64) -> bool {
    sigma_max(m) <= bound + BOUND_SLACK
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_unit_norm() {
        assert!((sigma_max(&Matrix::identity(3)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_case() {
        let s = spectral_norm(&Matrix::from_diag(&[3.0, 1.0]), 1e-10, 10_000).unwrap();
        assert!((s - 3.0).abs() < 1e-9);
    }

    #[test]
    fn seed_in_null_space_falls_back() {
        // ones vector is annihilated by [1, -1]
        let m = Matrix::from_rows(&[[1.0, -1.0]]);
        let s = sigma_max(&m);
        assert!((s - 2f64.sqrt()).abs() < 1e-9, "{s}");
    }

    #[test]
    fn zero_matrix_norm_is_zero() {
        assert_eq!(sigma_max(&Matrix::zeros(3, 2)), 0.0);
    }

    #[test]
    fn non_convergence_reports_estimate() {
        let m = Matrix::from_diag(&[1.0, 0.9]);
        match spectral_norm(&m, 1e-300, 3) {
            Err(Error::NotConverged { estimate, iterations }) => {
                assert_eq!(iterations, 3);
                assert!(estimate > 0.0);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn bound_check() {
        assert!(operator_norm_bound_check(&Matrix::identity(4), 1.0));
        assert!(!operator_norm_bound_check(&Matrix::identity(4).scale(2.0), 1.0));
    }
}

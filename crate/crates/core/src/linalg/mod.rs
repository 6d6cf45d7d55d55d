//! Dense linear algebra in `f64`: matrices, softmax, initializers and
//! spectral-norm estimation.

mod matrix;
mod rng;
mod spectral;

pub use matrix::{dot, norm2, Matrix};
pub use rng::{RngState, RNG_ALGORITHM};
pub use spectral::{
    operator_norm_bound_check, sigma_max, spectral_norm, BOUND_SLACK, DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
};

use crate::error::{Error, Result};

pub type Vector = Vec<f64>;

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vector> {
    if v.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// He-uniform draw: i.i.d. `U[-√(6/cols), √(6/cols)]`, fan-in = `cols`.
pub fn kaiming_init(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
    let bound = (6.0 / cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-bound, bound))
}

pub fn zero_init(rows: usize, cols: usize) -> Matrix {
    Matrix::zeros(rows, cols)
}

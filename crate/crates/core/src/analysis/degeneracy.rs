use serde::{Deserialize, Serialize};

use crate::adapters::{talking_mix, TalkLoraLayer};
use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix, RngState, Vector};

/// Outcome of the three structural checks on the talking module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub trials: usize,
    /// (a) `C = I`: largest `|h̃ − h|` seen (must be exactly 0).
    pub identity_max_diff: f64,
    pub identity_exact: bool,
    /// (b) diagonal `C`: largest change of `h̃_i`, `i ≠ j`, after perturbing `A_j`.
    pub diagonal_max_leak: f64,
    pub diagonal_isolated: bool,
    /// (c) `C_01 = 1`: smallest `‖Δh̃_0‖` after perturbing `A_1`, over trials.
    pub offdiag_min_influence: f64,
    pub offdiag_witnessed: bool,
    pub passed: bool,
}

fn max_abs_diff(a: &[Vector], b: &[Vector]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn mix_with(a: &[Matrix], c: &Matrix, x: &[f64]) -> Result<Vec<Vector>> {
    let h = a.iter().map(|m| m.matvec(x)).collect::<Result<Vec<_>>>()?;
    talking_mix(c, &h)
}

/// Runs (a), (b) and (c) on `trials` random instances built around the
/// projections of `tl`. Needs at least two experts.
pub fn degeneracy_check(
    tl: &TalkLoraLayer,
    trials: usize,
    rng: &mut RngState,
) -> Result<DegeneracyReport> {
    let n = tl.experts();
    if n < 2 {
        return Err(Error::config("experts", "degeneracy checks need n >= 2"));
    }
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    let d = tl.d_in();
    let (re, _) = tl.a[0].shape();
    let mut identity_max_diff: f64 = 0.0;
    let mut diagonal_max_leak: f64 = 0.0;
    let mut offdiag_min_influence = f64::INFINITY;
    let eye = Matrix::identity(n);
    let mut coupled = Matrix::identity(n);
    coupled.set(0, 1, 1.0);
    for _ in 0..trials {
        let x = rng.normal_vec(d, 1.0);

        let h = tl.project(&x)?;
        let ht = talking_mix(&eye, &h)?;
        identity_max_diff = identity_max_diff.max(max_abs_diff(&h, &ht));

        let diag: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let cd = Matrix::from_diag(&diag);
        let j = (rng.next_f64() * n as f64) as usize % n;
        let mut a2 = tl.a.clone();
        let bump = Matrix::from_fn(re, d, |_, _| rng.normal());
        a2[j] = a2[j].add(&bump)?;
        let before = mix_with(&tl.a, &cd, &x)?;
        let after = mix_with(&a2, &cd, &x)?;
        for i in (0..n).filter(|&i| i != j) {
            diagonal_max_leak =
                diagonal_max_leak.max(max_abs_diff(&before[i..=i], &after[i..=i]));
        }

        let mut a3 = tl.a.clone();
        a3[1] = a3[1].add(&bump)?;
        let before = mix_with(&tl.a, &coupled, &x)?;
        let after = mix_with(&a3, &coupled, &x)?;
        let change: Vec<f64> = after[0].iter().zip(&before[0]).map(|(p, q)| p - q).collect();
        offdiag_min_influence = offdiag_min_influence.min(norm2(&change));
    }
    let identity_exact = identity_max_diff == 0.0;
    let diagonal_isolated = diagonal_max_leak == 0.0;
    let offdiag_witnessed = offdiag_min_influence > 0.0;
    Ok(DegeneracyReport {
        trials,
        identity_max_diff,
        identity_exact,
        diagonal_max_leak,
        diagonal_isolated,
        offdiag_min_influence,
        offdiag_witnessed,
        passed: identity_exact && diagonal_isolated && offdiag_witnessed,
    })
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Per-sample loss; batch losses are the mean over samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    /// `(1/k)·Σ_j (y_j − t_j)²`
    #[default]
    Mse,
    /// `−Σ_j t_j·log softmax(y)_j`, targets read as (unnormalized) class weights.
    SoftmaxCrossEntropy,
}

impl LossSpec {
    /// Loss value and `∂loss/∂y` for one sample.
    pub fn value_and_grad(self, y: &[f64], target: &[f64]) -> Result<(f64, Vector)> {
        if y.len() != target.len() {
            return Err(Error::ShapeMismatch {
                op: "loss",
                left: (y.len(), 1),
                right: (target.len(), 1),
            });
        }
        match self {
            LossSpec::Mse => {
                let k = y.len() as f64;
                let mut value = 0.0;
                let grad = y
                    .iter()
                    .zip(target)
                    .map(|(a, t)| {
                        let r = a - t;
                        value += r * r;
                        2.0 * r / k
                    })
                    .collect();
                Ok((value / k, grad))
            }
            LossSpec::SoftmaxCrossEntropy => {
                let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + y.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                let mass: f64 = target.iter().sum();
                let value = -target.iter().zip(y).map(|(t, v)| t * (v - lse)).sum::<f64>();
                let grad = y
                    .iter()
                    .zip(target)
                    .map(|(v, t)| (v - lse).exp() * mass - t)
                    .collect();
                Ok((value, grad))
            }
        }
    }

    pub fn value(self, y: &[f64], target: &[f64]) -> Result<f64> {
        Ok(self.value_and_grad(y, target)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_zero_residual() {
        let (v, g) = LossSpec::Mse.value_and_grad(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mse_value() {
        assert_eq!(LossSpec::Mse.value(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let v = LossSpec::SoftmaxCrossEntropy
            .value(&[0.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0])
            .unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_gradient_matches_differences() {
        let y = [0.3, -1.2, 2.0];
        let t = [0.2, 0.5, 0.3];
        let (_, g) = LossSpec::SoftmaxCrossEntropy.value_and_grad(&y, &t).unwrap();
        for j in 0..3 {
            let eps = 1e-6;
            let mut yp = y;
            let mut ym = y;
            yp[j] += eps;
            ym[j] -= eps;
            let fd = (LossSpec::SoftmaxCrossEntropy.value(&yp, &t).unwrap()
                - LossSpec::SoftmaxCrossEntropy.value(&ym, &t).unwrap())
                / (2.0 * eps);
            assert!((fd - g[j]).abs() < 1e-8);
        }
    }
}

//! Reference implementations used as test oracles. They share no code
//! with the library beyond reading `Matrix` entries.

#![allow(dead_code)]

use talklora::adapters::{AdapterConfig, FrozenLinear, LoraAdapter, MoeLoraLayer, TalkLoraLayer};
use talklora::linalg::{Matrix, RngState};

pub type Dense = Vec<Vec<f64>>;

pub fn dense(m: &Matrix) -> Dense {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect())
        .collect()
}

pub fn naive_matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn naive_matvec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

pub fn kron(a: &Dense, b: &Dense) -> Dense {
    let (p, q) = (a.len(), a[0].len());
    let (r, s) = (b.len(), b[0].len());
    let mut out = vec![vec![0.0; q * s]; p * r];
    for i in 0..p {
        for j in 0..q {
            for k in 0..r {
                for l in 0..s {
                    out[i * r + k][j * s + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

pub fn eye(n: usize) -> Dense {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Singular values by one-sided Jacobi rotations, descending.
pub fn singular_values(a: &Dense) -> Vec<f64> {
    let mut u = if a.len() >= a[0].len() {
        a.clone()
    } else {
        transpose(a)
    };
    let (m, n) = (u.len(), u[0].len());
    for _ in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for row in u.iter() {
                    alpha += row[p] * row[p];
                    beta += row[q] * row[q];
                    gamma += row[p] * row[q];
                }
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(1e-300));
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for row in u.iter_mut().take(m) {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n)
        .map(|j| u.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn sigma_max_oracle(m: &Matrix) -> f64 {
    singular_values(&dense(m))[0]
}

pub fn softmax_oracle(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| p + q).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

pub fn lora_oracle(w0: &Matrix, ad: &LoraAdapter, cfg: &AdapterConfig, x: &[f64]) -> Vec<f64> {
    let ba = naive_matmul(&dense(&ad.b), &dense(&ad.a));
    let s = cfg.scale();
    let delta: Vec<f64> = naive_matvec(&ba, x).into_iter().map(|v| s * v).collect();
    add(&naive_matvec(&dense(w0), x), &delta)
}

pub fn moelora_oracle(w0: &Matrix, ml: &MoeLoraLayer, cfg: &AdapterConfig, x: &[f64]) -> Vec<f64> {
    let g = softmax_oracle(&naive_matvec(&dense(&ml.router), x));
    let mut y = naive_matvec(&dense(w0), x);
    for i in 0..ml.a.len() {
        let w = naive_matmul(&dense(&ml.b[i]), &dense(&ml.a[i]));
        for (o, v) in y.iter_mut().zip(naive_matvec(&w, x)) {
            *o += cfg.scale() * g[i] * v;
        }
    }
    y
}

/// Gates from the Kronecker form: `softmax(W_g (C ⊗ I) [A_1; …; A_n] x)`.
pub fn talklora_gates_oracle(tl: &TalkLoraLayer, c: &Matrix, x: &[f64]) -> Vec<f64> {
    let re = tl.a[0].rows();
    let mut stacked: Dense = Vec::new();
    for a in &tl.a {
        stacked.extend(dense(a));
    }
    let mix = kron(&dense(c), &eye(re));
    let ht = naive_matvec(&mix, &naive_matvec(&stacked, x));
    softmax_oracle(&naive_matvec(&dense(&tl.router), &ht))
}

pub fn talklora_oracle(
    w0: &Matrix,
    tl: &TalkLoraLayer,
    b: &[Matrix],
    cfg: &AdapterConfig,
    x: &[f64],
) -> Vec<f64> {
    let c = if cfg.talking_enabled {
        tl.c.clone()
    } else {
        Matrix::identity(tl.a.len())
    };
    let g = talklora_gates_oracle(tl, &c, x);
    let mut y = naive_matvec(&dense(w0), x);
    for i in 0..tl.a.len() {
        let w = naive_matmul(&naive_matmul(&dense(&b[i]), &dense(&tl.e[i])), &dense(&tl.a[i]));
        for (o, v) in y.iter_mut().zip(naive_matvec(&w, x)) {
            *o += cfg.scale() * g[i] * v;
        }
    }
    y
}

pub fn random_matrix(rows: usize, cols: usize, std: f64, rng: &mut RngState) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std * rng.normal())
}

pub fn random_layer(d_in: usize, d_out: usize, rng: &mut RngState) -> FrozenLinear {
    FrozenLinear::new(random_matrix(d_out, d_in, 1.0 / (d_in as f64).sqrt(), rng))
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kaiming_init, sigma_max, softmax, zero_init, Matrix, RngState, Vector};

use super::config::{AdapterConfig, ProjectionTag};
use super::frozen::FrozenLinear;
use super::stack::SharedProjectionStore;
use super::{gated_sum, ForwardTrace};

/// Where a TalkLoRA layer finds its up-projections `B_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UpProjections {
    /// Resolved through the [`SharedProjectionStore`] entry for this tag.
    Shared(ProjectionTag),
    Owned(Vec<Matrix>),
}

impl UpProjections {
    pub fn resolve<'a>(&'a self, store: &'a SharedProjectionStore) -> Result<&'a [Matrix]> {
        match self {
            UpProjections::Owned(b) => Ok(b),
            UpProjections::Shared(tag) => store
                .get(*tag)
                .ok_or_else(|| Error::config("share_b", format!("no shared B for {tag}"))),
        }
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, UpProjections::Shared(_))
    }
}

/// One TalkLoRA adaptation site.
///
/// Expert `i` computes `y_i = B_i E_i A_i x`. The router sees the
/// communicated representations `h̃_i = Σ_j C_ij h_j` (with `h_j = A_j x`),
/// concatenated, through `W_g (n×r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TalkLoraLayer {
    pub a: Vec<Matrix>,
    pub e: Vec<Matrix>,
    pub b: UpProjections,
    pub c: Matrix,
    pub router: Matrix,
}

impl TalkLoraLayer {
    /// Draw order: all `A_i`, all `E_i`, `C`, `W_g` (Kaiming); owned `B_i`
    /// are zero. With `spectral_clip_c` set, `C` starts inside the clip ball.
    pub fn new(
        d_in: usize,
        d_out: usize,
        cfg: &AdapterConfig,
        b: UpProjections,
        rng: &mut RngState,
    ) -> Result<Self> {
        cfg.validate_for(d_in, d_out)?;
        let (n, re) = (cfg.experts, cfg.expert_rank());
        let a = (0..n).map(|_| kaiming_init(re, d_in, rng)).collect();
        let e = (0..n).map(|_| kaiming_init(re, re, rng)).collect();
        let mut c = kaiming_init(n, n, rng);
        let router = kaiming_init(n, cfg.rank, rng);
        if let Some(clip) = cfg.spectral_clip_c {
            clip_spectral_norm(&mut c, clip);
        }
        Ok(Self { a, e, b, c, router })
    }

    /// Layer owning fresh zero `B_i`.
    pub fn new_owned(d_in: usize, d_out: usize, cfg: &AdapterConfig, rng: &mut RngState) -> Result<Self> {
        let b = (0..cfg.experts)
            .map(|_| zero_init(d_out, cfg.expert_rank()))
            .collect();
        Self::new(d_in, d_out, cfg, UpProjections::Owned(b), rng)
    }

    pub fn experts(&self) -> usize {
        self.a.len()
    }

    pub fn d_in(&self) -> usize {
        self.a[0].cols()
    }

    /// Vertical stack of the `A_i`: the full `r×d` projection.
    pub fn stacked_a(&self) -> Matrix {
        Matrix::vstack(&self.a).expect("experts share the input dimension")
    }

    /// Communication operator actually applied: `C`, or `I` when talking is off.
    pub fn effective_c(&self, cfg: &AdapterConfig) -> Matrix {
        if cfg.talking_enabled {
            self.c.clone()
        } else {
            Matrix::identity(self.experts())
        }
    }

    fn check(&self, d_in: usize, d_out: Option<usize>, b: Option<&[Matrix]>, cfg: &AdapterConfig) -> Result<()> {
        let (n, re) = (cfg.experts, cfg.expert_rank());
        let mut ok = self.a.len() == n
            && self.e.len() == n
            && self.a.iter().all(|a| a.shape() == (re, d_in))
            && self.e.iter().all(|e| e.shape() == (re, re))
            && self.c.shape() == (n, n)
            && self.router.shape() == (n, cfg.rank);
        if let (Some(b), Some(k)) = (b, d_out) {
            ok &= b.len() == n && b.iter().all(|m| m.shape() == (k, re));
        }
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "talklora",
                left: (n, re),
                right: (self.a.len(), self.e.len()),
            });
        }
        Ok(())
    }

    /// `h_i = A_i x` for every expert.
    pub fn project(&self, x: &[f64]) -> Result<Vec<Vector>> {
        self.a.iter().map(|a| a.matvec(x)).collect()
    }

    /// Router input `h̃` (communicated, or `h` itself when talking is off).
    pub fn communicate(&self, h: &[Vector], cfg: &AdapterConfig) -> Result<Vec<Vector>> {
        if cfg.talking_enabled {
            talking_mix(&self.c, h)
        } else {
            Ok(h.to_vec())
        }
    }

    /// `softmax(W_g · concat(h̃))`.
    pub fn route(&self, h_tilde: &[Vector]) -> Result<Vector> {
        let cat: Vector = h_tilde.iter().flatten().copied().collect();
        softmax(&self.router.matvec(&cat)?)
    }

    /// Routing function `x ↦ g(x)` alone; independent of `B` and `E`.
    pub fn gates(&self, x: &[f64], cfg: &AdapterConfig) -> Result<Vector> {
        self.check(x.len(), None, None, cfg)?;
        let h = self.project(x)?;
        let ht = self.communicate(&h, cfg)?;
        self.route(&ht)
    }
}

/// `h̃_i = Σ_j C_ij h_j`, i.e. `(C ⊗ I)·vec(h)`.
pub fn talking_mix(c: &Matrix, h: &[Vector]) -> Result<Vec<Vector>> {
    let n = h.len();
    if c.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            op: "talking_mix",
            left: c.shape(),
            right: (n, n),
        });
    }
    let re = h.first().map_or(0, Vec::len);
    if let Some(bad) = h.iter().find(|v| v.len() != re) {
        return Err(Error::ShapeMismatch {
            op: "talking_mix",
            left: (re, 1),
            right: (bad.len(), 1),
        });
    }
    Ok((0..n)
        .map(|i| {
            let mut out = vec![0.0; re];
            for (j, hj) in h.iter().enumerate() {
                let cij = c.get(i, j);
                for (o, v) in out.iter_mut().zip(hj) {
                    *o += cij * v;
                }
            }
            out
        })
        .collect())
}

/// Full TalkLoRA forward: `y = W₀x + (α/r)·Σ g_i·B_iE_iA_ix`.
///
/// Expert outputs use the uncommunicated `h_i`; communication only feeds
/// the router.
pub fn talklora_forward(
    layer: &FrozenLinear,
    tl: &TalkLoraLayer,
    store: &SharedProjectionStore,
    x: &[f64],
    cfg: &AdapterConfig,
) -> Result<(Vector, ForwardTrace)> {
    let b = tl.b.resolve(store)?;
    tl.check(layer.d_in(), Some(layer.d_out()), Some(b), cfg)?;
    let base = layer.apply(x)?;
    let mut trace = talklora_delta(tl, b, x, cfg)?;
    trace.y = base.iter().zip(&trace.delta).map(|(b, d)| b + d).collect();
    Ok((trace.y.clone(), trace))
}

/// Adapter-only pass with resolved `B_i`; the returned trace has an empty `y`.
pub(crate) fn talklora_delta(
    tl: &TalkLoraLayer,
    b: &[Matrix],
    x: &[f64],
    cfg: &AdapterConfig,
) -> Result<ForwardTrace> {
    let d_out = b.first().map_or(0, Matrix::rows);
    tl.check(x.len(), Some(d_out), Some(b), cfg)?;
    let h = tl.project(x)?;
    let h_tilde = tl.communicate(&h, cfg)?;
    let gates = tl.route(&h_tilde)?;
    let expert_outputs = h
        .iter()
        .zip(&tl.e)
        .zip(b)
        .map(|((hi, ei), bi)| bi.matvec(&ei.matvec(hi)?))
        .collect::<Result<Vec<_>>>()?;
    let s = cfg.scale();
    let delta: Vector = gated_sum(&gates, &expert_outputs)
        .into_iter()
        .map(|v| s * v)
        .collect();
    Ok(ForwardTrace {
        h,
        h_tilde,
        gates,
        expert_outputs,
        delta,
        y: Vec::new(),
    })
}

/// Rescales `c` so that `σ_max(c) ≤ clip`. Returns the norm before clipping.
pub fn clip_spectral_norm(c: &mut Matrix, clip: f64) -> f64 {
    let sigma = sigma_max(c);
    if sigma > clip {
        c.scale_in_place(clip / sigma);
    }
    sigma
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ModelGeometry, ProjectionDims};
use crate::linalg::{Matrix, RngState, Vector};

use super::config::ProjectionTag;
use super::stack::AdapterStack;
use super::ForwardTrace;

/// Pretrained weight `W₀ (k×d)`. Never trainable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenLinear {
    w0: Matrix,
}

impl FrozenLinear {
    pub fn new(w0: Matrix) -> Self {
        Self { w0 }
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    pub fn d_in(&self) -> usize {
        self.w0.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w0.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vector> {
        self.w0.matvec(x)
    }

    pub fn trainable(&self) -> bool {
        false
    }
}

/// Stand-in host model: `L` frozen linear layers with `tanh` between them
/// (none after the last). Every layer carries the same projection tag, so
/// the adapter stack has one site per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenModel {
    tag: ProjectionTag,
    layers: Vec<FrozenLinear>,
}

impl FrozenModel {
    pub fn new(tag: ProjectionTag, layers: Vec<FrozenLinear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("layers", "must be positive"));
        }
        for pair in layers.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::ShapeMismatch {
                    op: "FrozenModel::new",
                    left: pair[0].w0().shape(),
                    right: pair[1].w0().shape(),
                });
            }
        }
        Ok(Self { tag, layers })
    }

    /// Random frozen stack with entries `U[-√(3/d_in), √(3/d_in)]` (unit-variance
    /// preserving). Deeper stacks need `d_in == d_out`.
    pub fn random(
        layers: usize,
        d_in: usize,
        d_out: usize,
        tag: ProjectionTag,
        rng: &mut RngState,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::config("layers", "must be positive"));
        }
        if layers > 1 && d_in != d_out {
            return Err(Error::config(
                "output_dim",
                "a multi-layer frozen model needs input_dim == output_dim",
            ));
        }
        let bound = (3.0 / d_in as f64).sqrt();
        let layers = (0..layers)
            .map(|_| {
                FrozenLinear::new(Matrix::from_fn(d_out, d_in, |_, _| rng.uniform(-bound, bound)))
            })
            .collect();
        Self::new(tag, layers)
    }

    pub fn tag(&self) -> ProjectionTag {
        self.tag
    }

    pub fn layers(&self) -> &[FrozenLinear] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out()
    }

    /// Geometry describing this model, for building a matching adapter stack.
    pub fn geometry(&self) -> ModelGeometry {
        let total = self.layers.iter().map(|l| l.w0().len() as u64).sum();
        ModelGeometry {
            name: "synthetic".into(),
            total_params: total,
            layers: self.depth(),
            projections: vec![ProjectionDims {
                tag: self.tag,
                d_in: self.input_dim(),
                d_out: self.output_dim(),
            }],
            source: None,
        }
    }

    /// Forward pass with adapters (inference; no dropout).
    pub fn forward(&self, stack: &AdapterStack, x: &[f64]) -> Result<Vector> {
        let mut z = x.to_vec();
        let last = self.depth() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let y = match stack.site_index(l, self.tag) {
                Some(idx) => stack.forward_site(idx, layer, &z)?.0,
                None => layer.apply(&z)?,
            };
            z = if l == last {
                y
            } else {
                y.into_iter().map(f64::tanh).collect()
            };
        }
        Ok(z)
    }

    /// Forward pass that also returns the mixture trace of every layer
    /// (`None` for unadapted layers and plain LoRA).
    pub fn forward_traced(
        &self,
        stack: &AdapterStack,
        x: &[f64],
    ) -> Result<(Vector, Vec<Option<ForwardTrace>>)> {
        let mut z = x.to_vec();
        let mut traces = Vec::with_capacity(self.depth());
        let last = self.depth() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (y, trace) = match stack.site_index(l, self.tag) {
                Some(idx) => stack.forward_site(idx, layer, &z)?,
                None => (layer.apply(&z)?, None),
            };
            traces.push(trace);
            z = if l == last {
                y
            } else {
                y.into_iter().map(f64::tanh).collect()
            };
        }
        Ok((z, traces))
    }

    /// Forward pass without any adapter.
    pub fn forward_frozen(&self, x: &[f64]) -> Result<Vector> {
        let mut z = x.to_vec();
        let last = self.depth() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let y = layer.apply(&z)?;
            z = if l == last {
                y
            } else {
                y.into_iter().map(f64::tanh).collect()
            };
        }
        Ok(z)
    }
}

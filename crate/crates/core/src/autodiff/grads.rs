use std::collections::BTreeMap;

use crate::adapters::{AdapterStack, ParamHandle};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Gradient per trainable tensor of a stack. Shared tensors appear once.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    grads: BTreeMap<ParamHandle, Matrix>,
}

impl GradientSet {
    /// Zero gradients keyed by exactly the stack's trainable set.
    pub fn zeros_like(stack: &AdapterStack) -> Self {
        let grads = stack
            .param_handles()
            .into_iter()
            .map(|h| {
                let (r, c) = stack.param(&h).expect("handle from stack").shape();
                (h, Matrix::zeros(r, c))
            })
            .collect();
        Self { grads }
    }

    pub fn get(&self, h: &ParamHandle) -> Option<&Matrix> {
        self.grads.get(h)
    }

    pub fn get_mut(&mut self, h: &ParamHandle) -> Option<&mut Matrix> {
        self.grads.get_mut(h)
    }

    pub(crate) fn slot(&mut self, h: &ParamHandle) -> &mut Matrix {
        self.grads
            .get_mut(h)
            .unwrap_or_else(|| panic!("no gradient slot for {h}"))
    }

    pub fn handles(&self) -> impl Iterator<Item = &ParamHandle> {
        self.grads.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamHandle, &Matrix)> {
        self.grads.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&ParamHandle, &mut Matrix)> {
        self.grads.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        for (h, g) in &other.grads {
            let mine = self.grads.get_mut(h).ok_or_else(|| {
                Error::config("gradients", format!("handle {h} missing from target set"))
            })?;
            mine.add_assign(g)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            g.scale_in_place(s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.grads.values().map(Matrix::max_abs).fold(0.0, f64::max)
    }
}

//! Reverse-mode gradients for every adapter family, a central-difference
//! oracle to check them, and the AdamW optimizer.
//!
//! The backward pass follows the full chain rule, including the router
//! path: gates depend on `A_i`, `C` and `W_g`, and the softmax Jacobian
//! `diag(g) − ggᵀ` carries that dependence back.

mod adamw;
mod backward;
mod finite_diff;
mod grads;
mod loss;

pub use adamw::{adamw_update, AdamW, AdamWConfig};
pub use backward::{backward, backward_with_masks, batch_loss, forward_with_masks, softmax_backward};
pub use finite_diff::{
    finite_difference_oracle, gradcheck, gradcheck_with, randomize_parameters, relative_error,
    GradcheckReport, DEFAULT_EPSILON, GRADCHECK_TOLERANCE,
};
pub use grads::GradientSet;
pub use loss::LossSpec;

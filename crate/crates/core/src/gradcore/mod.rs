//! Dense `f64` primitives with explicit forward/backward passes, losses,
//! and the Adam optimizer. Everything that trains goes through here.

mod adam;
mod check;
mod ops;
mod tensor;

pub use adam::{Adam, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
pub use check::{grad_check, relative_error, GradCheckReport, GradFragment, FD_STEP, REL_ERR_FLOOR};
pub use ops::{
    accumulate_linear_grads, activation_backward, activation_forward, cross_entropy,
    kl_divergence, linear_backward, linear_forward, sigmoid, softmax, softmax_backward,
    softmax_cross_entropy_grad, softmax_rows, Activation, Linear, Param, LOG_FLOOR,
};
pub(crate) use ops::{cross_entropy_unchecked, kl_unchecked, softmax_nonempty};
pub use tensor::{dot, Tensor2};

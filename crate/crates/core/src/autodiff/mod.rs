//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
pub mod kernels;
mod tape;

pub use gradcheck::{gradient_check, relative_error, CoordError, GradCheckOptions, GradCheckReport};
pub use kernels::Activation;
pub use tape::{Gradients, Tape, Var};

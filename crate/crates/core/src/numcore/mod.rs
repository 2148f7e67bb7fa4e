//! Dense tensors, reverse-mode differentiation, Adam and a finite-difference
//! gradient checker.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamState, BETA1, BETA2, EPS_ADAM};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use tape::{sigmoid, Gradients, ParamId, Tape, Var};
pub use tensor::{Shape, Tensor};

//! Dense tensors, reverse-mode differentiation and gradient verification.

mod error;
pub mod gradcheck;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use error::NumericError;
pub use gradcheck::{grad_check, relative_error, GradCheckError, GradCheckReport};
pub use params::{BoundParams, Initializer, LrGroup, ParamError, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

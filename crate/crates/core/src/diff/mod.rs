//! Minimal reverse-mode differentiation.

mod check;
mod params;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_entries};
pub use params::{Binding, ParamGrads, ParameterStore};
pub use tape::{Grads, Tape, Unary, Var};
pub use tensor::Tensor;

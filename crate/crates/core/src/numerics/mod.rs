//! Dense tensors with a reverse-mode tape covering every operation the model
//! uses, plus a finite-difference gradient checker.

mod gradcheck;
mod graph;
mod ops;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{BatchNormState, Graph, Var};
pub use ops::{sigmoid, Activation, BatchNormMode, Padding};
pub use tensor::Tensor;

//! Dense tensors, the differentiable ops they flow through, Adam, and a
//! finite-difference gradient checker.

pub mod adam;
pub mod ditf;
pub mod gradcheck;
pub mod ops;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use tensor::{DType, Scalar, Tensor};

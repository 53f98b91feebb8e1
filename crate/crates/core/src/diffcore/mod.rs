//! Differentiable numerical core.
//!
//! Only the operators the temporal-CNN pipeline needs are provided, each as
//! a forward/backward pair of free functions in [`ops`]. [`Tape`] records a
//! forward pass over those operators and replays the backward passes in
//! reverse order. [`gradcheck`] compares analytic gradients with central
//! finite differences.

pub mod gradcheck;
pub mod ops;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck, Probe};
pub use ops::{Mode, Padding};
pub use scalar::{gemm, Layout, Scalar};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

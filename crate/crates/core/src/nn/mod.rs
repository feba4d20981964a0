//! Minimal differentiable tensor ops used by the segmentation network.

pub mod gradcheck;
pub mod ops;
mod scalar;
mod tape;
mod tensor;

pub use ops::{Mode, RunningStats};
pub use scalar::Scalar;
pub use tape::{ParamRef, Tape, Var};
pub use tensor::Tensor;

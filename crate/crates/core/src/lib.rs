pub mod data;
pub mod error;
pub mod harness;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod segresnet;
pub mod stream;
pub mod trainer;

pub use error::{Error, Result};
pub use mask::BinaryMask;

//! Minimal layer library with hand-written gradients.

mod conv;
mod gemm;
pub mod ops;

pub use conv::{Conv2d, ConvCache, ConvSpec};
pub use gemm::gemm;

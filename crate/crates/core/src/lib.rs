//! Block shuffling learning for image forgery detection.
//!
//! Images are shuffled on two nested block grids during training: whole tiles
//! are reordered on a coarse grid, then pixels are permuted inside a random
//! subset of fine blocks. A backbone classifier is trained on the shuffled
//! images together with two auxiliary heads: one predicts which fine blocks
//! were permuted, the other regresses the source position of every coarse
//! block. Evaluation runs the classifier on unshuffled images.

pub mod config;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod shuffle;
pub mod tensor;
pub mod training;

pub use error::{BslError, Result};
pub use config::RunConfig;
pub use image::ImageTensor;

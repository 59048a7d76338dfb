//! Manifests, image loading, degradations and the synthetic forgery set.

pub mod degrade;
pub mod loader;
pub mod manifest;
pub mod synth;

pub use degrade::{apply_degradation, Degradation};
pub use loader::{load_batch, load_image, InMemoryDataset, OnError, DEFAULT_INPUT_SIDE};
pub use manifest::{Manifest, ManifestRow, Split};
pub use synth::{synth_forgery, synth_real_pool, write_benchmark, BenchmarkSpec, SynthFace};

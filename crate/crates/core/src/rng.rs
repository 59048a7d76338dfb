//! Seeded random streams.
//!
//! Every random decision is drawn from a ChaCha stream keyed by the root seed plus
//! a small tuple naming what the stream is for. Streams never depend on the order
//! in which samples are processed, so loader parallelism and resumption cannot
//! change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for. Keeps streams for different purposes disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Purpose {
    /// Flip + shuffle randomness of one training sample.
    Sample = 1,
    /// Epoch order of the training set.
    EpochOrder = 2,
    /// Parameter initialization.
    Init = 3,
    /// Shuffles applied during evaluation (restoration histogram).
    Eval = 4,
    /// Synthetic data generation.
    Synth = 5,
    Inspect = 6,
}

/// Derives a stream from `(root seed, purpose, a, b)`.
pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> Stream {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&(purpose as u32).to_le_bytes());
    key[12..20].copy_from_slice(&a.to_le_bytes());
    key[20..28].copy_from_slice(&b.to_le_bytes());
    key[28..32].copy_from_slice(b"BSL1");
    ChaCha8Rng::from_seed(key)
}

/// Per-sample stream for training sample `index` in epoch `epoch`.
pub fn sample_stream(seed: u64, epoch: u64, index: u64) -> Stream {
    stream(seed, Purpose::Sample, epoch, index)
}

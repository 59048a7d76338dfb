use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::model::ParamSet;
use crate::optim::GroupState;
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub step: u64,
    pub auc: f64,
}

/// Everything that changes during training. Random streams are derived from
/// the run seed and the step, so no generator state needs saving.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamSet,
    /// Optimizer state for Θ, Ψ and Φ in that order.
    pub optimizer: [GroupState; 3],
    /// Number of optimizer steps taken.
    pub step: u64,
    pub best: Option<BestRecord>,
}

impl TrainState {
    pub fn new(params: ParamSet) -> Self {
        let optimizer = [
            GroupState::new(params.theta.len()),
            GroupState::new(params.psi.len()),
            GroupState::new(params.phi.len()),
        ];
        Self {
            params,
            optimizer,
            step: 0,
            best: None,
        }
    }
}

/// Identifies one draw of a training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleKey {
    pub epoch: u64,
    pub index: usize,
}

/// Cycles through the training set in a fresh seeded order every epoch.
/// Batch `t` is a pure function of `(seed, t)`.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    seed: u64,
    len: usize,
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(seed: u64, len: usize, batch_size: usize) -> Self {
        assert!(len > 0 && batch_size > 0);
        Self { seed, len, batch_size }
    }

    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len).collect();
        order.shuffle(&mut stream(self.seed, Purpose::EpochOrder, epoch, 0));
        order
    }

    /// Keys for the batch consumed by optimizer step `step` (0-based).
    pub fn batch(&self, step: u64) -> Vec<SampleKey> {
        let start = step * self.batch_size as u64;
        let mut keys = Vec::with_capacity(self.batch_size);
        let mut cached: Option<(u64, Vec<usize>)> = None;
        for pos in start..start + self.batch_size as u64 {
            let epoch = pos / self.len as u64;
            if cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
                cached = Some((epoch, self.epoch_order(epoch)));
            }
            let order = &cached.as_ref().expect("filled above").1;
            keys.push(SampleKey {
                epoch,
                index: order[(pos % self.len as u64) as usize],
            });
        }
        keys
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epochs_visit_every_sample_once() {
        let s = BatchSampler::new(3, 10, 4);
        let keys: Vec<SampleKey> = (0..5).flat_map(|t| s.batch(t)).collect();
        let mut first: Vec<usize> = keys[..10].iter().map(|k| k.index).collect();
        first.sort();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        assert!(keys[..10].iter().all(|k| k.epoch == 0));
        assert!(keys[10..20].iter().all(|k| k.epoch == 1));
        assert_ne!(s.epoch_order(0), s.epoch_order(1));
        assert_eq!(s.batch(2), BatchSampler::new(3, 10, 4).batch(2));
    }
}

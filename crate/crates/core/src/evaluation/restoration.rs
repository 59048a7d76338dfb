use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::InMemoryDataset;
use crate::error::{BslError, Result};
use crate::model::{decode_coords, Backbone, BslModel, ParamSet};
use crate::rng::{stream, Purpose};
use crate::shuffle::{shuffle_image, CoordTarget, ShuffleConfig};

/// Counts of coarse blocks by Chebyshev distance between their true source
/// cell and the cell decoded from the restoration head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestorationHistogram {
    pub counts: Vec<u64>,
}

impl RestorationHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn fraction_within(&self, distance: usize) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.counts.iter().take(distance + 1).sum::<u64>() as f64 / total as f64
    }

    pub fn fractions(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    fn add(&mut self, distance: usize) {
        if self.counts.len() <= distance {
            self.counts.resize(distance + 1, 0);
        }
        self.counts[distance] += 1;
    }

    fn merge(mut self, other: Self) -> Self {
        for (d, &c) in other.counts.iter().enumerate() {
            if c > 0 {
                if self.counts.len() <= d {
                    self.counts.resize(d + 1, 0);
                }
                self.counts[d] += c;
            }
        }
        self
    }
}

pub fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// Histogram for one image given the decoded predictions in output order.
pub fn histogram_for(target: &CoordTarget, predicted: &[(usize, usize)]) -> RestorationHistogram {
    let mut h = RestorationHistogram { counts: Vec::new() };
    for (k, &p) in predicted.iter().enumerate() {
        h.add(chebyshev(target.beta[k], p));
    }
    h
}

/// Shuffles each image with an evaluation stream keyed by `shuffle.seed` and
/// the image index, runs the restoration head and accumulates distances.
pub fn restoration_histogram<B: Backbone>(
    model: &BslModel<B>,
    params: &ParamSet,
    data: &InMemoryDataset,
    shuffle: &ShuffleConfig,
) -> Result<RestorationHistogram> {
    if params.phi.len() != model.restoration_head().param_len() {
        return Err(BslError::Unsupported("these parameters carry no restoration head".into()));
    }
    let parts: Vec<RestorationHistogram> = data
        .images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = stream(shuffle.seed, Purpose::Eval, 0, i as u64);
            let outcome = shuffle_image(img, shuffle, &mut rng)?;
            let pass = model.forward(params, &outcome.image, false, true)?;
            let (coords, _) = pass.restoration.expect("restoration requested");
            Ok(histogram_for(&outcome.coords, &decode_coords(&coords)))
        })
        .collect::<Result<_>>()?;
    Ok(parts
        .into_iter()
        .fold(RestorationHistogram { counts: Vec::new() }, RestorationHistogram::merge))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centre_guess_on_seven_by_seven() {
        let beta: Vec<(usize, usize)> = (0..49).rev().map(|k| (k / 7, k % 7)).collect();
        let target = CoordTarget::from_beta(7, 7, beta).unwrap();
        let h = histogram_for(&target, &[(3, 3); 49]);
        assert_eq!(h.counts, vec![1, 8, 16, 24]);
        assert!((h.fractions().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_predictions_are_a_point_mass() {
        let target = CoordTarget::from_beta(2, 2, vec![(1, 0), (0, 0), (1, 1), (0, 1)]).unwrap();
        let h = histogram_for(&target, &target.beta);
        assert_eq!(h.counts, vec![4]);
        assert_eq!(h.fraction_within(0), 1.0);
    }
}

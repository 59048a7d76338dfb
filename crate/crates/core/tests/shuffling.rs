mod common;

use bsl::rng::{stream, Purpose};
use bsl::shuffle::{shuffle_image, ShuffleConfig};
use common::{noise_image, permutation_case};

#[test]
fn seeded_permutation_cases() {
    for case in 0..150 {
        permutation_case(case).unwrap();
    }
}

#[test]
fn default_mark_rate_is_one_half() {
    let img = noise_image(224, 3, 0);
    let cfg = ShuffleConfig::default();
    let n = 1500;
    let mean: f64 = (0..n)
        .map(|i| {
            let mut rng = stream(3, Purpose::Sample, 0, i);
            shuffle_image(&img, &cfg, &mut rng).unwrap().mark.mean()
        })
        .sum::<f64>()
        / n as f64;
    // The spread of q dominates: per image the mark mean has a standard
    // deviation near 0.068, so 1500 images give a standard error near 0.0018.
    assert!((mean - 0.5).abs() < 0.01, "mean mark {mean}");
}

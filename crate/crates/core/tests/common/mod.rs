//! Oracles and fixtures shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use bsl::config::RunConfig;
use bsl::datasets::InMemoryDataset;
use bsl::model::{BslModel, ModelConfig, ParamSet};
use bsl::rng::{stream, Purpose};
use bsl::training::{batch_loss_and_grad, prepare_sample, PreparedSample, SampleKey};
use bsl::ImageTensor;
use rand::Rng;

/// Mean over all (fake, real) pairs of 1 for a win and 1/2 for a tie.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                credit += 1.0;
            } else if si == sj {
                credit += 0.5;
            }
        }
    }
    credit / pairs
}

/// Random score/label set with both classes; every third set draws scores
/// from a handful of values so ties are common.
pub fn random_scored_set(seed: u64, n: usize) -> (Vec<f64>, Vec<u8>) {
    let mut rng = stream(seed, Purpose::Eval, 77, n as u64);
    let coarse = seed % 3 == 0;
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
    labels[0] = 0;
    labels[n - 1] = 1;
    let scores = (0..n)
        .map(|_| {
            if coarse {
                rng.random_range(0..5) as f64 / 4.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    (scores, labels)
}

pub fn noise_image(side: usize, channels: usize, seed: u64) -> ImageTensor {
    let mut rng = stream(seed, Purpose::Synth, 4242, 0);
    ImageTensor::from_fn(side, side, channels, |_, _, _| rng.random::<f32>())
}

/// Toy network: 8x8 gray input, two stride-2 convolutions, 2x2 fine blocks
/// and 4x4 coarse blocks. Under 400 parameters in total.
pub fn toy_config(tap_u: Option<&str>, tap_v: Option<&str>) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.input_side = 8;
    cfg.shuffle.s_intra = 2;
    cfg.shuffle.s_inter = 4;
    cfg.model = ModelConfig {
        widths: vec![4, 8],
        in_channels: 1,
        tap_u: tap_u.map(str::to_string),
        tap_v: tap_v.map(str::to_string),
        ..ModelConfig::default()
    };
    cfg
}

pub fn build_model(cfg: &RunConfig) -> BslModel {
    let side = cfg.data.input_side;
    BslModel::from_config(&cfg.model, (side, side), &cfg.shuffle).expect("valid model config")
}

/// Initial parameters with the (normally zero) head weights replaced by
/// small random values so every path carries gradient.
pub fn random_params(model: &BslModel, seed: u64) -> ParamSet {
    let mut p = model.init_params(seed);
    let mut rng = stream(seed, Purpose::Init, 1, 1);
    for v in p.psi.iter_mut().chain(p.phi.iter_mut()) {
        *v = rng.random_range(-0.5..0.5);
    }
    p
}

pub fn toy_dataset(n: usize, side: usize, channels: usize, seed: u64) -> InMemoryDataset {
    let images = (0..n).map(|i| noise_image(side, channels, seed * 1000 + i as u64)).collect();
    let labels = (0..n).map(|i| (i % 2) as u8).collect();
    InMemoryDataset::from_parts(images, labels).unwrap()
}

pub fn prepared_batch(cfg: &RunConfig, data: &InMemoryDataset) -> Vec<PreparedSample> {
    (0..data.len())
        .map(|i| prepare_sample(cfg, &data.images[i], data.labels[i], SampleKey { epoch: 0, index: i }).unwrap())
        .collect()
}

/// Largest violation of `|analytic - numeric| <= rtol * max(|a|, |n|) + atol`
/// over one parameter group, using central differences with step `h`.
/// Returns `(worst excess, number of entries checked)`; the check passes when
/// the excess is not positive.
pub fn finite_difference_check(
    model: &BslModel,
    cfg: &RunConfig,
    params: &ParamSet,
    batch: &[PreparedSample],
    group: usize,
    rtol: f64,
    atol: f64,
) -> (f64, usize) {
    let h = 1e-6;
    let (_, grads) = batch_loss_and_grad(model, cfg, params, batch).unwrap();
    let analytic = grads.groups()[group].to_vec();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..analytic.len() {
        let eval = |delta: f64| {
            let mut p = params.clone();
            p.groups_mut()[group][i] += delta;
            batch_loss_and_grad(model, cfg, &p, batch).unwrap().0.l_total
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let a = analytic[i];
        let excess = (a - numeric).abs() - (rtol * a.abs().max(numeric.abs()) + atol);
        worst = worst.max(excess);
    }
    (worst, analytic.len())
}

/// Shuffles one seeded random case and checks pixel conservation, the
/// bijection, the mark against the recorded permutations, and the inverse.
pub fn permutation_case(case: u64) -> Result<(), String> {
    use bsl::shuffle::{reorder_blocks, shuffle_image, unshuffle, ShuffleConfig};

    const GEOMETRIES: [(usize, usize, usize); 9] = [
        (64, 8, 16),
        (64, 16, 32),
        (64, 4, 32),
        (128, 16, 32),
        (128, 8, 64),
        (128, 32, 32),
        (224, 16, 32),
        (224, 8, 56),
        (224, 28, 112),
    ];
    let mut rng = stream(case, Purpose::Inspect, 1, case);
    let (side, s_intra, s_inter) = GEOMETRIES[rng.random_range(0..GEOMETRIES.len())];
    let channels = if rng.random_bool(0.5) { 3 } else { 1 };
    let lo: f64 = rng.random();
    let hi = lo + (1.0 - lo) * rng.random::<f64>();
    let cfg = ShuffleConfig {
        s_intra,
        s_inter,
        q_range: [lo, hi],
        p_inter: [0.0, 0.5, 1.0][rng.random_range(0..3)],
        seed: case,
    };
    // Coarse values make repeated pixels common.
    let levels = if case % 4 == 0 { 4.0 } else { 255.0 };
    let img = ImageTensor::from_fn(side, side, channels, |_, _, _| (rng.random::<f32>() * levels).floor() / levels);
    let mut draw = stream(case, Purpose::Sample, 0, case);
    let out = shuffle_image(&img, &cfg, &mut draw).map_err(|e| e.to_string())?;

    let sorted = |t: &ImageTensor| {
        let mut px: Vec<Vec<u32>> = t.data().chunks(channels).map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
        px.sort();
        px
    };
    if sorted(&img) != sorted(&out.image) {
        return Err(format!("case {case}: pixel multiset changed"));
    }

    let (mb, nb) = (side / s_inter, side / s_inter);
    let mut cells = out.coords.beta.clone();
    cells.sort();
    let all: Vec<(usize, usize)> = (0..mb).flat_map(|i| (0..nb).map(move |j| (i, j))).collect();
    if cells != all {
        return Err(format!("case {case}: beta is not a bijection"));
    }
    if !out.inter_applied && !out.coords.is_identity() {
        return Err(format!("case {case}: beta moved tiles without the gate"));
    }

    // Every unmarked fine block must equal the tile-reordered source exactly;
    // every marked one must differ from it only by its recorded permutation.
    let reordered = reorder_blocks(&img, &out.coords, s_inter).map_err(|e| e.to_string())?;
    let (ma, na) = (side / s_intra, side / s_intra);
    let block = |t: &ImageTensor, bi: usize, bj: usize| -> Vec<f32> {
        (0..s_intra * s_intra)
            .flat_map(|k| t.pixel(bi * s_intra + k / s_intra, bj * s_intra + k % s_intra).to_vec())
            .collect()
    };
    let mut records = out.intra_perms.iter();
    for bi in 0..ma {
        for bj in 0..na {
            let src = block(&reordered, bi, bj);
            let got = block(&out.image, bi, bj);
            match out.mark.get(bi, bj) {
                0 => {
                    if src != got {
                        return Err(format!("case {case}: unmarked block ({bi},{bj}) changed"));
                    }
                }
                1 => {
                    let rec = records.next().ok_or(format!("case {case}: missing record"))?;
                    if (rec.row, rec.col) != (bi, bj) {
                        return Err(format!("case {case}: record order"));
                    }
                    let expect: Vec<f32> = rec
                        .perm
                        .iter()
                        .flat_map(|&p| src[p as usize * channels..(p as usize + 1) * channels].to_vec())
                        .collect();
                    if expect != got {
                        return Err(format!("case {case}: marked block ({bi},{bj}) is not its permutation"));
                    }
                }
                v => return Err(format!("case {case}: mark value {v}")),
            }
        }
    }
    if records.next().is_some() {
        return Err(format!("case {case}: extra permutation records"));
    }

    let back = unshuffle(&out).map_err(|e| e.to_string())?;
    if back.data().iter().zip(img.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err(format!("case {case}: unshuffle is not exact"));
    }
    Ok(())
}

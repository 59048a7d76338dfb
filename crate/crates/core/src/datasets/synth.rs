//! Procedural face-like images and spliced forgeries built from them.
//!
//! Real images share one layout (background gradient, hair cap, face ellipse
//! with eyes, brows, nose and mouth) so that block positions carry meaning.
//! A fake takes the inner face of a donor, smooths it by a down/up resample as
//! a generator would, and blends it into a target under a feathered ellipse.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestRow, Split};
use crate::error::{BslError, Result};
use crate::image::ImageTensor;
use crate::rng::{stream, Purpose};

/// Fraction of pixels that must differ by more than 2/255 for a fake to count.
const MIN_CHANGED_FRACTION: f64 = 0.01;
const CHANGE_THRESHOLD: f32 = 2.0 / 255.0;
const MAX_SPLICE_ATTEMPTS: usize = 16;

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Parameters of one synthetic face, in coordinates normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFace {
    pub bg: [f64; 3],
    pub bg_tint: f64,
    pub center: (f64, f64),
    pub radii: (f64, f64),
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    pub hair_line: f64,
    pub iris: [f64; 3],
    pub eye_spread: f64,
    pub eye_height: f64,
    pub eye_radius: f64,
    pub lips: [f64; 3],
    pub mouth_width: f64,
    pub grain: f64,
}

impl SynthFace {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let r = uniform(rng, 0.55, 0.95);
        let g = r * uniform(rng, 0.68, 0.86);
        let b = g * uniform(rng, 0.65, 0.92);
        let hair_level = uniform(rng, 0.05, 0.45);
        Self {
            bg: [uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8)],
            bg_tint: uniform(rng, 0.08, 0.2),
            center: (0.5 + uniform(rng, -0.03, 0.03), 0.56 + uniform(rng, -0.03, 0.03)),
            radii: (uniform(rng, 0.27, 0.32), uniform(rng, 0.34, 0.39)),
            skin: [r, g, b],
            hair: [
                hair_level * uniform(rng, 0.9, 1.4),
                hair_level * uniform(rng, 0.7, 1.0),
                hair_level * uniform(rng, 0.5, 0.9),
            ],
            hair_line: uniform(rng, 0.35, 0.55),
            iris: [uniform(rng, 0.05, 0.4), uniform(rng, 0.05, 0.4), uniform(rng, 0.05, 0.45)],
            eye_spread: uniform(rng, 0.36, 0.46),
            eye_height: uniform(rng, 0.12, 0.22),
            eye_radius: uniform(rng, 0.032, 0.045),
            lips: [uniform(rng, 0.55, 0.85), uniform(rng, 0.2, 0.4), uniform(rng, 0.2, 0.4)],
            mouth_width: uniform(rng, 0.35, 0.55),
            grain: uniform(rng, 0.02, 0.04),
        }
    }

    /// Noise-free color at normalized position `(u, v)`; `px` is one pixel in
    /// normalized units and sets the edge softness.
    fn shade(&self, u: f64, v: f64, px: f64) -> [f64; 3] {
        let (cx, cy) = self.center;
        let (rx, ry) = self.radii;
        // Light from the top, warmer to the left; the direction is fixed across
        // images so corner blocks can be told apart.
        let lift = 0.22 * (0.5 - v);
        let warm = self.bg_tint * (0.5 - u);
        let mut c = [
            self.bg[0] + lift + warm,
            self.bg[1] + lift,
            self.bg[2] + lift - warm,
        ];

        let soft = |d: f64| (0.5 - d / px).clamp(0.0, 1.0);
        let ellipse = |x0: f64, y0: f64, ax: f64, ay: f64| {
            let r = (((u - x0) / ax).powi(2) + ((v - y0) / ay).powi(2)).sqrt();
            (r - 1.0) * ax.min(ay)
        };
        let mix = |c: &mut [f64; 3], col: [f64; 3], a: f64| {
            for k in 0..3 {
                c[k] += a * (col[k] - c[k]);
            }
        };

        // Hair cap behind the upper head.
        let head = ellipse(cx, cy - 0.03, rx * 1.12, ry * 1.1);
        let cap = soft(v - (cy - ry * self.hair_line)).min(soft(head));
        mix(&mut c, self.hair, cap);

        let face_d = ellipse(cx, cy, rx, ry);
        let face_a = soft(face_d);
        if face_a > 0.0 {
            let rr = ((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2);
            let shading = 1.0 - 0.18 * rr;
            let mut skin = self.skin.map(|s| s * shading);
            // Hair line across the forehead.
            let fringe = soft(v - (cy - ry * (self.hair_line + 0.25)));
            mix(&mut skin, self.hair, fringe);

            let ey = cy - ry * self.eye_height;
            for side in [-1.0, 1.0] {
                let ex = cx + side * rx * self.eye_spread;
                let er = self.eye_radius;
                mix(&mut skin, self.hair, soft(ellipse(ex, ey - 2.2 * er, 1.6 * er, 0.35 * er)));
                mix(&mut skin, [0.92, 0.92, 0.9], soft(ellipse(ex, ey, 1.5 * er, 0.8 * er)));
                mix(&mut skin, self.iris, soft(ellipse(ex, ey, 0.65 * er, 0.65 * er)));
            }
            // Nose shadow and mouth.
            let nose = soft(ellipse(cx + 0.012, cy + ry * 0.12, 0.018, ry * 0.2));
            let dark = skin.map(|s| s * 0.8);
            mix(&mut skin, dark, 0.7 * nose);
            let mouth = soft(ellipse(cx, cy + ry * 0.52, rx * self.mouth_width, ry * 0.07));
            mix(&mut skin, self.lips, mouth);

            mix(&mut c, skin, face_a);
        }
        c
    }

    /// Renders at `side x side` and adds per-pixel grain from `rng`.
    pub fn render(&self, side: usize, rng: &mut impl Rng) -> ImageTensor {
        let px = 1.0 / side as f64;
        let grain = Normal::new(0.0, self.grain).expect("grain std is positive");
        let mut data = Vec::with_capacity(side * side * 3);
        for y in 0..side {
            for x in 0..side {
                let c = self.shade((x as f64 + 0.5) * px, (y as f64 + 0.5) * px, px);
                let luma: f64 = grain.sample(rng);
                for k in 0..3 {
                    let chroma: f64 = 0.3 * grain.sample(rng);
                    data.push((c[k] + luma + chroma).clamp(0.0, 1.0) as f32);
                }
            }
        }
        ImageTensor::new(side, side, 3, data).expect("rendered values are clamped")
    }
}

/// Renders `count` independent real faces. `salt` separates pools drawn from
/// the same seed (one per split).
pub fn synth_real_pool(count: usize, side: usize, seed: u64, salt: u64) -> Vec<ImageTensor> {
    (0..count)
        .map(|i| {
            let mut rng = stream(seed, Purpose::Synth, salt, i as u64);
            SynthFace::sample(&mut rng).render(side, &mut rng)
        })
        .collect()
}

/// Weighted elliptical blend mask: 1 in the core, Gaussian falloff across the
/// outer `feather` fraction of the radius, exactly 0 outside the ellipse.
fn feathered_alpha(u: f64, v: f64, center: (f64, f64), radii: (f64, f64), feather: f64) -> f64 {
    let r = (((u - center.0) / radii.0).powi(2) + ((v - center.1) / radii.1).powi(2)).sqrt();
    if r >= 1.0 {
        0.0
    } else if r <= 1.0 - feather {
        1.0
    } else {
        let t = (r - (1.0 - feather)) / feather;
        (-0.5 * (2.5 * t).powi(2)).exp()
    }
}

/// Faces sit near this point by construction, so donors are aligned on the
/// canvas rather than re-detected.
const FACE_CENTER: (f64, f64) = (0.5, 0.56);

/// Splices the smoothed inner region of `donor` into `target`. Returns the
/// fake and the number of pixels changed by more than 2/255.
pub fn splice(target: &ImageTensor, donor: &ImageTensor, rng: &mut impl Rng) -> Result<(ImageTensor, usize)> {
    if target.shape() != donor.shape() || target.channels() != 3 {
        return Err(BslError::InvalidInput("target and donor must be RGB images of one size".into()));
    }
    let (h, w) = (target.height(), target.width());
    let center = FACE_CENTER;
    let center = (center.0 + uniform(rng, -0.03, 0.03), center.1 + uniform(rng, -0.03, 0.03));
    let radii = (uniform(rng, 0.17, 0.24), uniform(rng, 0.22, 0.3));
    let feather = uniform(rng, 0.25, 0.45);
    let factor = uniform(rng, 1.6, 2.6);
    let small = ((h as f64 / factor).round() as usize).max(2);
    let smooth = donor.resize(small, ((w as f64 / factor).round() as usize).max(2)).resize(h, w);

    let mut out = target.clone();
    let mut changed = 0;
    for y in 0..h {
        for x in 0..w {
            let a = feathered_alpha((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64, center, radii, feather);
            if a == 0.0 {
                continue;
            }
            let src = smooth.pixel(y, x);
            let dst = out.pixel_mut(y, x);
            let mut moved = false;
            for k in 0..3 {
                let v = ((1.0 - a) * dst[k] as f64 + a * src[k] as f64).clamp(0.0, 1.0) as f32;
                moved |= (v - dst[k]).abs() > CHANGE_THRESHOLD;
                dst[k] = v;
            }
            changed += moved as usize;
        }
    }
    Ok((out, changed))
}

/// A real image together with the split it belongs to.
#[derive(Debug, Clone)]
pub struct PoolImage {
    pub image: ImageTensor,
    pub split: Split,
}

/// Writes the real pool plus `count` spliced fakes under `out_dir` and returns
/// the manifest. Fakes are spread over splits in proportion to their real
/// counts, and donors and targets always come from the fake's own split.
pub fn synth_forgery(pool: &[PoolImage], count: usize, seed: u64, out_dir: &Path) -> Result<Manifest> {
    if pool.len() < 2 {
        return Err(BslError::Config(format!(
            "synthetic forgeries need at least 2 real images, got {}",
            pool.len()
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for (i, p) in pool.iter().enumerate() {
        let name = format!("real/{}_{i:05}.png", p.split);
        std::fs::create_dir_all(out_dir.join("real"))?;
        p.image.save_png(&out_dir.join(&name))?;
        rows.push(ManifestRow {
            path: name,
            label: 0,
            split: p.split,
        });
    }
    if count > 0 {
        std::fs::create_dir_all(out_dir.join("fake"))?;
    }

    // Largest-remainder allocation of `count` over splits.
    let by_split: Vec<(Split, Vec<usize>)> = Split::ALL
        .iter()
        .map(|&s| (s, (0..pool.len()).filter(|&i| pool[i].split == s).collect::<Vec<_>>()))
        .filter(|(_, ids)| !ids.is_empty())
        .collect();
    let mut quota: Vec<usize> = by_split.iter().map(|(_, ids)| count * ids.len() / pool.len()).collect();
    let rest = count - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..by_split.len()).collect();
    order.sort_by_key(|&k| std::cmp::Reverse((count * by_split[k].1.len()) % pool.len()));
    for &k in order.iter().cycle().take(rest) {
        quota[k] += 1;
    }

    for ((split, ids), &n) in by_split.iter().zip(&quota) {
        if n > 0 && ids.len() < 2 {
            return Err(BslError::Config(format!("split {split} needs at least 2 real images for fakes")));
        }
        for j in 0..n {
            let mut rng = stream(seed, Purpose::Synth, (1 << 32) | *split as u64, j as u64);
            let target = ids[j % ids.len()];
            let fake = (0..MAX_SPLICE_ATTEMPTS)
                .find_map(|_| {
                    let mut donor = ids[rng.random_range(0..ids.len())];
                    while donor == target {
                        donor = ids[rng.random_range(0..ids.len())];
                    }
                    let res = splice(&pool[target].image, &pool[donor].image, &mut rng);
                    match res {
                        Ok((img, changed)) => {
                            let frac = changed as f64 / (img.height() * img.width()) as f64;
                            (frac > MIN_CHANGED_FRACTION).then_some(Ok(img))
                        }
                        Err(e) => Some(Err(e)),
                    }
                })
                .ok_or_else(|| {
                    BslError::Validation(format!("could not build a visible splice for {split} fake {j}"))
                })??;
            let name = format!("fake/{split}_{j:05}.png");
            fake.save_png(&out_dir.join(&name))?;
            rows.push(ManifestRow {
                path: name,
                label: 1,
                split: *split,
            });
        }
    }
    Manifest::new(out_dir, rows)
}

/// Sizes of the synthetic benchmark: real images per split, one fake per real.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub side: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            side: 64,
            train: 1000,
            val: 125,
            test: 250,
            seed: 0,
        }
    }
}

/// Generates the benchmark folder and writes `manifest.csv` into it.
pub fn write_benchmark(dir: &Path, spec: &BenchmarkSpec) -> Result<Manifest> {
    let mut pool = Vec::new();
    for (salt, (split, n)) in [(Split::Train, spec.train), (Split::Val, spec.val), (Split::Test, spec.test)]
        .into_iter()
        .enumerate()
    {
        pool.extend(
            synth_real_pool(n, spec.side, spec.seed, salt as u64)
                .into_iter()
                .map(|image| PoolImage { image, split }),
        );
    }
    let count = pool.len();
    let manifest = synth_forgery(&pool, count, spec.seed, dir)?;
    manifest.write(&dir.join("manifest.csv"))?;
    Ok(manifest)
}

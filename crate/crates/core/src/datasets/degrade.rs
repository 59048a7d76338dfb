//! Input degradations for robustness evaluation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BslError, Result};
use crate::image::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "lowercase")]
pub enum Degradation {
    /// Downsample so the short side is this many pixels, then upsample back.
    Resize(usize),
    /// Gaussian blur with this (odd) kernel size.
    Blur(usize),
}

pub const RESIZE_LADDER: [usize; 4] = [160, 112, 80, 56];
pub const BLUR_LADDER: [usize; 4] = [3, 5, 7, 9];

impl Degradation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Degradation::Resize(0) => Err(BslError::Validation("resize side must be positive".into())),
            Degradation::Blur(k) if k == 0 || k % 2 == 0 => Err(BslError::Validation(format!(
                "blur kernel must be odd and positive, got {k}"
            ))),
            _ => Ok(()),
        }
    }

    /// Short tag used in reports, e.g. `blur:5`.
    pub fn tag(&self) -> String {
        self.to_string()
    }

    pub fn resize_ladder() -> Vec<Degradation> {
        RESIZE_LADDER.iter().map(|&s| Degradation::Resize(s)).collect()
    }

    pub fn blur_ladder() -> Vec<Degradation> {
        BLUR_LADDER.iter().map(|&k| Degradation::Blur(k)).collect()
    }
}

impl fmt::Display for Degradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Degradation::Resize(s) => write!(f, "resize:{s}"),
            Degradation::Blur(k) => write!(f, "blur:{k}"),
        }
    }
}

impl FromStr for Degradation {
    type Err = BslError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, param) = s
            .split_once(':')
            .ok_or_else(|| BslError::Validation(format!("degradation {s:?} is not kind:param")))?;
        let param: usize = param
            .trim()
            .parse()
            .map_err(|_| BslError::Validation(format!("bad degradation parameter in {s:?}")))?;
        let d = match kind.trim() {
            "resize" => Degradation::Resize(param),
            "blur" => Degradation::Blur(param),
            other => return Err(BslError::Validation(format!("unknown degradation kind {other:?}"))),
        };
        d.validate()?;
        Ok(d)
    }
}

/// Sigma used for a kernel of size `k` when none is given explicitly.
pub fn gaussian_sigma(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

/// Normalized 1-D Gaussian taps of length `k`.
pub fn gaussian_kernel(k: usize) -> Vec<f64> {
    let sigma = gaussian_sigma(k);
    let half = (k / 2) as f64;
    let mut taps: Vec<f64> = (0..k)
        .map(|i| {
            let x = i as f64 - half;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect101(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

fn gaussian_blur(img: &ImageTensor, k: usize) -> ImageTensor {
    let taps = gaussian_kernel(k);
    let half = (k / 2) as isize;
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let src = img.data();
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for (t, &wt) in taps.iter().enumerate() {
                let sx = reflect101(x as isize + t as isize - half, w);
                let base = (y * w + sx) * c;
                for ch in 0..c {
                    tmp[(y * w + x) * c + ch] += wt * src[base + ch] as f64;
                }
            }
        }
    }
    let mut out = vec![0.0f64; src.len()];
    for y in 0..h {
        for (t, &wt) in taps.iter().enumerate() {
            let sy = reflect101(y as isize + t as isize - half, h);
            for x in 0..w {
                for ch in 0..c {
                    out[(y * w + x) * c + ch] += wt * tmp[(sy * w + x) * c + ch];
                }
            }
        }
    }
    ImageTensor::from_fn(h, w, c, |y, x, ch| out[(y * w + x) * c + ch] as f32)
}

pub fn apply_degradation(img: &ImageTensor, d: Degradation) -> Result<ImageTensor> {
    d.validate()?;
    Ok(match d {
        Degradation::Blur(k) => gaussian_blur(img, k),
        Degradation::Resize(side) => {
            let (h, w) = (img.height(), img.width());
            let short = h.min(w);
            if side >= short {
                return Ok(img.clone());
            }
            let dh = (h * side + short / 2) / short;
            let dw = (w * side + short / 2) / short;
            img.resize(dh.max(1), dw.max(1)).resize(h, w)
        }
    })
}

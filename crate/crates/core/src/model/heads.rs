//! Auxiliary heads: shuffle discrimination on the fine grid and source
//! position regression on the coarse grid.
//!
//! Both heads align a backbone tap to their block grid (depth-to-space when the
//! grid is an integer multiple of the tap, nearest resampling otherwise) and then
//! apply a 1x1 convolution.

use serde::{Deserialize, Serialize};

use crate::error::{BslError, Result};
use crate::nn::ops;
use crate::nn::{Conv2d, ConvCache, ConvSpec};
use crate::shuffle::CoordTarget;
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridAlign {
    Identity,
    DepthToSpace(usize),
    Nearest,
}

impl GridAlign {
    /// Chooses how to map a `(c, h, w)` tap onto an `m x n` grid and returns the
    /// channel count after alignment.
    pub fn resolve(tap: (usize, usize, usize), grid: (usize, usize)) -> Result<(Self, usize)> {
        let (c, h, w) = tap;
        let (m, n) = grid;
        if h == 0 || w == 0 || m == 0 || n == 0 {
            return Err(BslError::Config(format!(
                "cannot align a {h}x{w} tap to a {m}x{n} grid"
            )));
        }
        if (h, w) == (m, n) {
            return Ok((GridAlign::Identity, c));
        }
        if m % h == 0 && n % w == 0 && m / h == n / w {
            let r = m / h;
            if c % (r * r) != 0 {
                return Err(BslError::Config(format!(
                    "depth-to-space by {r} needs channels divisible by {}, tap has {c}",
                    r * r
                )));
            }
            return Ok((GridAlign::DepthToSpace(r), c / (r * r)));
        }
        Ok((GridAlign::Nearest, c))
    }

    fn apply(&self, x: &FeatureMap, grid: (usize, usize)) -> FeatureMap {
        match *self {
            GridAlign::Identity => x.clone(),
            GridAlign::DepthToSpace(r) => ops::depth_to_space(x, r),
            GridAlign::Nearest => ops::resample_nearest(x, grid.0, grid.1),
        }
    }

    fn backward(&self, shape: (usize, usize, usize), dy: FeatureMap) -> FeatureMap {
        match *self {
            GridAlign::Identity => dy,
            GridAlign::DepthToSpace(r) => ops::space_to_depth(&dy, r),
            GridAlign::Nearest => ops::resample_nearest_backward(shape, &dy),
        }
    }
}

#[derive(Debug, Clone)]
struct AlignedProjection {
    tap_shape: (usize, usize, usize),
    grid: (usize, usize),
    align: GridAlign,
    conv: Conv2d,
}

pub struct HeadCache {
    conv: ConvCache,
    pre_activation: Option<FeatureMap>,
}

impl AlignedProjection {
    fn build(tap_shape: (usize, usize, usize), grid: (usize, usize), out_channels: usize) -> Result<Self> {
        let (align, channels) = GridAlign::resolve(tap_shape, grid)?;
        Ok(Self {
            tap_shape,
            grid,
            align,
            conv: Conv2d::new(ConvSpec::pointwise(channels, out_channels), 0),
        })
    }

    fn forward(&self, params: &[f64], features: &FeatureMap) -> Result<(FeatureMap, ConvCache)> {
        if features.shape() != self.tap_shape {
            return Err(BslError::Structural(format!(
                "head expects features {:?}, got {:?}",
                self.tap_shape,
                features.shape()
            )));
        }
        let aligned = self.align.apply(features, self.grid);
        Ok(self.conv.forward(params, &aligned))
    }

    fn backward(&self, params: &[f64], cache: &ConvCache, dy: &FeatureMap, grads: &mut [f64]) -> FeatureMap {
        let d_aligned = self
            .conv
            .backward(params, cache, dy, grads, true)
            .expect("input grad requested");
        self.align.backward(self.tap_shape, d_aligned)
    }
}

/// Predicts, per fine block, a logit for "this block was pixel-permuted".
#[derive(Debug, Clone)]
pub struct AdversarialHead {
    inner: AlignedProjection,
}

impl AdversarialHead {
    pub fn build(tap_shape: (usize, usize, usize), intra_grid: (usize, usize)) -> Result<Self> {
        Ok(Self {
            inner: AlignedProjection::build(tap_shape, intra_grid, 1)?,
        })
    }

    pub fn param_len(&self) -> usize {
        self.inner.conv.param_len()
    }

    pub fn align(&self) -> GridAlign {
        self.inner.align
    }

    /// Unbounded logits, shape `1 x m_a x n_a`.
    pub fn forward(&self, params: &[f64], features: &FeatureMap) -> Result<(FeatureMap, HeadCache)> {
        let (logits, conv) = self.inner.forward(params, features)?;
        Ok((
            logits,
            HeadCache {
                conv,
                pre_activation: None,
            },
        ))
    }

    /// Accumulates head gradients and returns the gradient w.r.t. the tap features.
    pub fn backward(&self, params: &[f64], cache: &HeadCache, d_logits: &FeatureMap, grads: &mut [f64]) -> FeatureMap {
        self.inner.backward(params, &cache.conv, d_logits, grads)
    }
}

/// Predicts, per coarse block, its normalized source coordinates in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct RestorationHead {
    inner: AlignedProjection,
}

impl RestorationHead {
    pub fn build(tap_shape: (usize, usize, usize), inter_grid: (usize, usize)) -> Result<Self> {
        Ok(Self {
            inner: AlignedProjection::build(tap_shape, inter_grid, 2)?,
        })
    }

    pub fn param_len(&self) -> usize {
        self.inner.conv.param_len()
    }

    pub fn align(&self) -> GridAlign {
        self.inner.align
    }

    /// Coordinates `2 x m_b x n_b` (rows then columns), clamped to `[-1, 1]`.
    pub fn forward(&self, params: &[f64], features: &FeatureMap) -> Result<(FeatureMap, HeadCache)> {
        let (pre, conv) = self.inner.forward(params, features)?;
        let out = ops::hardtanh(&pre);
        Ok((
            out,
            HeadCache {
                conv,
                pre_activation: Some(pre),
            },
        ))
    }

    pub fn backward(&self, params: &[f64], cache: &HeadCache, d_coords: &FeatureMap, grads: &mut [f64]) -> FeatureMap {
        let pre = cache.pre_activation.as_ref().expect("restoration cache");
        let d_pre = ops::hardtanh_backward(pre, d_coords);
        self.inner.backward(params, &cache.conv, &d_pre, grads)
    }
}

fn decode_axis(v: f64, count: usize) -> usize {
    if count <= 1 {
        return 0;
    }
    let idx = ((v + 1.0) / 2.0 * (count - 1) as f64).round();
    if idx.is_nan() {
        return 0;
    }
    idx.clamp(0.0, (count - 1) as f64) as usize
}

/// Inverts the coordinate normalization: nearest grid cell, clamped to the grid.
pub fn decode_coords(coords: &FeatureMap) -> Vec<(usize, usize)> {
    assert_eq!(coords.channels, 2, "coordinates have two channels");
    let (m, n) = (coords.height, coords.width);
    let plane = m * n;
    (0..plane)
        .map(|k| {
            (
                decode_axis(coords.data[k], m),
                decode_axis(coords.data[plane + k], n),
            )
        })
        .collect()
}

/// The normalized targets of a coordinate map as a `2 x m x n` feature map.
pub fn coords_to_map(target: &CoordTarget) -> FeatureMap {
    FeatureMap::from_vec(2, target.rows, target.cols, target.m.clone())
}

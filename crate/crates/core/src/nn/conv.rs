//! 2-D convolution through im2col and GEMM.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1, 1, 0)
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// A convolution whose weights live at `offset` in a flat parameter slice:
/// `out x in x k x k` weights followed by `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub offset: usize,
}

/// What the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub input_shape: (usize, usize, usize),
    pub cols: Vec<f64>,
}

impl Conv2d {
    pub fn new(spec: ConvSpec, offset: usize) -> Self {
        Self { spec, offset }
    }

    pub fn param_len(&self) -> usize {
        self.spec.out_channels * self.spec.patch_len() + self.spec.out_channels
    }

    pub fn end(&self) -> usize {
        self.offset + self.param_len()
    }

    fn weights<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let nw = self.spec.out_channels * self.spec.patch_len();
        let p = &params[self.offset..self.end()];
        p.split_at(nw)
    }

    /// He-normal weights, zero bias.
    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        let std = (2.0 / self.spec.patch_len() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let nw = self.spec.out_channels * self.spec.patch_len();
        let p = &mut params[self.offset..self.end()];
        for v in &mut p[..nw] {
            *v = normal.sample(rng);
        }
        p[nw..].iter_mut().for_each(|v| *v = 0.0);
    }

    fn im2col(&self, x: &FeatureMap, oh: usize, ow: usize) -> Vec<f64> {
        let s = &self.spec;
        if s.is_pointwise() {
            return x.data.clone();
        }
        let n = oh * ow;
        let mut cols = vec![0.0; s.patch_len() * n];
        let (h, w) = (x.height as isize, x.width as isize);
        for c in 0..s.in_channels {
            let plane = &x.data[c * x.plane()..(c + 1) * x.plane()];
            for ky in 0..s.kernel {
                for kx in 0..s.kernel {
                    let row = (c * s.kernel + ky) * s.kernel + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..oh {
                        let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let src_row = &plane[iy as usize * x.width..(iy as usize + 1) * x.width];
                        for ox in 0..ow {
                            let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                            if ix >= 0 && ix < w {
                                dst[oy * ow + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], shape: (usize, usize, usize), oh: usize, ow: usize) -> FeatureMap {
        let s = &self.spec;
        let (c_in, h, w) = shape;
        if s.is_pointwise() {
            return FeatureMap::from_vec(c_in, h, w, cols.to_vec());
        }
        let n = oh * ow;
        let mut dx = FeatureMap::zeros(c_in, h, w);
        for c in 0..c_in {
            for ky in 0..s.kernel {
                for kx in 0..s.kernel {
                    let row = (c * s.kernel + ky) * s.kernel + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..oh {
                        let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (c * h + iy as usize) * w;
                        for ox in 0..ow {
                            let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dx.data[base + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, params: &[f64], x: &FeatureMap) -> (FeatureMap, ConvCache) {
        let s = &self.spec;
        assert_eq!(x.channels, s.in_channels, "conv input channels");
        let (oh, ow) = s.out_size(x.height, x.width);
        let cols = self.im2col(x, oh, ow);
        let (w, b) = self.weights(params);
        let n = oh * ow;
        let mut out = vec![0.0; s.out_channels * n];
        for (o, bias) in b.iter().enumerate() {
            out[o * n..(o + 1) * n].iter_mut().for_each(|v| *v = *bias);
        }
        gemm(s.out_channels, s.patch_len(), n, w, false, &cols, false, 1.0, &mut out);
        (
            FeatureMap::from_vec(s.out_channels, oh, ow, out),
            ConvCache {
                input_shape: x.shape(),
                cols,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient when `need_input_grad` is set.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &ConvCache,
        dy: &FeatureMap,
        grads: &mut [f64],
        need_input_grad: bool,
    ) -> Option<FeatureMap> {
        let s = &self.spec;
        let n = dy.plane();
        let k = s.patch_len();
        let nw = s.out_channels * k;
        {
            let g = &mut grads[self.offset..self.end()];
            let (gw, gb) = g.split_at_mut(nw);
            gemm(s.out_channels, n, k, &dy.data, false, &cache.cols, true, 1.0, gw);
            for (o, gbo) in gb.iter_mut().enumerate() {
                *gbo += dy.data[o * n..(o + 1) * n].iter().sum::<f64>();
            }
        }
        if !need_input_grad {
            return None;
        }
        let (w, _) = self.weights(params);
        let mut dcols = vec![0.0; k * n];
        gemm(k, s.out_channels, n, w, true, &dy.data, false, 0.0, &mut dcols);
        Some(self.col2im(&dcols, cache.input_shape, dy.height, dy.width))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct convolution used as an oracle for im2col + GEMM.
    fn direct(spec: &ConvSpec, params: &[f64], x: &FeatureMap) -> FeatureMap {
        let (oh, ow) = spec.out_size(x.height, x.width);
        let k = spec.kernel;
        let nw = spec.out_channels * spec.in_channels * k * k;
        let mut out = FeatureMap::zeros(spec.out_channels, oh, ow);
        for o in 0..spec.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = params[nw + o];
                    for c in 0..spec.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.height && (ix as usize) < x.width {
                                    acc += params[((o * spec.in_channels + c) * k + ky) * k + kx]
                                        * x.at(c, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.data[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_direct_convolution() {
        for spec in [
            ConvSpec::new(2, 3, 3, 2, 1),
            ConvSpec::new(3, 2, 3, 1, 1),
            ConvSpec::pointwise(4, 2),
            ConvSpec::new(1, 2, 1, 2, 0),
        ] {
            let conv = Conv2d::new(spec, 0);
            let params: Vec<f64> = (0..conv.param_len()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 7.0).collect();
            let x = FeatureMap::from_vec(
                spec.in_channels,
                5,
                6,
                (0..spec.in_channels * 30).map(|i| (i as f64 * 0.37).cos()).collect(),
            );
            let (y, _) = conv.forward(&params, &x);
            let want = direct(&spec, &params, &x);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let spec = ConvSpec::new(2, 3, 3, 2, 1);
        let conv = Conv2d::new(spec, 0);
        let params: Vec<f64> = (0..conv.param_len()).map(|i| ((i * 5 % 13) as f64 - 6.0) / 9.0).collect();
        let x = FeatureMap::from_vec(2, 5, 5, (0..50).map(|i| (i as f64 * 0.71).sin()).collect());
        // loss = sum(y * r) for a fixed r
        let (y, cache) = conv.forward(&params, &x);
        let r: Vec<f64> = (0..y.data.len()).map(|i| (i as f64 * 1.3).cos()).collect();
        let dy = FeatureMap::from_vec(y.channels, y.height, y.width, r.clone());
        let mut grads = vec![0.0; params.len()];
        let dx = conv.backward(&params, &cache, &dy, &mut grads, true).unwrap();
        let loss = |p: &[f64], x: &FeatureMap| -> f64 {
            let (y, _) = conv.forward(p, x);
            y.data.iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-6;
        for i in 0..params.len() {
            let mut hi = params.clone();
            hi[i] += eps;
            let mut lo = params.clone();
            lo[i] -= eps;
            let fd = (loss(&hi, &x) - loss(&lo, &x)) / (2.0 * eps);
            assert!((fd - grads[i]).abs() < 1e-6, "param {i}: {fd} vs {}", grads[i]);
        }
        for i in 0..x.data.len() {
            let mut hi = x.clone();
            hi.data[i] += eps;
            let mut lo = x.clone();
            lo.data[i] -= eps;
            let fd = (loss(&params, &hi) - loss(&params, &lo)) / (2.0 * eps);
            assert!((fd - dx.data[i]).abs() < 1e-6, "input {i}");
        }
    }
}

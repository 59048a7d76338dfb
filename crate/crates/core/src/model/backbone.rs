//! Classifier backbones with named intermediate feature taps.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BslError, Result};
use crate::nn::ops;
use crate::nn::{Conv2d, ConvCache, ConvSpec};
use crate::tensor::FeatureMap;

/// A named intermediate output of a backbone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapSpec {
    pub name: String,
    /// Downsampling factor relative to the input.
    pub stride: usize,
    pub channels: usize,
}

/// Output of a backbone forward pass. `taps` follows the order of [`Backbone::taps`].
pub struct BackboneOutput<C> {
    pub logit: f64,
    pub taps: Vec<FeatureMap>,
    pub cache: C,
}

impl<C> BackboneOutput<C> {
    pub fn tap(&self, index: usize) -> &FeatureMap {
        &self.taps[index]
    }
}

/// A binary classifier over images that exposes intermediate features.
///
/// Parameters live in one flat slice owned by the caller, so optimizers,
/// checkpoints and finite-difference checks all work on plain `[f64]`.
pub trait Backbone: Send + Sync {
    type Cache: Send;

    fn name(&self) -> &str;
    fn in_channels(&self) -> usize;
    fn param_len(&self) -> usize;
    fn init_params(&self, rng: &mut impl Rng) -> Vec<f64>;
    fn taps(&self) -> &[TapSpec];

    fn forward(&self, params: &[f64], input: &FeatureMap) -> BackboneOutput<Self::Cache>;

    /// Accumulates into `grads` the gradient for upstream gradients on the logit
    /// and on any subset of taps (`None` meaning zero).
    fn backward(
        &self,
        params: &[f64],
        output: &BackboneOutput<Self::Cache>,
        d_logit: f64,
        d_taps: &[Option<FeatureMap>],
        grads: &mut [f64],
    );

    fn tap_index(&self, name: &str) -> Option<usize> {
        self.taps().iter().position(|t| t.name == name)
    }

    /// Spatial shape `(channels, height, width)` of a tap for a given input size.
    fn tap_shape(&self, index: usize, height: usize, width: usize) -> (usize, usize, usize) {
        let t = &self.taps()[index];
        (t.channels, height / t.stride, width / t.stride)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Plain stack of stride-2 3x3 convolutions.
    SmallCnn,
    /// Stride-2 stem followed by stride-2 basic residual blocks.
    ResidualCnn,
}

#[derive(Debug, Clone)]
struct ResidualBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

#[derive(Debug, Clone)]
enum Layer {
    Conv(Conv2d),
    Relu,
    Residual(ResidualBlock),
}

enum LayerCache {
    Conv(ConvCache),
    Relu(FeatureMap),
    Residual {
        c1: ConvCache,
        mid: FeatureMap,
        c2: ConvCache,
        shortcut: Option<ConvCache>,
        out: FeatureMap,
    },
}

pub struct ConvNetCache {
    layers: Vec<LayerCache>,
    last_shape: (usize, usize, usize),
    pooled: Vec<f64>,
}

/// Convolutional backbone: conv/residual stages, global average pooling and a
/// single-logit linear classifier. Tap `stage{k}` is the output of stage `k`.
#[derive(Debug, Clone)]
pub struct ConvNet {
    name: String,
    in_channels: usize,
    layers: Vec<Layer>,
    taps: Vec<TapSpec>,
    tap_after: Vec<usize>,
    classifier_offset: usize,
    classifier_in: usize,
    param_len: usize,
}

impl ConvNet {
    pub fn build(kind: BackboneKind, in_channels: usize, widths: &[usize]) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(BslError::Config(
                "backbone widths must be a non-empty list of positive integers".into(),
            ));
        }
        if in_channels != 1 && in_channels != 3 {
            return Err(BslError::Config(format!(
                "backbone input must have 1 or 3 channels, got {in_channels}"
            )));
        }
        let mut b = Builder {
            offset: 0,
            channels: in_channels,
            stride: 1,
            layers: Vec::new(),
            taps: Vec::new(),
            tap_after: Vec::new(),
        };
        match kind {
            BackboneKind::SmallCnn => {
                for &w in widths {
                    b.conv(w, 3, 2, 1);
                    b.layers.push(Layer::Relu);
                    b.tap();
                }
            }
            BackboneKind::ResidualCnn => {
                b.conv(widths[0], 3, 2, 1);
                b.layers.push(Layer::Relu);
                b.tap();
                for &w in &widths[1..] {
                    b.residual(w, 2);
                    b.tap();
                }
            }
        }
        let classifier_offset = b.offset;
        let classifier_in = b.channels;
        let name = match kind {
            BackboneKind::SmallCnn => "small_cnn",
            BackboneKind::ResidualCnn => "residual_cnn",
        };
        Ok(Self {
            name: name.into(),
            in_channels,
            layers: b.layers,
            taps: b.taps,
            tap_after: b.tap_after,
            classifier_offset,
            classifier_in,
            param_len: classifier_offset + classifier_in + 1,
        })
    }

    fn forward_layer(&self, layer: &Layer, params: &[f64], x: &FeatureMap) -> (FeatureMap, LayerCache) {
        match layer {
            Layer::Conv(conv) => {
                let (y, c) = conv.forward(params, x);
                (y, LayerCache::Conv(c))
            }
            Layer::Relu => {
                let y = ops::relu(x);
                (y.clone(), LayerCache::Relu(y))
            }
            Layer::Residual(block) => {
                let (a, c1) = block.conv1.forward(params, x);
                let mid = ops::relu(&a);
                let (mut sum, c2) = block.conv2.forward(params, &mid);
                let shortcut = match &block.shortcut {
                    Some(sc) => {
                        let (s, cache) = sc.forward(params, x);
                        sum.add_assign(&s);
                        Some(cache)
                    }
                    None => {
                        sum.add_assign(x);
                        None
                    }
                };
                let out = ops::relu(&sum);
                (
                    out.clone(),
                    LayerCache::Residual {
                        c1,
                        mid,
                        c2,
                        shortcut,
                        out,
                    },
                )
            }
        }
    }

    fn backward_layer(
        &self,
        layer: &Layer,
        cache: &LayerCache,
        params: &[f64],
        dy: &FeatureMap,
        grads: &mut [f64],
        need_input_grad: bool,
    ) -> Option<FeatureMap> {
        match (layer, cache) {
            (Layer::Conv(conv), LayerCache::Conv(c)) => {
                conv.backward(params, c, dy, grads, need_input_grad)
            }
            (Layer::Relu, LayerCache::Relu(out)) => Some(ops::relu_backward(out, dy)),
            (
                Layer::Residual(block),
                LayerCache::Residual {
                    c1,
                    mid,
                    c2,
                    shortcut,
                    out,
                },
            ) => {
                let dsum = ops::relu_backward(out, dy);
                let dmid = block
                    .conv2
                    .backward(params, c2, &dsum, grads, true)
                    .expect("input grad requested");
                let da = ops::relu_backward(mid, &dmid);
                let dx_body = block.conv1.backward(params, c1, &da, grads, need_input_grad);
                let dx_short = match (&block.shortcut, shortcut) {
                    (Some(sc), Some(cache)) => sc.backward(params, cache, &dsum, grads, need_input_grad),
                    _ => Some(dsum),
                };
                match (dx_body, dx_short) {
                    (Some(mut a), Some(b)) => {
                        a.add_assign(&b);
                        Some(a)
                    }
                    _ => None,
                }
            }
            _ => unreachable!("layer and cache kinds always match"),
        }
    }

    fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.layers.iter().flat_map(|l| -> Vec<&Conv2d> {
            match l {
                Layer::Conv(c) => vec![c],
                Layer::Relu => vec![],
                Layer::Residual(b) => {
                    let mut v = vec![&b.conv1, &b.conv2];
                    v.extend(b.shortcut.as_ref());
                    v
                }
            }
        })
    }
}

struct Builder {
    offset: usize,
    channels: usize,
    stride: usize,
    layers: Vec<Layer>,
    taps: Vec<TapSpec>,
    tap_after: Vec<usize>,
}

impl Builder {
    fn make_conv(&mut self, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Conv2d {
        let conv = Conv2d::new(ConvSpec::new(cin, cout, k, stride, pad), self.offset);
        self.offset = conv.end();
        conv
    }

    fn conv(&mut self, cout: usize, k: usize, stride: usize, pad: usize) {
        let conv = self.make_conv(self.channels, cout, k, stride, pad);
        self.layers.push(Layer::Conv(conv));
        self.channels = cout;
        self.stride *= stride;
    }

    fn residual(&mut self, cout: usize, stride: usize) {
        let cin = self.channels;
        let conv1 = self.make_conv(cin, cout, 3, stride, 1);
        let conv2 = self.make_conv(cout, cout, 3, 1, 1);
        let shortcut = (stride != 1 || cin != cout).then(|| self.make_conv(cin, cout, 1, stride, 0));
        self.layers.push(Layer::Residual(ResidualBlock {
            conv1,
            conv2,
            shortcut,
        }));
        self.channels = cout;
        self.stride *= stride;
    }

    fn tap(&mut self) {
        self.taps.push(TapSpec {
            name: format!("stage{}", self.taps.len() + 1),
            stride: self.stride,
            channels: self.channels,
        });
        self.tap_after.push(self.layers.len() - 1);
    }
}

impl Backbone for ConvNet {
    type Cache = ConvNetCache;

    fn name(&self) -> &str {
        &self.name
    }

    fn in_channels(&self) -> usize {
        self.in_channels
    }

    fn param_len(&self) -> usize {
        self.param_len
    }

    fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut params = vec![0.0; self.param_len];
        for conv in self.convs() {
            conv.init(&mut params, rng);
        }
        let std = (1.0 / self.classifier_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in &mut params[self.classifier_offset..self.classifier_offset + self.classifier_in] {
            *v = normal.sample(rng);
        }
        params
    }

    fn taps(&self) -> &[TapSpec] {
        &self.taps
    }

    fn forward(&self, params: &[f64], input: &FeatureMap) -> BackboneOutput<ConvNetCache> {
        assert_eq!(params.len(), self.param_len, "backbone parameter count");
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut taps = Vec::with_capacity(self.taps.len());
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = self.forward_layer(layer, params, &x);
            caches.push(cache);
            x = y;
            if self.tap_after.contains(&i) {
                taps.push(x.clone());
            }
        }
        let pooled = ops::global_avg_pool(&x);
        let w = &params[self.classifier_offset..self.classifier_offset + self.classifier_in];
        let logit = params[self.classifier_offset + self.classifier_in]
            + w.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>();
        BackboneOutput {
            logit,
            taps,
            cache: ConvNetCache {
                layers: caches,
                last_shape: x.shape(),
                pooled,
            },
        }
    }

    fn backward(
        &self,
        params: &[f64],
        output: &BackboneOutput<ConvNetCache>,
        d_logit: f64,
        d_taps: &[Option<FeatureMap>],
        grads: &mut [f64],
    ) {
        let cache = &output.cache;
        let off = self.classifier_offset;
        let n_in = self.classifier_in;
        for (g, p) in grads[off..off + n_in].iter_mut().zip(&cache.pooled) {
            *g += d_logit * p;
        }
        grads[off + n_in] += d_logit;
        let d_pooled: Vec<f64> = params[off..off + n_in].iter().map(|w| d_logit * w).collect();
        let mut d = ops::global_avg_pool_backward(cache.last_shape, &d_pooled);
        for i in (0..self.layers.len()).rev() {
            for (t, _) in self.tap_after.iter().enumerate().filter(|(_, &a)| a == i) {
                if let Some(Some(g)) = d_taps.get(t) {
                    d.add_assign(g);
                }
            }
            match self.backward_layer(&self.layers[i], &cache.layers[i], params, &d, grads, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn small_cnn_taps_follow_strides() {
        let net = ConvNet::build(BackboneKind::SmallCnn, 3, &[8, 16, 32, 64]).unwrap();
        let strides: Vec<usize> = net.taps().iter().map(|t| t.stride).collect();
        assert_eq!(strides, vec![2, 4, 8, 16]);
        assert_eq!(net.tap_shape(2, 64, 64), (32, 8, 8));
        let params = net.init_params(&mut stream(0, Purpose::Init, 0, 0));
        let x = FeatureMap::zeros(3, 64, 64);
        let out = net.forward(&params, &x);
        assert_eq!(out.taps.len(), 4);
        assert_eq!(out.tap(3).shape(), (64, 4, 4));
        assert!(out.logit.is_finite());
    }

    #[test]
    fn residual_cnn_builds() {
        let net = ConvNet::build(BackboneKind::ResidualCnn, 3, &[8, 16, 16]).unwrap();
        assert_eq!(net.taps().len(), 3);
        let params = net.init_params(&mut stream(1, Purpose::Init, 0, 0));
        let out = net.forward(&params, &FeatureMap::zeros(3, 16, 16));
        assert_eq!(out.tap(2).shape(), (16, 2, 2));
    }

    #[test]
    fn bad_widths_are_config_errors() {
        assert!(ConvNet::build(BackboneKind::SmallCnn, 3, &[]).is_err());
        assert!(ConvNet::build(BackboneKind::SmallCnn, 3, &[4, 0]).is_err());
        assert!(ConvNet::build(BackboneKind::SmallCnn, 2, &[4]).is_err());
    }

    fn fd_check(kind: BackboneKind) {
        let net = ConvNet::build(kind, 1, &[3, 4]).unwrap();
        let params = net.init_params(&mut stream(5, Purpose::Init, 0, 0));
        let x = FeatureMap::from_vec(1, 8, 8, (0..64).map(|i| ((i * 37 % 64) as f64) / 64.0).collect());
        let r: Vec<f64> = (0..48).map(|i| (i as f64 * 0.9).sin()).collect();
        // loss = 0.7 * logit + <tap0, r>
        let loss = |p: &[f64]| {
            let out = net.forward(p, &x);
            0.7 * out.logit + out.tap(0).data.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
        };
        let out = net.forward(&params, &x);
        let mut grads = vec![0.0; params.len()];
        let d_tap = FeatureMap::from_vec(3, 4, 4, r.clone());
        net.backward(&params, &out, 0.7, &[Some(d_tap), None], &mut grads);
        let eps = 1e-6;
        for i in 0..params.len() {
            let mut hi = params.clone();
            hi[i] += eps;
            let mut lo = params.clone();
            lo[i] -= eps;
            let fd = (loss(&hi) - loss(&lo)) / (2.0 * eps);
            assert!(
                (fd - grads[i]).abs() <= 1e-5 * fd.abs().max(grads[i].abs()).max(1e-3),
                "{kind:?} param {i}: fd {fd} vs analytic {}",
                grads[i]
            );
        }
    }

    #[test]
    fn small_cnn_gradients() {
        fd_check(BackboneKind::SmallCnn);
    }

    #[test]
    fn residual_cnn_gradients() {
        fd_check(BackboneKind::ResidualCnn);
    }
}

//! The classifier with its two auxiliary heads.

mod backbone;
mod heads;

use serde::{Deserialize, Serialize};

use crate::error::{BslError, Result};
use crate::image::ImageTensor;
use crate::rng::{stream, Purpose};
use crate::shuffle::ShuffleConfig;
use crate::tensor::FeatureMap;

pub use backbone::{Backbone, BackboneKind, BackboneOutput, ConvNet, ConvNetCache, TapSpec};
pub use heads::{coords_to_map, decode_coords, AdversarialHead, GridAlign, HeadCache, RestorationHead};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub widths: Vec<usize>,
    pub in_channels: usize,
    /// Tap feeding the adversarial head; defaults to the last tap whose stride equals `s_intra`.
    pub tap_u: Option<String>,
    /// Tap feeding the restoration head; defaults to the last tap whose stride equals `s_inter`.
    pub tap_v: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::SmallCnn,
            widths: vec![16, 32, 64, 128, 128],
            in_channels: 3,
            tap_u: None,
            tap_v: None,
        }
    }
}

impl ModelConfig {
    pub fn build_backbone(&self) -> Result<ConvNet> {
        ConvNet::build(self.backbone, self.in_channels, &self.widths)
    }
}

/// The three parameter groups: backbone, adversarial head, restoration head.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
}

impl ParamSet {
    pub fn zeros_like(other: &ParamSet) -> Self {
        Self {
            theta: vec![0.0; other.theta.len()],
            psi: vec![0.0; other.psi.len()],
            phi: vec![0.0; other.phi.len()],
        }
    }

    pub fn groups(&self) -> [&[f64]; 3] {
        [&self.theta, &self.psi, &self.phi]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 3] {
        [&mut self.theta, &mut self.psi, &mut self.phi]
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.groups_mut().into_iter().zip(other.groups()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len() + self.psi.len() + self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

fn default_tap(taps: &[TapSpec], side: usize) -> usize {
    taps.iter()
        .rposition(|t| t.stride == side)
        .or_else(|| taps.iter().position(|t| t.stride > side))
        .unwrap_or(taps.len() - 1)
}

/// Result of a forward pass through backbone and (optionally) both heads.
pub struct ForwardPass<C> {
    pub backbone: BackboneOutput<C>,
    /// Adversarial logits `1 x m_a x n_a` and the head cache.
    pub adversarial: Option<(FeatureMap, HeadCache)>,
    /// Restoration coordinates `2 x m_b x n_b` and the head cache.
    pub restoration: Option<(FeatureMap, HeadCache)>,
}

/// Upstream gradients for one sample.
pub struct OutputGrads {
    pub logit: f64,
    pub adversarial: Option<FeatureMap>,
    pub restoration: Option<FeatureMap>,
    /// Flip the sign of the adversarial gradient entering the backbone.
    pub reverse_adversarial: bool,
}

#[derive(Debug, Clone)]
pub struct BslModel<B: Backbone = ConvNet> {
    backbone: B,
    input_hw: (usize, usize),
    tap_u: usize,
    tap_v: usize,
    adversarial: AdversarialHead,
    restoration: RestorationHead,
}

impl<B: Backbone> BslModel<B> {
    pub fn new(
        backbone: B,
        input_hw: (usize, usize),
        shuffle: &ShuffleConfig,
        tap_u: Option<&str>,
        tap_v: Option<&str>,
    ) -> Result<Self> {
        shuffle.validate()?;
        crate::shuffle::check_divisible(input_hw.0, input_hw.1, shuffle.s_inter)?;
        let taps = backbone.taps();
        if taps.is_empty() {
            return Err(BslError::Config(format!("backbone {} exposes no taps", backbone.name())));
        }
        let lookup = |name: &str| {
            backbone.tap_index(name).ok_or_else(|| {
                BslError::Config(format!("backbone {} has no tap named {name}", backbone.name()))
            })
        };
        let tap_u = match tap_u {
            Some(name) => lookup(name)?,
            None => default_tap(taps, shuffle.s_intra),
        };
        let tap_v = match tap_v {
            Some(name) => lookup(name)?,
            None => default_tap(taps, shuffle.s_inter),
        };
        for t in [tap_u, tap_v] {
            let (_, h, w) = backbone.tap_shape(t, input_hw.0, input_hw.1);
            if h == 0 || w == 0 || h > input_hw.0 || w > input_hw.1 {
                return Err(BslError::Config(format!(
                    "tap {} is {h}x{w} for a {}x{} input",
                    taps[t].name, input_hw.0, input_hw.1
                )));
            }
        }
        let adversarial = AdversarialHead::build(
            backbone.tap_shape(tap_u, input_hw.0, input_hw.1),
            shuffle.intra_grid(input_hw.0, input_hw.1),
        )?;
        let restoration = RestorationHead::build(
            backbone.tap_shape(tap_v, input_hw.0, input_hw.1),
            shuffle.inter_grid(input_hw.0, input_hw.1),
        )?;
        Ok(Self {
            backbone,
            input_hw,
            tap_u,
            tap_v,
            adversarial,
            restoration,
        })
    }

    pub fn backbone(&self) -> &B {
        &self.backbone
    }

    pub fn adversarial_head(&self) -> &AdversarialHead {
        &self.adversarial
    }

    pub fn restoration_head(&self) -> &RestorationHead {
        &self.restoration
    }

    pub fn tap_names(&self) -> (&str, &str) {
        let taps = self.backbone.taps();
        (&taps[self.tap_u].name, &taps[self.tap_v].name)
    }

    pub fn input_hw(&self) -> (usize, usize) {
        self.input_hw
    }

    /// Backbone weights from the seeded init stream; both head projections start at zero.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = stream(seed, Purpose::Init, 0, 0);
        ParamSet {
            theta: self.backbone.init_params(&mut rng),
            psi: vec![0.0; self.adversarial.param_len()],
            phi: vec![0.0; self.restoration.param_len()],
        }
    }

    fn check_input(&self, img: &ImageTensor) -> Result<FeatureMap> {
        if (img.height(), img.width()) != self.input_hw || img.channels() != self.backbone.in_channels() {
            return Err(BslError::InvalidInput(format!(
                "model expects {}x{}x{} inputs, got {}x{}x{}",
                self.input_hw.0,
                self.input_hw.1,
                self.backbone.in_channels(),
                img.height(),
                img.width(),
                img.channels()
            )));
        }
        Ok(FeatureMap::from_image(img))
    }

    /// Classifier logit only. Heads are not evaluated.
    pub fn classify(&self, params: &ParamSet, img: &ImageTensor) -> Result<f64> {
        let x = self.check_input(img)?;
        Ok(self.backbone.forward(&params.theta, &x).logit)
    }

    pub fn forward(
        &self,
        params: &ParamSet,
        img: &ImageTensor,
        adversarial: bool,
        restoration: bool,
    ) -> Result<ForwardPass<B::Cache>> {
        let x = self.check_input(img)?;
        let out = self.backbone.forward(&params.theta, &x);
        let adversarial = if adversarial {
            Some(self.adversarial.forward(&params.psi, out.tap(self.tap_u))?)
        } else {
            None
        };
        let restoration = if restoration {
            Some(self.restoration.forward(&params.phi, out.tap(self.tap_v))?)
        } else {
            None
        };
        Ok(ForwardPass {
            backbone: out,
            adversarial,
            restoration,
        })
    }

    /// Accumulates gradients of all three groups into `grads`.
    pub fn backward(&self, params: &ParamSet, pass: &ForwardPass<B::Cache>, upstream: &OutputGrads, grads: &mut ParamSet) {
        let mut d_taps: Vec<Option<FeatureMap>> = vec![None; self.backbone.taps().len()];
        let mut add_tap = |idx: usize, g: FeatureMap| match &mut d_taps[idx] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        if let (Some(d), Some((_, cache))) = (&upstream.adversarial, &pass.adversarial) {
            let mut d_feat = self.adversarial.backward(&params.psi, cache, d, &mut grads.psi);
            if upstream.reverse_adversarial {
                d_feat.scale(-1.0);
            }
            add_tap(self.tap_u, d_feat);
        }
        if let (Some(d), Some((_, cache))) = (&upstream.restoration, &pass.restoration) {
            let d_feat = self.restoration.backward(&params.phi, cache, d, &mut grads.phi);
            add_tap(self.tap_v, d_feat);
        }
        self.backbone
            .backward(&params.theta, &pass.backbone, upstream.logit, &d_taps, &mut grads.theta);
    }
}

impl BslModel<ConvNet> {
    pub fn from_config(cfg: &ModelConfig, input_hw: (usize, usize), shuffle: &ShuffleConfig) -> Result<Self> {
        Self::new(
            cfg.build_backbone()?,
            input_hw,
            shuffle,
            cfg.tap_u.as_deref(),
            cfg.tap_v.as_deref(),
        )
    }
}

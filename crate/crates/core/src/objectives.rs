//! Loss terms and their weighted combination.
//!
//! Every loss is a mean (over batch and blocks), and each `*_grad` function
//! returns the gradient of that per-sample mean with respect to the head output.

use serde::{Deserialize, Serialize};

use crate::error::{BslError, Result};
use crate::shuffle::{CoordTarget, IntraMark};
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the adversarial (shuffle discrimination) term.
    pub alpha: f64,
    /// Weight of the restoration term.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(BslError::Validation(format!(
                    "loss weight {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_cls: f64,
    pub l_adv: f64,
    pub l_loc: f64,
    pub l_total: f64,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [self.l_cls, self.l_adv, self.l_loc, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a 0/1 target, stable for large |z|.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(BslError::NonFinite(format!("{what}[{i}] = {}", values[i]))),
        None => Ok(()),
    }
}

/// Mean binary cross-entropy of classifier logits; label 1 means fake.
pub fn loss_cls(logits: &[f64], labels: &[u8]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(BslError::Structural(format!(
            "{} logits for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Err(BslError::InvalidInput("empty batch".into()));
    }
    check_finite(logits, "class logit")?;
    let sum: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| bce_with_logit(z, y as f64))
        .sum();
    Ok(sum / logits.len() as f64)
}

/// Derivative of the single-sample classification loss w.r.t. its logit.
pub fn cls_grad(logit: f64, label: u8) -> f64 {
    sigmoid(logit) - label as f64
}

fn check_grid(map: &FeatureMap, channels: usize, rows: usize, cols: usize, what: &str) -> Result<()> {
    if map.shape() != (channels, rows, cols) {
        return Err(BslError::Structural(format!(
            "{what} has shape {:?}, target needs ({channels}, {rows}, {cols})",
            map.shape()
        )));
    }
    Ok(())
}

/// Two-sided per-block cross-entropy against the shuffle mark, averaged over blocks.
pub fn loss_adv(logits: &FeatureMap, mark: &IntraMark) -> Result<f64> {
    loss_adv_grad(logits, mark).map(|(l, _)| l)
}

pub fn loss_adv_grad(logits: &FeatureMap, mark: &IntraMark) -> Result<(f64, FeatureMap)> {
    check_grid(logits, 1, mark.rows, mark.cols, "adversarial logits")?;
    check_finite(&logits.data, "adversarial logit")?;
    let n = mark.values.len() as f64;
    let mut loss = 0.0;
    let mut grad = FeatureMap::zeros(1, mark.rows, mark.cols);
    for ((g, &z), &p) in grad.data.iter_mut().zip(&logits.data).zip(&mark.values) {
        loss += bce_with_logit(z, p as f64);
        *g = (sigmoid(z) - p as f64) / n;
    }
    Ok((loss / n, grad))
}

/// Mean absolute error between predicted and target normalized coordinates.
pub fn loss_loc(pred: &FeatureMap, target: &CoordTarget) -> Result<f64> {
    loss_loc_grad(pred, target).map(|(l, _)| l)
}

pub fn loss_loc_grad(pred: &FeatureMap, target: &CoordTarget) -> Result<(f64, FeatureMap)> {
    check_grid(pred, 2, target.rows, target.cols, "restoration output")?;
    check_finite(&pred.data, "restoration output")?;
    let n = target.m.len() as f64;
    let mut loss = 0.0;
    let mut grad = FeatureMap::zeros(2, target.rows, target.cols);
    for ((g, &p), &m) in grad.data.iter_mut().zip(&pred.data).zip(&target.m) {
        let d = p - m;
        loss += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((loss / n, grad))
}

pub fn loss_total(l_cls: f64, l_adv: f64, l_loc: f64, weights: &LossWeights) -> LossBundle {
    LossBundle {
        l_cls,
        l_adv,
        l_loc,
        l_total: l_cls + weights.alpha * l_adv + weights.beta * l_loc,
    }
}

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, auc, roc_curve, RocPoint};
use crate::datasets::InMemoryDataset;
use crate::error::Result;
use crate::model::{Backbone, BslModel, ParamSet};
use crate::objectives::sigmoid;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `clean` or a degradation tag such as `blur:5`.
    pub tag: String,
    pub n: usize,
    pub acc: f64,
    pub auc: f64,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curve: Vec<RocPoint>,
}

impl MetricReport {
    pub fn from_scores(tag: impl Into<String>, scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        Ok(Self {
            tag: tag.into(),
            n: scores.len(),
            acc: accuracy(scores, labels, threshold)?,
            auc: auc(scores, labels)?,
            threshold,
            curve: roc_curve(scores, labels)?,
        })
    }

    /// Copy without the curve, for compact logs.
    pub fn summary(&self) -> Self {
        Self {
            curve: Vec::new(),
            ..self.clone()
        }
    }
}

/// Fake probabilities for every image, classifier only, on unshuffled inputs.
pub fn score_dataset<B: Backbone>(model: &BslModel<B>, params: &ParamSet, data: &InMemoryDataset) -> Result<Vec<f64>> {
    data.images
        .par_iter()
        .map(|img| model.classify(params, img).map(sigmoid))
        .collect()
}

pub fn evaluate<B: Backbone>(
    model: &BslModel<B>,
    params: &ParamSet,
    data: &InMemoryDataset,
    tag: &str,
    threshold: f64,
) -> Result<MetricReport> {
    let scores = score_dataset(model, params, data)?;
    MetricReport::from_scores(tag, &scores, &data.labels, threshold)
}

/// One CSV row per report: `tag,n,acc,auc,threshold`.
pub fn write_reports_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tag", "n", "acc", "auc", "threshold"])?;
    for r in reports {
        w.write_record([
            r.tag.clone(),
            r.n.to_string(),
            format!("{:.6}", r.acc),
            format!("{:.6}", r.auc),
            r.threshold.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reports_json(path: &Path, reports: &[MetricReport]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(reports)?)?;
    Ok(())
}

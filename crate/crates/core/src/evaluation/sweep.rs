use super::report::{evaluate, MetricReport};
use crate::datasets::{apply_degradation, Degradation, InMemoryDataset};
use crate::error::Result;
use crate::model::{Backbone, BslModel, ParamSet};

/// Clean report first, then one per degradation in the given order.
pub fn robustness_sweep<B: Backbone>(
    model: &BslModel<B>,
    params: &ParamSet,
    data: &InMemoryDataset,
    degradations: &[Degradation],
    threshold: f64,
) -> Result<Vec<MetricReport>> {
    let mut reports = vec![evaluate(model, params, data, "clean", threshold)?];
    for &d in degradations {
        let degraded = data.map_images(|img| apply_degradation(img, d))?;
        reports.push(evaluate(model, params, &degraded, &d.tag(), threshold)?);
    }
    Ok(reports)
}

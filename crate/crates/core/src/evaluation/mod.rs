//! Detection metrics, restoration statistics, robustness sweeps and the
//! component ablation.

pub mod ablation;
pub mod metrics;
pub mod report;
pub mod restoration;
pub mod sweep;

pub use ablation::{ablation_grid, AblationData, AblationRow, AblationTable, TABLE_ROWS};
pub use metrics::{accuracy, auc, roc_curve, RocPoint};
pub use report::{evaluate, score_dataset, MetricReport, DEFAULT_THRESHOLD};
pub use restoration::{chebyshev, restoration_histogram, RestorationHistogram};
pub use sweep::robustness_sweep;

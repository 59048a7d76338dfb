use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::{MetricReport, DEFAULT_THRESHOLD};
use super::restoration::{restoration_histogram, RestorationHistogram};
use super::sweep::robustness_sweep;
use crate::config::RunConfig;
use crate::datasets::{Degradation, InMemoryDataset};
use crate::error::Result;
use crate::model::BslModel;
use crate::training::{StepRecord, Trainer};

/// Which components a row switches on. Disabled shuffles keep their code
/// path but draw nothing that changes the image (q = 0, p_inter = 0), and
/// disabled heads get zero loss weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationRow {
    pub id: usize,
    pub intra: bool,
    pub adversarial: bool,
    pub inter: bool,
    pub restoration: bool,
}

pub const TABLE_ROWS: [AblationRow; 5] = [
    AblationRow::new(1, false, false, false, false),
    AblationRow::new(2, true, false, false, false),
    AblationRow::new(3, true, true, false, false),
    AblationRow::new(4, true, true, true, false),
    AblationRow::new(5, true, true, true, true),
];

impl AblationRow {
    pub const fn new(id: usize, intra: bool, adversarial: bool, inter: bool, restoration: bool) -> Self {
        Self {
            id,
            intra,
            adversarial,
            inter,
            restoration,
        }
    }

    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.intra, "intra"),
            (self.adversarial, "adv"),
            (self.inter, "inter"),
            (self.restoration, "restore"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|&(_, name)| name)
        .collect();
        if parts.is_empty() {
            "baseline".into()
        } else {
            parts.join("+")
        }
    }

    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.plain_backbone = false;
        if !self.intra {
            cfg.shuffle.q_range = [0.0, 0.0];
        }
        if !self.inter {
            cfg.shuffle.p_inter = 0.0;
        }
        if !self.adversarial {
            cfg.weights.alpha = 0.0;
        }
        if !self.restoration {
            cfg.weights.beta = 0.0;
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    pub label: String,
    /// Clean report first, then one per degradation.
    pub reports: Vec<MetricReport>,
    pub restoration: Option<RestorationHistogram>,
    pub trace: Vec<StepRecord>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AblationTable {
    pub results: Vec<AblationResult>,
}

impl AblationTable {
    pub fn row(&self, id: usize) -> Option<&AblationResult> {
        self.results.iter().find(|r| r.row.id == id)
    }

    fn tags(&self) -> Vec<String> {
        self.results
            .first()
            .map(|r| r.reports.iter().map(|m| m.tag.clone()).collect())
            .unwrap_or_default()
    }

    /// CSV with one line per row: toggles, then `auc:<tag>` and `acc:<tag>` columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,label,intra,adv,inter,restore");
        for t in self.tags() {
            let _ = write!(out, ",auc:{t},acc:{t}");
        }
        out.push_str(",restore_within_1\n");
        for r in &self.results {
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                r.row.id,
                r.label,
                r.row.intra as u8,
                r.row.adversarial as u8,
                r.row.inter as u8,
                r.row.restoration as u8
            );
            for m in &r.reports {
                let _ = write!(out, ",{:.4},{:.4}", m.auc, m.acc);
            }
            match &r.restoration {
                Some(h) => {
                    let _ = writeln!(out, ",{:.4}", h.fraction_within(1));
                }
                None => out.push_str(",\n"),
            }
        }
        out
    }

    /// Fixed-width text table for terminals.
    pub fn to_text(&self) -> String {
        let tags = self.tags();
        let mut out = format!("{:<3} {:<24}", "id", "components");
        for t in &tags {
            let _ = write!(out, " {:>12}", format!("auc {t}"));
        }
        out.push('\n');
        for r in &self.results {
            let _ = write!(out, "{:<3} {:<24}", r.row.id, r.label);
            for m in &r.reports {
                let _ = write!(out, " {:>12.4}", m.auc);
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("ablation.csv"), self.to_csv())?;
        std::fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Data splits used by the grid.
pub struct AblationData<'a> {
    pub train: &'a InMemoryDataset,
    pub val: &'a InMemoryDataset,
    pub test: &'a InMemoryDataset,
}

/// Trains every row from the same seed and evaluates it on the test split,
/// clean and under each degradation. Rows with a restoration head also get
/// a restoration histogram.
pub fn ablation_grid(
    base: &RunConfig,
    rows: &[AblationRow],
    data: &AblationData<'_>,
    degradations: &[Degradation],
    out_dir: Option<&Path>,
) -> Result<AblationTable> {
    let side = base.data.input_side;
    let mut table = AblationTable::default();
    for row in rows {
        let cfg = row.apply(base);
        let model = BslModel::from_config(&cfg.model, (side, side), &cfg.shuffle)?;
        let mut trainer = Trainer::new(&model, &cfg, data.train).with_eval(data.val);
        let row_dir: Option<PathBuf> = out_dir.map(|d| d.join(format!("row{}", row.id)));
        if let Some(d) = &row_dir {
            trainer = trainer.with_output(d);
        }
        log::info!("ablation row {} ({})", row.id, row.label());
        let outcome = trainer.run(trainer.initial_state())?;
        let params = &outcome.state.params;
        let reports = robustness_sweep(&model, params, data.test, degradations, DEFAULT_THRESHOLD)?
            .into_iter()
            .map(|r| r.summary())
            .collect();
        let restoration = if row.restoration {
            Some(restoration_histogram(&model, params, data.test, &cfg.shuffle)?)
        } else {
            None
        };
        table.results.push(AblationResult {
            row: *row,
            label: row.label(),
            reports,
            restoration,
            trace: outcome.trace,
        });
    }
    if let Some(d) = out_dir {
        table.write(d)?;
    }
    Ok(table)
}

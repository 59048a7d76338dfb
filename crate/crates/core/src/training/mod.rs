//! The training loop: per-sample flip and shuffle, forward through backbone
//! and heads, weighted loss, one optimizer step per batch.

mod checkpoint;
mod state;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::datasets::InMemoryDataset;
use crate::error::{BslError, Result};
use crate::evaluation::{evaluate, MetricReport, DEFAULT_THRESHOLD};
use crate::image::ImageTensor;
use crate::model::{Backbone, BslModel, OutputGrads, ParamSet};
use crate::objectives::{bce_with_logit, cls_grad, loss_adv_grad, loss_loc_grad, loss_total, LossBundle};
use crate::rng::sample_stream;
use crate::shuffle::{shuffle_image, CoordTarget, IntraMark};

pub use checkpoint::Checkpoint;
pub use state::{BatchSampler, BestRecord, SampleKey, TrainState};

/// A training input after augmentation, with the shuffle targets when the
/// heads are in use.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub image: ImageTensor,
    pub label: u8,
    pub targets: Option<(IntraMark, CoordTarget)>,
}

/// Flip, then shuffle, both drawn from the sample's own stream. In plain
/// mode the flip is drawn identically and the shuffle is skipped.
pub fn prepare_sample(cfg: &RunConfig, image: &ImageTensor, label: u8, key: SampleKey) -> Result<PreparedSample> {
    let mut rng = sample_stream(cfg.seed, key.epoch, key.index as u64);
    let flipped = if rng.random_bool(0.5) {
        image.flip_horizontal()
    } else {
        image.clone()
    };
    if cfg.plain_backbone {
        return Ok(PreparedSample {
            image: flipped,
            label,
            targets: None,
        });
    }
    let outcome = shuffle_image(&flipped, &cfg.shuffle, &mut rng)?;
    Ok(PreparedSample {
        image: outcome.image,
        label,
        targets: Some((outcome.mark, outcome.coords)),
    })
}

struct SampleResult {
    cls: f64,
    adv: f64,
    loc: f64,
    grads: ParamSet,
}

/// Batch-mean losses and the gradient of `l_total` with respect to all three
/// groups. A head contributes gradient only when its weight is positive.
pub fn batch_loss_and_grad<B: Backbone>(
    model: &BslModel<B>,
    cfg: &RunConfig,
    params: &ParamSet,
    batch: &[PreparedSample],
) -> Result<(LossBundle, ParamSet)> {
    if batch.is_empty() {
        return Err(BslError::InvalidInput("empty training batch".into()));
    }
    let (alpha, beta) = (cfg.weights.alpha, cfg.weights.beta);
    let per_sample: Vec<SampleResult> = batch
        .par_iter()
        .map(|s| {
            let heads = s.targets.is_some();
            let pass = model.forward(params, &s.image, heads, heads)?;
            let logit = pass.backbone.logit;
            let mut upstream = OutputGrads {
                logit: cls_grad(logit, s.label),
                adversarial: None,
                restoration: None,
                reverse_adversarial: cfg.adversarial.gradient_reversal,
            };
            let (mut adv, mut loc) = (0.0, 0.0);
            if let Some((mark, coords)) = &s.targets {
                let (a_out, _) = pass.adversarial.as_ref().expect("heads requested");
                let (l, mut g) = loss_adv_grad(a_out, mark)?;
                adv = l;
                if alpha > 0.0 {
                    g.scale(alpha);
                    upstream.adversarial = Some(g);
                }
                let (r_out, _) = pass.restoration.as_ref().expect("heads requested");
                let (l, mut g) = loss_loc_grad(r_out, coords)?;
                loc = l;
                if beta > 0.0 {
                    g.scale(beta);
                    upstream.restoration = Some(g);
                }
            }
            let mut grads = ParamSet::zeros_like(params);
            model.backward(params, &pass, &upstream, &mut grads);
            Ok(SampleResult {
                cls: bce_with_logit(logit, s.label as f64),
                adv,
                loc,
                grads,
            })
        })
        .collect::<Result<_>>()?;

    // Reduce in batch order so the sum does not depend on scheduling.
    let n = per_sample.len() as f64;
    let mut grads = ParamSet::zeros_like(params);
    let (mut cls, mut adv, mut loc) = (0.0, 0.0, 0.0);
    for r in &per_sample {
        cls += r.cls;
        adv += r.adv;
        loc += r.loc;
        grads.add_assign(&r.grads);
    }
    for g in grads.groups_mut() {
        g.iter_mut().for_each(|v| *v /= n);
    }
    Ok((loss_total(cls / n, adv / n, loc / n, &cfg.weights), grads))
}

fn divergence(cfg: &RunConfig, step: u64, keys: &[SampleKey], data: &InMemoryDataset, what: &str) -> BslError {
    let samples: Vec<String> = keys
        .iter()
        .map(|k| format!("{}@epoch{}", data.keys[k.index], k.epoch))
        .collect();
    BslError::Divergence {
        step,
        detail: format!("{what}; seed {} samples [{}]", cfg.seed, samples.join(", ")),
    }
}

/// Draws batch `state.step`, computes the loss and applies one optimizer
/// update. Ψ is only updated when α > 0 and Φ only when β > 0.
pub fn train_step<B: Backbone>(
    model: &BslModel<B>,
    cfg: &RunConfig,
    state: &mut TrainState,
    data: &InMemoryDataset,
    sampler: &BatchSampler,
) -> Result<LossBundle> {
    let keys = sampler.batch(state.step);
    let batch: Vec<PreparedSample> = keys
        .par_iter()
        .map(|k| prepare_sample(cfg, &data.images[k.index], data.labels[k.index], *k))
        .collect::<Result<_>>()?;
    let (losses, grads) = match batch_loss_and_grad(model, cfg, &state.params, &batch) {
        Err(BslError::NonFinite(msg)) => return Err(divergence(cfg, state.step + 1, &keys, data, &msg)),
        other => other?,
    };
    if !losses.is_finite() || !grads.all_finite() {
        return Err(divergence(cfg, state.step + 1, &keys, data, &format!("non-finite loss {losses:?}")));
    }
    let active = [
        true,
        !cfg.plain_backbone && cfg.weights.alpha > 0.0,
        !cfg.plain_backbone && cfg.weights.beta > 0.0,
    ];
    for (i, (params, grad)) in state.params.groups_mut().into_iter().zip(grads.groups()).enumerate() {
        if active[i] {
            state.optimizer[i].apply(&cfg.optimizer, params, grad);
        }
    }
    state.step += 1;
    Ok(losses)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub l_cls: f64,
    pub l_adv: f64,
    pub l_loc: f64,
    pub l_total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalKind {
    Periodic,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub kind: EvalKind,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Steps run by this call (a resumed run only reports the new ones).
    pub trace: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

/// Files written into a run directory.
pub mod files {
    pub const CONFIG: &str = "config.json";
    pub const RUN_ID: &str = "run_id";
    pub const METRICS: &str = "metrics.jsonl";
    pub const EVALS: &str = "eval.jsonl";
    pub const BEST: &str = "best.ckpt";
    pub const LAST: &str = "last.ckpt";
}

pub struct Trainer<'a, B: Backbone> {
    model: &'a BslModel<B>,
    cfg: &'a RunConfig,
    train: &'a InMemoryDataset,
    eval: Option<&'a InMemoryDataset>,
    out_dir: Option<PathBuf>,
}

fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)?;
    Ok(BufWriter::new(f))
}

impl<'a, B: Backbone> Trainer<'a, B> {
    pub fn new(model: &'a BslModel<B>, cfg: &'a RunConfig, train: &'a InMemoryDataset) -> Self {
        Self {
            model,
            cfg,
            train,
            eval: None,
            out_dir: None,
        }
    }

    /// Dataset for periodic evaluation and best-checkpoint selection.
    pub fn with_eval(mut self, eval: &'a InMemoryDataset) -> Self {
        self.eval = (!eval.is_empty()).then_some(eval);
        self
    }

    /// Directory for logs, the effective config and checkpoints.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn initial_state(&self) -> TrainState {
        TrainState::new(self.model.init_params(self.cfg.seed))
    }

    fn checkpoint(&self, state: &TrainState, name: &str) -> Result<()> {
        if let Some(dir) = &self.out_dir {
            Checkpoint {
                config: self.cfg.clone(),
                state: state.clone(),
            }
            .save(&dir.join(name))?;
        }
        Ok(())
    }

    fn evaluate(&self, state: &TrainState, kind: EvalKind) -> Result<Option<EvalRecord>> {
        let Some(data) = self.eval else { return Ok(None) };
        let report = evaluate(self.model, &state.params, data, "clean", DEFAULT_THRESHOLD)?.summary();
        Ok(Some(EvalRecord {
            step: state.step,
            kind,
            report,
        }))
    }

    /// Runs from `state.step` up to `max_steps`. Periodic evaluations happen
    /// after every step divisible by `eval_every`, followed by a final one.
    pub fn run(&self, mut state: TrainState) -> Result<TrainOutcome> {
        let cfg = self.cfg;
        cfg.validate()?;
        if self.train.is_empty() {
            return Err(BslError::Config("training set is empty".into()));
        }
        let expected = [
            self.model.backbone().param_len(),
            self.model.adversarial_head().param_len(),
            self.model.restoration_head().param_len(),
        ];
        if (0..3).any(|i| expected[i] != state.params.groups()[i].len()) {
            return Err(BslError::Config("state does not match the model's parameter layout".into()));
        }
        let resuming = state.step > 0;
        let mut logs = match &self.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join(files::CONFIG), cfg.to_json())?;
                std::fs::write(dir.join(files::RUN_ID), format!("{}\n", cfg.run_id()))?;
                Some((
                    open_log(&dir.join(files::METRICS), resuming)?,
                    open_log(&dir.join(files::EVALS), resuming)?,
                ))
            }
            None => None,
        };
        if self.eval.is_none() && cfg.eval_every > 0 {
            warn!("no evaluation data; periodic evaluation and best checkpoints are skipped");
        }

        let sampler = BatchSampler::new(cfg.seed, self.train.len(), cfg.batch_size);
        let mut trace = Vec::new();
        let mut evals = Vec::new();
        let mut record_eval = |rec: EvalRecord, logs: &mut Option<(BufWriter<File>, BufWriter<File>)>| -> Result<()> {
            if let Some((_, e)) = logs {
                writeln!(e, "{}", serde_json::to_string(&rec)?)?;
                e.flush()?;
            }
            evals.push(rec);
            Ok(())
        };

        while state.step < cfg.max_steps {
            let losses = train_step(self.model, cfg, &mut state, self.train, &sampler)?;
            let rec = StepRecord {
                step: state.step,
                l_cls: losses.l_cls,
                l_adv: losses.l_adv,
                l_loc: losses.l_loc,
                l_total: losses.l_total,
                lr: cfg.optimizer.lr,
            };
            if let Some((m, _)) = &mut logs {
                writeln!(m, "{}", serde_json::to_string(&rec)?)?;
            }
            trace.push(rec);
            if state.step % 50 == 0 || state.step == cfg.max_steps {
                info!(
                    "step {}/{} l_total {:.4} l_cls {:.4} l_adv {:.4} l_loc {:.4}",
                    state.step, cfg.max_steps, rec.l_total, rec.l_cls, rec.l_adv, rec.l_loc
                );
            }

            if cfg.eval_every > 0 && state.step % cfg.eval_every == 0 {
                if let Some(rec) = self.evaluate(&state, EvalKind::Periodic)? {
                    let improved = state.best.as_ref().is_none_or(|b| rec.report.auc > b.auc);
                    if improved {
                        state.best = Some(BestRecord {
                            step: state.step,
                            auc: rec.report.auc,
                        });
                        self.checkpoint(&state, files::BEST)?;
                    }
                    info!("eval step {} auc {:.4} acc {:.4}", state.step, rec.report.auc, rec.report.acc);
                    record_eval(rec, &mut logs)?;
                }
            }
            if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < cfg.max_steps {
                self.checkpoint(&state, files::LAST)?;
            }
        }
        if let Some((m, _)) = &mut logs {
            m.flush()?;
        }
        if let Some(rec) = self.evaluate(&state, EvalKind::Final)? {
            record_eval(rec, &mut logs)?;
        }
        self.checkpoint(&state, files::LAST)?;
        Ok(TrainOutcome { state, trace, evals })
    }
}

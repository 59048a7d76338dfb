//! Run configuration: JSON on disk, dotted-path overrides on the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::datasets::{OnError, Split};
use crate::error::{BslError, Result};
use crate::model::ModelConfig;
use crate::objectives::LossWeights;
use crate::optim::OptimizerConfig;
use crate::shuffle::ShuffleConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Manifest CSV. Relative paths resolve against the config file's directory.
    pub manifest: Option<PathBuf>,
    pub input_side: usize,
    pub on_error: OnError,
    /// Split used for periodic evaluation and best-checkpoint selection.
    pub eval_split: Split,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            input_side: crate::datasets::DEFAULT_INPUT_SIDE,
            on_error: OnError::Fail,
            eval_split: Split::Val,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialConfig {
    /// Negate the adversarial gradient where it enters the backbone.
    pub gradient_reversal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub shuffle: ShuffleConfig,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_steps: u64,
    /// Evaluate every this many steps; 0 disables periodic evaluation.
    pub eval_every: u64,
    /// Write `last.ckpt` every this many steps in addition to the end of the run.
    pub checkpoint_every: u64,
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub adversarial: AdversarialConfig,
    /// Train the bare backbone: no shuffling and no heads at all.
    pub plain_backbone: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            shuffle: ShuffleConfig::default(),
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 64,
            max_steps: 1000,
            eval_every: 100,
            checkpoint_every: 0,
            seed: 0,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            adversarial: AdversarialConfig::default(),
            plain_backbone: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.shuffle.validate()?;
        self.weights.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(BslError::Validation("batch_size must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(BslError::Validation("max_steps must be positive".into()));
        }
        if self.data.input_side == 0 {
            return Err(BslError::Validation("data.input_side must be positive".into()));
        }
        crate::shuffle::check_divisible(self.data.input_side, self.data.input_side, self.shuffle.s_inter)?;
        Ok(())
    }

    /// Reads a JSON config. A relative manifest path is resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| BslError::Config(format!("{}: {e}", path.display())))?;
        if let (Some(m), Some(dir)) = (&cfg.data.manifest, path.parent()) {
            if m.is_relative() {
                cfg.data.manifest = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` where `key` is a dotted path such as `weights.alpha`.
    /// The value is parsed as JSON, falling back to a plain string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| BslError::Config(format!("override {assignment:?} is not key=value")))?;
        let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self)?;
        let mut slot = &mut tree;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|obj| obj.get_mut(part))
                .ok_or_else(|| BslError::Config(format!("unknown config key {key:?}")))?;
        }
        *slot = value;
        *self = serde_json::from_value(tree).map_err(|e| BslError::Config(format!("override {key}: {e}")))?;
        Ok(())
    }

    pub fn with_overrides<'a>(mut self, overrides: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        for o in overrides {
            self.apply_override(o)?;
        }
        Ok(self)
    }

    /// Short content hash of the effective config, used to name run directories.
    pub fn run_id(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        hex::encode(&digest[..6])
    }
}

//! Checkpoints: a tar archive holding `manifest.json` and one little-endian
//! `f64` blob per array.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::state::{BestRecord, TrainState};
use crate::config::RunConfig;
use crate::error::{BslError, Result};
use crate::model::ParamSet;
use crate::optim::GroupState;

const FORMAT: &str = "bsl-checkpoint";
const VERSION: u32 = 1;
const GROUPS: [&str; 3] = ["theta", "psi", "phi"];

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArchiveManifest {
    format: String,
    version: u32,
    step: u64,
    optimizer_steps: [u64; 3],
    best: Option<BestRecord>,
    config: RunConfig,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: TrainState,
}

fn encode(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn decode(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}

impl Checkpoint {
    fn arrays(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, name) in GROUPS.iter().enumerate() {
            out.push((name.to_string(), self.state.params.groups()[i]));
        }
        for (g, name) in self.state.optimizer.iter().zip(GROUPS) {
            out.push((format!("adam_m_{name}"), &g.m[..]));
            out.push((format!("adam_v_{name}"), &g.v[..]));
        }
        out
    }

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let arrays = self.arrays();
        let blobs: Vec<(String, Vec<u8>)> = arrays.iter().map(|(n, v)| (format!("{n}.f64"), encode(v))).collect();
        let manifest = ArchiveManifest {
            format: FORMAT.into(),
            version: VERSION,
            step: self.state.step,
            optimizer_steps: [0, 1, 2].map(|i| self.state.optimizer[i].step),
            best: self.state.best.clone(),
            config: self.config.clone(),
            arrays: arrays
                .iter()
                .zip(&blobs)
                .map(|((name, v), (_, b))| ArrayEntry {
                    name: name.clone(),
                    len: v.len(),
                    sha256: hex::encode(Sha256::digest(b)),
                })
                .collect(),
        };
        let mut builder = tar::Builder::new(Vec::new());
        let mut append = |name: &str, data: &[u8]| -> std::io::Result<()> {
            let mut header = tar::Header::new_gnu();
            header.set_size(data.len() as u64);
            header.set_mode(0o644);
            header.set_mtime(0);
            header.set_cksum();
            builder.append_data(&mut header, name, data)
        };
        append("manifest.json", serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        for (name, bytes) in &blobs {
            append(name, bytes)?;
        }
        Ok(builder.into_inner()?)
    }

    /// Writes atomically: the archive goes to a sibling temp file first.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.partial");
        let fail = |source| BslError::CheckpointWrite {
            path: tmp.clone(),
            source,
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(fail)?;
        }
        let mut f = std::fs::File::create(&tmp).map_err(fail)?;
        f.write_all(&bytes).map_err(fail)?;
        f.sync_all().map_err(fail)?;
        std::fs::rename(&tmp, path).map_err(|source| BslError::CheckpointWrite {
            path: PathBuf::from(path),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            BslError::CorruptCheckpoint(msg) => BslError::CorruptCheckpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: String| BslError::CorruptCheckpoint(msg);
        let mut archive = tar::Archive::new(bytes);
        let mut files = std::collections::HashMap::new();
        for entry in archive.entries().map_err(|e| corrupt(e.to_string()))? {
            let mut entry = entry.map_err(|e| corrupt(e.to_string()))?;
            let name = entry.path().map_err(|e| corrupt(e.to_string()))?.to_string_lossy().into_owned();
            let mut data = Vec::new();
            entry.read_to_end(&mut data).map_err(|e| corrupt(e.to_string()))?;
            files.insert(name, data);
        }
        let manifest: ArchiveManifest = serde_json::from_slice(
            files.get("manifest.json").ok_or_else(|| corrupt("no manifest.json".into()))?,
        )
        .map_err(|e| corrupt(format!("manifest.json: {e}")))?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(corrupt(format!("unsupported format {} v{}", manifest.format, manifest.version)));
        }
        let mut arrays = std::collections::HashMap::new();
        for entry in &manifest.arrays {
            let data = files
                .get(&format!("{}.f64", entry.name))
                .ok_or_else(|| corrupt(format!("missing array {}", entry.name)))?;
            if data.len() != entry.len * 8 || hex::encode(Sha256::digest(data)) != entry.sha256 {
                return Err(corrupt(format!("array {} does not match its manifest entry", entry.name)));
            }
            arrays.insert(entry.name.clone(), decode(data));
        }
        let mut take = |name: String| arrays.remove(&name).ok_or_else(|| corrupt(format!("missing array {name}")));
        let params = ParamSet {
            theta: take("theta".into())?,
            psi: take("psi".into())?,
            phi: take("phi".into())?,
        };
        let mut optimizer = Vec::new();
        for (i, name) in GROUPS.iter().enumerate() {
            let state = GroupState {
                step: manifest.optimizer_steps[i],
                m: take(format!("adam_m_{name}"))?,
                v: take(format!("adam_v_{name}"))?,
            };
            if state.m.len() != params.groups()[i].len() || state.v.len() != state.m.len() {
                return Err(corrupt(format!("optimizer state for {name} has the wrong length")));
            }
            optimizer.push(state);
        }
        Ok(Self {
            config: manifest.config,
            state: TrainState {
                params,
                optimizer: optimizer.try_into().expect("three groups"),
                step: manifest.step,
                best: manifest.best,
            },
        })
    }
}

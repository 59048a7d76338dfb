use log::warn;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, Split};
use crate::error::{BslError, Result};
use crate::image::ImageTensor;

pub const DEFAULT_INPUT_SIDE: usize = 224;

/// What to do with a manifest row whose image cannot be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnError {
    #[default]
    Fail,
    Skip,
}

/// Decodes one image, replicates gray to RGB and resizes to `side x side`.
pub fn load_image(path: &std::path::Path, side: usize) -> Result<ImageTensor> {
    let img = ImageTensor::load(path)?.to_rgb();
    Ok(img.resize(side, side))
}

/// Loads the given manifest rows in order. Skipped rows are logged and left
/// out of the result.
pub fn load_batch(
    manifest: &Manifest,
    indices: &[usize],
    input_side: usize,
    on_error: OnError,
) -> Result<Vec<(ImageTensor, u8)>> {
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let row = manifest
            .rows()
            .get(i)
            .ok_or_else(|| BslError::InvalidInput(format!("manifest has no row {i}")))?;
        match load_image(&manifest.resolve(row), input_side) {
            Ok(img) => out.push((img, row.label)),
            Err(e) if on_error == OnError::Skip => warn!("skipping {}: {e}", row.path),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// A decoded split held in memory.
#[derive(Debug, Clone, Default)]
pub struct InMemoryDataset {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<u8>,
    /// Manifest paths, used to name samples in diagnostics.
    pub keys: Vec<String>,
}

impl InMemoryDataset {
    pub fn load(manifest: &Manifest, split: Split, input_side: usize, on_error: OnError) -> Result<Self> {
        let indices = manifest.split_indices(split);
        let mut ds = Self::default();
        for i in indices {
            let row = &manifest.rows()[i];
            match load_image(&manifest.resolve(row), input_side) {
                Ok(img) => {
                    ds.images.push(img);
                    ds.labels.push(row.label);
                    ds.keys.push(row.path.clone());
                }
                Err(e) if on_error == OnError::Skip => warn!("skipping {}: {e}", row.path),
                Err(e) => return Err(e),
            }
        }
        Ok(ds)
    }

    pub fn from_parts(images: Vec<ImageTensor>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(BslError::Structural(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let keys = (0..images.len()).map(|i| format!("#{i}")).collect();
        Ok(Self { images, labels, keys })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Returns a copy with `f` applied to every image.
    pub fn map_images(&self, f: impl Fn(&ImageTensor) -> Result<ImageTensor>) -> Result<Self> {
        Ok(Self {
            images: self.images.iter().map(f).collect::<Result<_>>()?,
            labels: self.labels.clone(),
            keys: self.keys.clone(),
        })
    }
}

//! CSV manifests with header `path,label,split`. Paths are relative to the
//! manifest's directory unless absolute.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BslError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = BslError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(BslError::Validation(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    /// 0 real, 1 fake.
    pub label: u8,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    root: PathBuf,
    rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, rows: Vec<ManifestRow>) -> Result<Self> {
        let m = Self {
            root: root.into(),
            rows,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Indices of rows belonging to `split`, in manifest order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&i| self.rows[i].split == split)
            .collect()
    }

    /// Labels are 0/1 and no path is listed under two different splits.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            if row.label > 1 {
                return Err(BslError::Validation(format!(
                    "row {i}: label must be 0 or 1, got {}",
                    row.label
                )));
            }
            if let Some(prev) = seen.insert(&row.path, row.split) {
                if prev != row.split {
                    return Err(BslError::Validation(format!(
                        "{} appears in both {prev} and {} splits",
                        row.path, row.split
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks that every listed file exists.
    pub fn check_paths(&self) -> Result<()> {
        for row in &self.rows {
            let p = self.resolve(row);
            if !p.is_file() {
                return Err(BslError::Validation(format!("missing image {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label", "split"] {
            return Err(BslError::Validation(format!(
                "{}: manifest header must be path,label,split",
                path.display()
            )));
        }
        let rows = reader.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(root, rows)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        for row in &self.rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(path: &str, label: u8, split: Split) -> ManifestRow {
        ManifestRow {
            path: path.into(),
            label,
            split,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new(
            dir.path(),
            vec![row("a.png", 0, Split::Train), row("b.png", 1, Split::Test)],
        )
        .unwrap();
        let path = dir.path().join("manifest.csv");
        m.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("path,label,split\n"));
        assert!(text.contains("b.png,1,test"));
        assert_eq!(Manifest::read(&path).unwrap(), m);
        assert_eq!(m.split_indices(Split::Test), vec![1]);
    }

    #[test]
    fn rejects_bad_labels_and_overlapping_splits() {
        assert!(Manifest::new(".", vec![row("a.png", 2, Split::Train)]).is_err());
        assert!(Manifest::new(
            ".",
            vec![row("a.png", 0, Split::Train), row("a.png", 0, Split::Val)]
        )
        .is_err());
    }

    #[test]
    fn rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "file,label,split\na.png,0,train\n").unwrap();
        assert!(Manifest::read(&path).is_err());
    }
}

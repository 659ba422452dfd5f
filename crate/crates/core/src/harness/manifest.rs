//! Dataset manifest: one CSV row per trace.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNLABELLED: &str = "UNLABELLED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: String,
    pub room_id: usize,
    pub position_id: usize,
    pub codec_mode: String,
    pub loss_rate: f64,
    pub seed: u64,
}

impl ManifestEntry {
    pub fn is_labelled(&self) -> bool {
        self.label != UNLABELLED
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// directory that relative entry paths resolve against
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest { root: root.into(), entries }
    }

    pub fn resolve(&self, e: &ManifestEntry) -> PathBuf {
        let p = Path::new(&e.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Load and check that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path)?;
        let entries: Vec<ManifestEntry> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = DatasetManifest { root, entries };
        for e in &m.entries {
            if e.label.is_empty() {
                return Err(Error::Data(format!("{}: empty label", e.path)));
            }
            if !m.resolve(e).exists() {
                return Err(Error::Data(format!("missing trace file {}", e.path)));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Distinct labelled locations, sorted.
    pub fn locations(&self) -> Vec<String> {
        let s: BTreeSet<&str> = self.entries.iter().filter(|e| e.is_labelled()).map(|e| e.label.as_str()).collect();
        s.into_iter().map(String::from).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(path: &str, label: &str) -> ManifestEntry {
        ManifestEntry {
            path: path.into(),
            label: label.into(),
            room_id: 0,
            position_id: 1,
            codec_mode: "wideband".into(),
            loss_rate: 0.1,
            seed: 42,
        }
    }

    #[test]
    fn roundtrip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.wav"), b"x").unwrap();
        let m = DatasetManifest::new(dir.path(), vec![entry("a.wav", "room00")]);
        let p = dir.path().join("manifest.csv");
        m.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("path,label,room_id,position_id,codec_mode,loss_rate,seed\n"));
        assert_eq!(DatasetManifest::load(&p).unwrap().entries, m.entries);
    }

    #[test]
    fn missing_file_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(dir.path(), vec![entry("gone.wav", "room00")]);
        let p = dir.path().join("manifest.csv");
        m.save(&p).unwrap();
        assert!(matches!(DatasetManifest::load(&p), Err(Error::Data(_))));
    }

    #[test]
    fn locations_skip_unlabelled() {
        let m =
            DatasetManifest::new(".", vec![entry("a", "b"), entry("c", UNLABELLED), entry("d", "a"), entry("e", "b")]);
        assert_eq!(m.locations(), vec!["a".to_string(), "b".to_string()]);
    }
}

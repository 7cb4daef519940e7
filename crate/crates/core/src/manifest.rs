//! The dataset manifest: one CSV row per scan.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("duplicate scan_id `{0}`")]
    DuplicateScanId(String),
    #[error("empty scan_id in row {0}")]
    EmptyScanId(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExpertLabel {
    #[serde(rename = "contrast")]
    Contrast,
    #[serde(rename = "noncontrast")]
    NonContrast,
}

impl ExpertLabel {
    pub fn as_target(self) -> f32 {
        match self {
            ExpertLabel::Contrast => 1.0,
            ExpertLabel::NonContrast => 0.0,
        }
    }

    pub fn is_positive(self) -> bool {
        self == ExpertLabel::Contrast
    }

    pub fn from_positive(positive: bool) -> Self {
        if positive {
            ExpertLabel::Contrast
        } else {
            ExpertLabel::NonContrast
        }
    }
}

impl std::fmt::Display for ExpertLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExpertLabel::Contrast => "contrast",
            ExpertLabel::NonContrast => "noncontrast",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Site {
    Hn,
    Chest,
}

impl std::str::FromStr for Site {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hn" => Ok(Site::Hn),
            "chest" => Ok(Site::Chest),
            other => Err(format!("unknown site `{other}` (expected hn or chest)")),
        }
    }
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Site::Hn => "hn",
            Site::Chest => "chest",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub scan_id: String,
    pub path: String,
    pub expert_label: ExpertLabel,
    /// An empty cell means the bolus tag was absent.
    #[serde(default, deserialize_with = "csv::invalid_option")]
    pub bolus_raw: Option<String>,
    pub site: Site,
    #[serde(default)]
    pub cohort: String,
    #[serde(default, deserialize_with = "csv::invalid_option")]
    pub artifact_note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self, ManifestError> {
        let mut seen = HashSet::new();
        for (i, r) in rows.iter().enumerate() {
            if r.scan_id.is_empty() {
                return Err(ManifestError::EmptyScanId(i + 1));
            }
            if !seen.insert(r.scan_id.as_str()) {
                return Err(ManifestError::DuplicateScanId(r.scan_id.clone()));
            }
        }
        Ok(Manifest { rows })
    }

    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let wrap = |source| ManifestError::Csv { path: path.display().to_string(), source };
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(wrap)?;
        let rows = reader.deserialize().collect::<Result<Vec<ManifestRow>, _>>().map_err(wrap)?;
        Manifest::new(rows)
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        self.to_csv_bytes_with(None)
    }

    /// CSV text, optionally preceded by `#` comment lines.
    pub fn to_csv_bytes_with(&self, comment: Option<&str>) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(crate::eval::comment_block(comment));
        for r in &self.rows {
            w.serialize(r).expect("in-memory csv");
        }
        w.into_inner().expect("in-memory csv")
    }

    pub fn get(&self, scan_id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.scan_id == scan_id)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

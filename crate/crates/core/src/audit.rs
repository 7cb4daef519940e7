//! Normalization of the Contrast/Bolus Agent tag and its agreement with
//! expert annotation.

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{ExpertLabel, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContrastLabel {
    Contrast,
    NonContrast,
    Missing,
}

#[derive(Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("manifest has no rows")]
    EmptyManifest,
}

/// Bolus strings that explicitly deny contrast. Matching is case-insensitive
/// on the trimmed string.
#[derive(Debug, Clone, PartialEq)]
pub struct BolusVocabulary {
    negatives: Vec<String>,
}

impl Default for BolusVocabulary {
    fn default() -> Self {
        BolusVocabulary::new(["N", "NO"])
    }
}

impl BolusVocabulary {
    pub fn new<I, S>(negatives: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        BolusVocabulary { negatives: negatives.into_iter().map(|s| s.as_ref().trim().to_uppercase()).collect() }
    }

    pub fn classify(&self, raw: Option<&str>) -> ContrastLabel {
        let Some(raw) = raw else { return ContrastLabel::Missing };
        let t = raw.trim();
        if t.is_empty() || t.eq_ignore_ascii_case("nan") {
            return ContrastLabel::Missing;
        }
        let upper = t.to_uppercase();
        if self.negatives.contains(&upper) {
            ContrastLabel::NonContrast
        } else {
            ContrastLabel::Contrast
        }
    }
}

/// Classifies a raw bolus string with the default negative vocabulary.
pub fn normalize_bolus(raw: Option<&str>) -> ContrastLabel {
    BolusVocabulary::default().classify(raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub scan_id: String,
    pub bolus_raw: Option<String>,
    pub metadata_label: ContrastLabel,
    pub expert_label: ExpertLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCell {
    pub metadata: ContrastLabel,
    pub expert: ExpertLabel,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    /// Metadata label × expert label, all six cells, fixed order.
    pub cells: Vec<AuditCell>,
    pub total: usize,
    pub missing: usize,
    pub agreements: usize,
    pub erroneous: usize,
    pub distinct_raw_strings: usize,
    pub missing_or_erroneous_fraction: f64,
}

pub fn audit(manifest: &Manifest, vocabulary: &BolusVocabulary) -> Result<AuditReport, AuditError> {
    if manifest.is_empty() {
        return Err(AuditError::EmptyManifest);
    }
    let rows: Vec<AuditRow> = manifest
        .rows
        .iter()
        .map(|r| AuditRow {
            scan_id: r.scan_id.clone(),
            bolus_raw: r.bolus_raw.clone(),
            metadata_label: vocabulary.classify(r.bolus_raw.as_deref()),
            expert_label: r.expert_label,
        })
        .collect();

    let mut cells = Vec::with_capacity(6);
    for metadata in [ContrastLabel::Contrast, ContrastLabel::NonContrast, ContrastLabel::Missing] {
        for expert in [ExpertLabel::Contrast, ExpertLabel::NonContrast] {
            let count = rows.iter().filter(|r| r.metadata_label == metadata && r.expert_label == expert).count();
            cells.push(AuditCell { metadata, expert, count });
        }
    }
    let missing = rows.iter().filter(|r| r.metadata_label == ContrastLabel::Missing).count();
    let agreements = rows
        .iter()
        .filter(|r| match r.metadata_label {
            ContrastLabel::Contrast => r.expert_label == ExpertLabel::Contrast,
            ContrastLabel::NonContrast => r.expert_label == ExpertLabel::NonContrast,
            ContrastLabel::Missing => false,
        })
        .count();
    let total = rows.len();
    let erroneous = total - missing - agreements;
    let distinct_raw_strings = rows.iter().filter_map(|r| r.bolus_raw.as_deref()).collect::<BTreeSet<_>>().len();
    Ok(AuditReport {
        rows,
        cells,
        total,
        missing,
        agreements,
        erroneous,
        distinct_raw_strings,
        missing_or_erroneous_fraction: (missing + erroneous) as f64 / total as f64,
    })
}

impl AuditReport {
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14} {:>10} {:>12}", "metadata", "expert:C", "expert:NC");
        for metadata in [ContrastLabel::Contrast, ContrastLabel::NonContrast, ContrastLabel::Missing] {
            let count = |expert| {
                self.cells.iter().find(|c| c.metadata == metadata && c.expert == expert).map_or(0, |c| c.count)
            };
            let _ = writeln!(
                s,
                "{:<14} {:>10} {:>12}",
                format!("{metadata:?}"),
                count(ExpertLabel::Contrast),
                count(ExpertLabel::NonContrast)
            );
        }
        let _ = writeln!(
            s,
            "scans: {}  missing: {}  erroneous: {}  distinct bolus strings: {}",
            self.total, self.missing, self.erroneous, self.distinct_raw_strings
        );
        let _ = writeln!(s, "missing or erroneous: {:.1}%", 100.0 * self.missing_or_erroneous_fraction);
        s
    }
}

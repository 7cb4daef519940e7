use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::fsutil::atomic_write;
use crate::manifest::ExpertLabel;
use crate::nn::{Network, Tensor};
use crate::volume::SliceStack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicePrediction {
    pub scan_id: String,
    pub slice_index: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    pub scan_id: String,
    pub patient_score: f64,
    pub predicted: bool,
    pub expert: Option<ExpertLabel>,
}

/// Eval-mode probability for every slice, in stack order.
pub fn predict_stack(net: &Network<f32>, stack: &SliceStack, batch_size: usize) -> Result<Vec<f64>, EvalError> {
    let (h, w) = (stack.height, stack.width);
    let mut out = Vec::with_capacity(stack.len());
    for chunk in stack.slices.chunks(batch_size.max(1)) {
        let mut values = Vec::with_capacity(chunk.len() * h * w * 3);
        for s in chunk {
            for &v in s {
                values.extend_from_slice(&[v, v, v]);
            }
        }
        let x = Tensor::new(vec![chunk.len(), h, w, 3], values);
        out.extend(net.predict_proba(&x)?.into_iter().map(f64::from));
    }
    Ok(out)
}

/// Mean slice probability of one scan.
pub fn aggregate_patient(slice_probs: &[f64]) -> Result<f64, EvalError> {
    if slice_probs.is_empty() {
        return Err(EvalError::EmptyScan(String::new()));
    }
    Ok(slice_probs.iter().sum::<f64>() / slice_probs.len() as f64)
}

/// Groups slice rows by scan (sorted by scan id) and applies `threshold`.
pub fn patients_from_slices(
    slices: &[SlicePrediction],
    threshold: f64,
    expert: &dyn Fn(&str) -> Option<ExpertLabel>,
) -> Result<Vec<PatientPrediction>, EvalError> {
    let mut by_scan: BTreeMap<&str, Vec<(usize, f64)>> = BTreeMap::new();
    for s in slices {
        by_scan.entry(&s.scan_id).or_default().push((s.slice_index, s.probability));
    }
    by_scan
        .into_iter()
        .map(|(id, mut rows)| {
            rows.sort_by_key(|r| r.0);
            let probs: Vec<f64> = rows.into_iter().map(|r| r.1).collect();
            let score = aggregate_patient(&probs).map_err(|_| EvalError::EmptyScan(id.to_string()))?;
            Ok(PatientPrediction {
                scan_id: id.to_string(),
                patient_score: score,
                predicted: score >= threshold,
                expert: expert(id),
            })
        })
        .collect()
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Io(format!("{}: {e}", path.display()))
}

/// Comment lines (`# ...`) placed before a CSV header.
pub fn comment_block(comment: Option<&str>) -> Vec<u8> {
    comment.map_or_else(Vec::new, |c| c.lines().map(|l| format!("# {l}\n")).collect::<String>().into_bytes())
}

/// Writes slice predictions, optionally preceded by `#` comment lines.
pub fn write_slice_csv(path: &Path, rows: &[SlicePrediction], comment: Option<&str>) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(comment_block(comment));
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path, e))?;
    atomic_write(path, &bytes).map_err(|e| io_err(path, e))
}

pub fn read_slice_csv(path: &Path) -> Result<Vec<SlicePrediction>, EvalError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(|e| io_err(path, e))?;
    let rows: Vec<SlicePrediction> = r.deserialize().collect::<Result<_, _>>().map_err(|e| io_err(path, e))?;
    if let Some(bad) = rows.iter().find(|r| !(0.0..=1.0).contains(&r.probability)) {
        return Err(EvalError::Invalid(format!("probability {} for {}", bad.probability, bad.scan_id)));
    }
    Ok(rows)
}

pub fn write_patient_csv(path: &Path, rows: &[PatientPrediction], comment: Option<&str>) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(comment_block(comment));
    w.write_record(["scan_id", "patient_score", "predicted", "expert"]).map_err(|e| io_err(path, e))?;
    for r in rows {
        let predicted = ExpertLabel::from_positive(r.predicted).to_string();
        let expert = r.expert.map(|e| e.to_string()).unwrap_or_default();
        w.write_record([r.scan_id.as_str(), &r.patient_score.to_string(), &predicted, &expert])
            .map_err(|e| io_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path, e))?;
    atomic_write(path, &bytes).map_err(|e| io_err(path, e))
}

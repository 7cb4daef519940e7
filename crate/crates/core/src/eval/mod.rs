//! Slice inference, patient aggregation and classification metrics.

mod bootstrap;
mod metrics;
mod predict;
mod report;

pub use bootstrap::{bootstrap_ci, bootstrap_many, percentile, BootstrapConfig, ConfidenceInterval};
pub use metrics::{
    confusion, pr_curve, pr_f1, roc_auc, roc_curve, youden_cutoff, Confusion, PrF1, PrPoint, RocCurve, RocPoint, Youden,
};
pub use predict::{
    aggregate_patient, comment_block, patients_from_slices, predict_stack, read_slice_csv, write_patient_csv,
    write_slice_csv, PatientPrediction, SlicePrediction,
};
pub use report::{evaluate, pr_points_csv, roc_points_csv, Level, MetricsReport, DEFAULT_THRESHOLD};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("scan {0} has no slice predictions")]
    EmptyScan(String),
    #[error("metric needs both classes; got {positives} positive and {negatives} negative")]
    SingleClass { positives: usize, negatives: usize },
    #[error("{skipped} of {attempted} bootstrap resamples were single-class")]
    DegenerateBootstrap { skipped: usize, attempted: usize },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error("{0}")]
    Io(String),
}

pub(crate) fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(EvalError::Invalid(format!("score {s}")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    Ok((positives, labels.len() - positives))
}

pub(crate) fn require_both(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), EvalError> {
    let (p, n) = check_inputs(scores, labels)?;
    if p == 0 || n == 0 {
        return Err(EvalError::SingleClass { positives: p, negatives: n });
    }
    Ok((p, n))
}

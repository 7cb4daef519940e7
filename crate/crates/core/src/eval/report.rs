use serde::{Deserialize, Serialize};

use super::bootstrap::bootstrap_many;
use super::{confusion, pr_curve, roc_curve, youden_cutoff, BootstrapConfig, Confusion, EvalError, PrPoint, RocPoint};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Image,
    Patient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub level: Level,
    pub n: usize,
    pub positives: usize,
    pub auc: f64,
    pub auc_ci95: [f64; 2],
    /// Sensitivity and specificity are reported at the Youden cutoff.
    pub youden_threshold: f64,
    pub sensitivity: f64,
    pub sensitivity_ci95: [f64; 2],
    pub specificity: f64,
    pub specificity_ci95: [f64; 2],
    /// Classification threshold for the confusion matrix, precision, recall and F1.
    pub threshold: f64,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub bootstrap_iterations: usize,
    pub bootstrap_seed: u64,
    pub bootstrap_skipped: usize,
    pub roc_points: Vec<RocPoint>,
    pub pr_points: Vec<PrPoint>,
}

pub fn evaluate(
    scores: &[f64],
    labels: &[bool],
    level: Level,
    threshold: f64,
    boot: &BootstrapConfig,
) -> Result<MetricsReport, EvalError> {
    let roc = roc_curve(scores, labels)?;
    let pr = pr_curve(scores, labels)?;
    let youden = youden_cutoff(scores, labels)?;
    let c = confusion(scores, labels, threshold)?;
    let cut = youden.threshold;
    let auc = |s: &[f64], l: &[bool]| roc_curve(s, l).map(|r| r.auc).unwrap_or(f64::NAN);
    let sens = |s: &[f64], l: &[bool]| confusion(s, l, cut).map(|c| c.sensitivity()).unwrap_or(f64::NAN);
    let spec = |s: &[f64], l: &[bool]| confusion(s, l, cut).map(|c| c.specificity()).unwrap_or(f64::NAN);
    let cis = bootstrap_many(scores, labels, boot, &[&auc, &sens, &spec])?;
    Ok(MetricsReport {
        level,
        n: scores.len(),
        positives: c.tp + c.fn_,
        auc: roc.auc,
        auc_ci95: [cis[0].lower, cis[0].upper],
        youden_threshold: cut,
        sensitivity: youden.sensitivity,
        sensitivity_ci95: [cis[1].lower, cis[1].upper],
        specificity: youden.specificity,
        specificity_ci95: [cis[2].lower, cis[2].upper],
        threshold,
        confusion: c,
        accuracy: c.accuracy(),
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        bootstrap_iterations: boot.iterations,
        bootstrap_seed: boot.seed,
        bootstrap_skipped: cis[0].skipped,
        roc_points: roc.points,
        pr_points: pr,
    })
}

fn fmt_threshold(t: f64) -> String {
    if t.is_infinite() {
        "inf".into()
    } else {
        t.to_string()
    }
}

pub fn roc_points_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", fmt_threshold(p.threshold), p.fpr, p.tpr));
    }
    s
}

pub fn pr_points_csv(points: &[PrPoint]) -> String {
    let mut s = String::from("threshold,precision,recall\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", fmt_threshold(p.threshold), p.precision, p.recall));
    }
    s
}

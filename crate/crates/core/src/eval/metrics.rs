use serde::{Deserialize, Serialize};

use super::{check_inputs, require_both, EvalError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Predictions are positive for scores `>= threshold`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Indices sorted by descending score, grouped into runs of equal scores.
fn descending_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Full ROC sweep: a `+inf` sentinel then every distinct score, descending.
/// The AUC is the trapezoid area, which credits tied pairs one half.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve, EvalError> {
    let (p, n) = require_both(scores, labels)?;
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area2 = 0u128; // twice the area in units of 1 / (p * n)
    for g in descending_groups(scores) {
        let gp = g.iter().filter(|&&i| labels[i]).count();
        let gn = g.len() - gp;
        area2 += (gn as u128) * (2 * tp as u128 + gp as u128);
        tp += gp;
        fp += gn;
        points.push(RocPoint { threshold: scores[g[0]], fpr: fp as f64 / n as f64, tpr: tp as f64 / p as f64 });
    }
    let auc = area2 as f64 / (2.0 * p as f64 * n as f64);
    Ok(RocCurve { points, auc })
}

pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    roc_curve(scores, labels).map(|c| c.auc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        self.sensitivity()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// `2PR / (P + R)`, or 0 when there are no true positives.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

/// Counts with prediction = positive iff `score >= threshold`.
pub fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Confusion, EvalError> {
    check_inputs(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall at every distinct score, from the highest threshold down.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>, EvalError> {
    let (p, _) = require_both(scores, labels)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    Ok(descending_groups(scores)
        .into_iter()
        .map(|g| {
            let gp = g.iter().filter(|&&i| labels[i]).count();
            tp += gp;
            fp += g.len() - gp;
            PrPoint { threshold: scores[g[0]], precision: ratio(tp, tp + fp), recall: ratio(tp, p) }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub points: Vec<PrPoint>,
}

pub fn pr_f1(scores: &[f64], labels: &[bool], threshold: f64) -> Result<PrF1, EvalError> {
    let points = pr_curve(scores, labels)?;
    let c = confusion(scores, labels, threshold)?;
    Ok(PrF1 { precision: c.precision(), recall: c.recall(), f1: c.f1(), points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Youden {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// `sensitivity + specificity - 1`
    pub index: f64,
}

/// Observed score maximizing the Youden index; ties go to the lowest score.
pub fn youden_cutoff(scores: &[f64], labels: &[bool]) -> Result<Youden, EvalError> {
    let (p, n) = require_both(scores, labels)?;
    let mut groups = descending_groups(scores);
    groups.reverse();
    // Ascending sweep: at threshold t, negatives below t are true negatives
    // and positives at or above t are true positives.
    let (mut tn, mut fn_) = (0usize, 0usize);
    let mut best: Option<(u128, f64, usize, usize)> = None;
    for g in groups {
        let t = scores[g[0]];
        let tp = p - fn_;
        // Proportional to sens + spec: tp/p + tn/n scaled by p*n.
        let j = tp as u128 * n as u128 + tn as u128 * p as u128;
        if best.is_none_or(|(bj, ..)| j > bj) {
            best = Some((j, t, tp, tn));
        }
        let gp = g.iter().filter(|&&i| labels[i]).count();
        fn_ += gp;
        tn += g.len() - gp;
    }
    let (_, threshold, tp, tn) = best.expect("non-empty input");
    let sensitivity = tp as f64 / p as f64;
    let specificity = tn as f64 / n as f64;
    Ok(Youden { threshold, sensitivity, specificity, index: sensitivity + specificity - 1.0 })
}

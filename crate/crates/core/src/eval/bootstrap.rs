use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{require_both, EvalError};
use crate::rng::rng_for;

/// Draws allowed per iteration before giving up on finding a two-class resample.
const MAX_ATTEMPTS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub seed: u64,
    /// When false every iteration reuses the full sample unchanged.
    pub resample: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { iterations: 10_000, seed: 0, resample: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    /// Single-class resamples that were discarded and re-drawn.
    pub skipped: usize,
}

/// Linear-interpolation percentile (`q` in `[0, 1]`) of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile 95% interval of `statistic` over resamples drawn with
/// replacement. Iteration `i`, attempt `a` draws from the stream
/// `(seed, i, a)`, so results do not depend on thread scheduling.
pub fn bootstrap_ci<F>(
    scores: &[f64],
    labels: &[bool],
    cfg: &BootstrapConfig,
    statistic: F,
) -> Result<ConfidenceInterval, EvalError>
where
    F: Fn(&[f64], &[bool]) -> f64 + Sync,
{
    let stats: [Statistic; 1] = [&statistic];
    Ok(bootstrap_many(scores, labels, cfg, &stats)?[0])
}

/// A statistic of `(scores, labels)`.
pub type Statistic<'a> = &'a (dyn Fn(&[f64], &[bool]) -> f64 + Sync);

/// Several statistics evaluated on the same resamples.
pub fn bootstrap_many(
    scores: &[f64],
    labels: &[bool],
    cfg: &BootstrapConfig,
    stats: &[Statistic],
) -> Result<Vec<ConfidenceInterval>, EvalError> {
    require_both(scores, labels)?;
    let n = scores.len();
    if n < 2 || cfg.iterations == 0 {
        return Err(EvalError::Invalid(format!("bootstrap needs n >= 2 and iterations >= 1 (n = {n})")));
    }
    let eval_all = |s: &[f64], l: &[bool]| -> Vec<f64> { stats.iter().map(|f| f(s, l)).collect() };
    let draws: Vec<(Option<Vec<f64>>, usize)> = (0..cfg.iterations)
        .into_par_iter()
        .map(|i| {
            if !cfg.resample {
                return (Some(eval_all(scores, labels)), 0);
            }
            let mut s = vec![0.0; n];
            let mut l = vec![false; n];
            for attempt in 0..MAX_ATTEMPTS {
                let mut rng = rng_for(cfg.seed, &[i as u64, attempt]);
                for k in 0..n {
                    let j = rng.random_range(0..n);
                    s[k] = scores[j];
                    l[k] = labels[j];
                }
                let pos = l.iter().filter(|&&x| x).count();
                if pos > 0 && pos < n {
                    return (Some(eval_all(&s, &l)), attempt as usize);
                }
            }
            (None, MAX_ATTEMPTS as usize)
        })
        .collect();
    let skipped: usize = draws.iter().map(|d| d.1).sum();
    let attempted = cfg.iterations + skipped - draws.iter().filter(|d| d.0.is_none()).count();
    if draws.iter().any(|d| d.0.is_none()) || 2 * skipped > cfg.iterations {
        return Err(EvalError::DegenerateBootstrap { skipped, attempted });
    }
    let rows: Vec<Vec<f64>> = draws.into_iter().map(|d| d.0.unwrap()).collect();
    Ok((0..stats.len())
        .map(|k| {
            let mut values: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            values.sort_by(f64::total_cmp);
            ConfidenceInterval { lower: percentile(&values, 0.025), upper: percentile(&values, 0.975), skipped }
        })
        .collect())
}

use rand::seq::SliceRandom;

use super::PipelineError;
use crate::rng::rng_for;

/// Per-class shuffle, then the first `round(fraction · n_class)` scans of each
/// class go to training. Input order does not matter: ids are sorted first.
pub fn stratified_split(
    labels: &[(String, bool)],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>), PipelineError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(PipelineError::InvalidConfig(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class, positive) in [(0u64, false), (1u64, true)] {
        let mut ids: Vec<String> = labels.iter().filter(|(_, p)| *p == positive).map(|(id, _)| id.clone()).collect();
        if ids.is_empty() {
            let name = if positive { "contrast" } else { "non-contrast" };
            return Err(PipelineError::InsufficientData(format!("no {name} scans to split")));
        }
        ids.sort();
        ids.shuffle(&mut rng_for(seed, &[0x5917, class]));
        let k = ((fraction * ids.len() as f64).round() as usize).min(ids.len());
        val.extend(ids.split_off(k));
        train.extend(ids);
    }
    if train.is_empty() || val.is_empty() {
        return Err(PipelineError::InsufficientData(format!(
            "{} scans cannot fill both sides of a {fraction} split",
            labels.len()
        )));
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort(pos: usize, neg: usize) -> Vec<(String, bool)> {
        (0..pos + neg).map(|i| (format!("s{i:04}"), i < pos)).collect()
    }

    #[test]
    fn exact_proportions() {
        let labels = cohort(10, 10);
        let (train, val) = stratified_split(&labels, 0.7, 3).unwrap();
        let positives = |ids: &[String]| ids.iter().filter(|id| labels.iter().any(|(l, p)| l == *id && *p)).count();
        assert_eq!((train.len(), val.len()), (14, 6));
        assert_eq!((positives(&train), positives(&val)), (7, 3));
        assert_eq!(stratified_split(&labels, 0.7, 3).unwrap(), (train, val));
    }

    #[test]
    fn single_class_is_insufficient() {
        assert!(matches!(stratified_split(&cohort(5, 0), 0.7, 1), Err(PipelineError::InsufficientData(_))));
    }
}

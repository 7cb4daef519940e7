use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{check_disjoint, AugmentConfig, Dataset, PipelineError};
use crate::nn::{bce_loss, sigmoid, Adam, Mode, Network, Tensor};
use crate::pipeline::augment_slice;
use crate::rng::rng_for;

const TAG_PICK: u64 = 0x9101;
const TAG_SHUFFLE: u64 = 0x9102;
const TAG_AUGMENT: u64 = 0x9103;
const TAG_DROPOUT: u64 = 0x9104;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub split_fraction: f64,
    /// Random slices drawn per training scan each epoch (all when `None`).
    pub slices_per_scan: Option<usize>,
    /// Evenly spaced validation slices per scan (all when `None`).
    pub val_slices_per_scan: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 1e-5,
            max_epochs: 100,
            patience: 20,
            augment: AugmentConfig::default(),
            seed: 0,
            split_fraction: 0.7,
            slices_per_scan: None,
            val_slices_per_scan: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("split_fraction {} outside (0, 1)", self.split_fraction));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad(format!("patience {} must be in [1, max_epochs = {}]", self.patience, self.max_epochs));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {}", self.lr));
        }
        if self.slices_per_scan == Some(0) || self.val_slices_per_scan == Some(0) {
            return bad("slices per scan must be positive".into());
        }
        Ok(())
    }
}

/// A slice addressed by dataset entry and position in its stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceRef {
    pub scan: usize,
    pub slice: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights at the lowest validation loss seen.
    pub model: Network<f32>,
    pub history: Vec<EpochRecord>,
    /// Epoch of the returned weights; 0 means the starting weights.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    /// Validation loss of the starting weights (fine-tuning only).
    pub initial_val_loss: Option<f64>,
}

/// Training slices for one epoch, in shuffled order.
pub fn epoch_samples(ds: &Dataset, cfg: &TrainConfig, epoch: usize) -> Vec<SliceRef> {
    let mut refs = Vec::new();
    for (scan, e) in ds.entries().iter().enumerate() {
        let n = e.stack.len();
        match cfg.slices_per_scan {
            Some(k) if k < n => {
                let mut rng = rng_for(cfg.seed, &[TAG_PICK, epoch as u64, scan as u64]);
                let mut picked = index::sample(&mut rng, n, k).into_vec();
                picked.sort_unstable();
                refs.extend(picked.into_iter().map(|slice| SliceRef { scan, slice }));
            }
            _ => refs.extend((0..n).map(|slice| SliceRef { scan, slice })),
        }
    }
    refs.shuffle(&mut rng_for(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
    refs
}

/// Validation slices: all, or `k` evenly spaced per scan.
pub fn validation_samples(ds: &Dataset, per_scan: Option<usize>) -> Vec<SliceRef> {
    let mut refs = Vec::new();
    for (scan, e) in ds.entries().iter().enumerate() {
        let n = e.stack.len();
        match per_scan {
            Some(k) if k < n => refs.extend((0..k).map(|j| SliceRef { scan, slice: (2 * j + 1) * n / (2 * k) })),
            _ => refs.extend((0..n).map(|slice| SliceRef { scan, slice })),
        }
    }
    refs
}

/// NHWC batch with the slice replicated into three channels, plus targets.
pub fn make_batch(
    ds: &Dataset,
    refs: &[SliceRef],
    augment: Option<(&AugmentConfig, &mut rand_chacha::ChaCha8Rng)>,
) -> (Tensor<f32>, Vec<f32>) {
    let (h, w) = ds.slice_dims().expect("non-empty dataset");
    let mut values = Vec::with_capacity(refs.len() * h * w * 3);
    let mut labels = Vec::with_capacity(refs.len());
    let mut augment = augment;
    for r in refs {
        let e = &ds.entries()[r.scan];
        let src = &e.stack.slices[r.slice];
        let img = match augment.as_mut() {
            Some((cfg, rng)) => augment_slice(src, h, w, cfg, *rng),
            None => src.clone(),
        };
        for v in img {
            values.extend_from_slice(&[v, v, v]);
        }
        labels.push(e.label.as_target());
    }
    (Tensor::new(vec![refs.len(), h, w, 3], values), labels)
}

fn correct(probs: &[f32], labels: &[f32]) -> usize {
    probs.iter().zip(labels).filter(|(&p, &y)| (p >= 0.5) == (y >= 0.5)).count()
}

/// One pass over `batches` with an optimizer step per batch.
/// Returns the sample-weighted mean loss and accuracy.
pub fn run_epoch(
    net: &mut Network<f32>,
    adam: &mut Adam,
    ds: &Dataset,
    batches: &[Vec<SliceRef>],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, f64), PipelineError> {
    let (mut loss_sum, mut hits, mut count) = (0.0f64, 0usize, 0usize);
    for (b, refs) in batches.iter().enumerate() {
        let mut aug_rng = rng_for(cfg.seed, &[TAG_AUGMENT, epoch as u64, b as u64]);
        let (x, y) = make_batch(ds, refs, Some((&cfg.augment, &mut aug_rng)));
        let mut drop_rng = rng_for(cfg.seed, &[TAG_DROPOUT, epoch as u64, b as u64]);
        let (logits, tape) = net.forward(&x, Mode::Train, &mut drop_rng)?;
        net.commit_batch_statistics(&tape);
        let probs: Vec<f32> = logits.into_iter().map(sigmoid).collect();
        let loss = bce_loss(&probs, &y);
        let n = refs.len() as f32;
        let dlogits: Vec<f32> = probs.iter().zip(&y).map(|(&p, &t)| (p - t) / n).collect();
        let grads = net.backward_tape(&tape, &dlogits);
        drop(tape);
        if !loss.is_finite() || grads.arrays.iter().flatten().any(|g| !g.is_finite()) {
            return Ok((f64::NAN, f64::NAN));
        }
        adam.step(net, &grads);
        loss_sum += loss * refs.len() as f64;
        hits += correct(&probs, &y);
        count += refs.len();
    }
    Ok((loss_sum / count.max(1) as f64, hits as f64 / count.max(1) as f64))
}

/// Eval-mode mean loss and accuracy over `refs`.
pub fn evaluate_loss(
    net: &Network<f32>,
    ds: &Dataset,
    refs: &[SliceRef],
    batch_size: usize,
) -> Result<(f64, f64), PipelineError> {
    let (mut loss_sum, mut hits) = (0.0f64, 0usize);
    for chunk in refs.chunks(batch_size.max(1)) {
        let (x, y) = make_batch(ds, chunk, None);
        let probs = net.predict_proba(&x)?;
        loss_sum += bce_loss(&probs, &y) * chunk.len() as f64;
        hits += correct(&probs, &y);
    }
    let n = refs.len().max(1) as f64;
    Ok((loss_sum / n, hits as f64 / n))
}

enum Schedule {
    EarlyStop { patience: usize },
    Fixed,
}

#[allow(clippy::too_many_arguments)]
fn fit<F>(
    mut net: Network<f32>,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
    epochs: usize,
    schedule: Schedule,
    initial_val_loss: Option<f64>,
    mut on_epoch: F,
) -> Result<TrainOutcome, PipelineError>
where
    F: FnMut(&EpochRecord, Option<&Network<f32>>) -> Result<(), PipelineError>,
{
    let [h, w, c] = net.spec().input;
    for ds in [train_ds, val_ds] {
        if ds.is_empty() {
            return Err(PipelineError::InsufficientData("empty training or validation set".into()));
        }
        let d = ds.slice_dims().unwrap();
        if d != (h, w) || c != 3 {
            return Err(PipelineError::SliceDims {
                scan_id: ds.entries()[0].scan_id.clone(),
                expected: (h, w),
                actual: d,
            });
        }
    }
    check_disjoint(train_ds, val_ds)?;
    let val_refs = validation_samples(val_ds, cfg.val_slices_per_scan);
    let mut adam = Adam::new(cfg.lr);
    let mut outcome = TrainOutcome {
        model: net.clone(),
        history: Vec::new(),
        best_epoch: 0,
        best_val_loss: initial_val_loss.unwrap_or(f64::INFINITY),
        epochs_run: 0,
        initial_val_loss,
    };
    let mut since_best = 0;
    for epoch in 1..=epochs {
        let refs = epoch_samples(train_ds, cfg, epoch);
        let batches: Vec<Vec<SliceRef>> = refs.chunks(cfg.batch_size).map(<[SliceRef]>::to_vec).collect();
        let (train_loss, train_acc) = run_epoch(&mut net, &mut adam, train_ds, &batches, cfg, epoch)?;
        let (val_loss, val_acc) = if train_loss.is_finite() {
            evaluate_loss(&net, val_ds, &val_refs, cfg.batch_size)?
        } else {
            (f64::NAN, f64::NAN)
        };
        outcome.epochs_run = epoch;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(PipelineError::Diverged { epoch, outcome: Box::new(outcome) });
        }
        let improved = val_loss < outcome.best_val_loss;
        let record = EpochRecord { epoch, train_loss, val_loss, train_acc, val_acc, improved };
        if improved {
            outcome.best_val_loss = val_loss;
            outcome.best_epoch = epoch;
            outcome.model = net.clone();
            since_best = 0;
            on_epoch(&record, Some(&outcome.model))?;
        } else {
            since_best += 1;
            on_epoch(&record, None)?;
        }
        outcome.history.push(record);
        if let Schedule::EarlyStop { patience } = schedule {
            if since_best >= patience {
                break;
            }
        }
    }
    Ok(outcome)
}

/// Trains with early stopping on validation loss. `on_epoch` sees every
/// epoch record, and the new best weights whenever validation loss improves.
pub fn train<F>(
    net: Network<f32>,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
    on_epoch: F,
) -> Result<TrainOutcome, PipelineError>
where
    F: FnMut(&EpochRecord, Option<&Network<f32>>) -> Result<(), PipelineError>,
{
    cfg.validate()?;
    fit(net, train_ds, val_ds, cfg, cfg.max_epochs, Schedule::EarlyStop { patience: cfg.patience }, None, on_epoch)
}

/// Retrains every layer for exactly `epochs` epochs. The starting weights
/// count as the first checkpoint, so the result never has a higher
/// validation loss than the input model.
pub fn finetune<F>(
    net: Network<f32>,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
    epochs: usize,
    on_epoch: F,
) -> Result<TrainOutcome, PipelineError>
where
    F: FnMut(&EpochRecord, Option<&Network<f32>>) -> Result<(), PipelineError>,
{
    cfg.validate()?;
    let val_refs = validation_samples(val_ds, cfg.val_slices_per_scan);
    let (initial, _) = evaluate_loss(&net, val_ds, &val_refs, cfg.batch_size)?;
    fit(net, train_ds, val_ds, cfg, epochs, Schedule::Fixed, Some(initial), on_epoch)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,train_acc,val_acc,improved\n");
    for r in history {
        s.push_str(&format!(
            "{},{:.8},{:.8},{:.6},{:.6},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.train_acc, r.val_acc, r.improved
        ));
    }
    s
}

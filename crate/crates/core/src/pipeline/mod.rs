//! Dataset assembly, stratified splitting, augmentation and the training loop.

mod augment;
mod split;
mod train;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

pub use augment::{augment_slice, transform_slice, AugmentConfig, Transform};
pub use split::stratified_split;
pub use train::{
    epoch_samples, evaluate_loss, finetune, history_csv, make_batch, run_epoch, train, validation_samples, EpochRecord,
    SliceRef, TrainConfig, TrainOutcome,
};

use crate::manifest::{ExpertLabel, Manifest, Site};
use crate::nn::NnError;
use crate::volume::{SliceStack, VolumeError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("scan {0} appears in both training and validation sets")]
    Leakage(String),
    #[error("duplicate scan id {0}")]
    DuplicateScan(String),
    #[error("slice stack for {scan_id} is {actual:?}, expected {expected:?}")]
    SliceDims { scan_id: String, expected: (usize, usize), actual: (usize, usize) },
    #[error("loss became non-finite in epoch {epoch}")]
    Diverged { epoch: usize, outcome: Box<TrainOutcome> },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{0}")]
    Io(String),
}

/// One labeled scan and its preprocessed slices.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub scan_id: String,
    pub label: ExpertLabel,
    pub site: Site,
    pub stack: Arc<SliceStack>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    entries: Vec<DatasetEntry>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(entries: Vec<DatasetEntry>) -> Result<Dataset, PipelineError> {
        let mut index = HashMap::new();
        let mut dims = None;
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.scan_id.clone(), i).is_some() {
                return Err(PipelineError::DuplicateScan(e.scan_id.clone()));
            }
            if e.stack.is_empty() {
                return Err(PipelineError::InsufficientData(format!("scan {} has no slices", e.scan_id)));
            }
            let d = (e.stack.height, e.stack.width);
            match dims {
                None => dims = Some(d),
                Some(expected) if expected != d => {
                    return Err(PipelineError::SliceDims { scan_id: e.scan_id.clone(), expected, actual: d })
                }
                _ => {}
            }
        }
        Ok(Dataset { entries, index })
    }

    /// Loads `<scan_id>.slst` stacks from `dir` for every manifest row.
    pub fn load(manifest: &Manifest, dir: &Path) -> Result<Dataset, PipelineError> {
        let entries = manifest
            .rows
            .iter()
            .map(|row| {
                Ok(DatasetEntry {
                    scan_id: row.scan_id.clone(),
                    label: row.expert_label,
                    site: row.site,
                    stack: Arc::new(SliceStack::read_from_dir(dir, &row.scan_id)?),
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        Dataset::new(entries)
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, scan_id: &str) -> Option<&DatasetEntry> {
        self.index.get(scan_id).map(|&i| &self.entries[i])
    }

    pub fn slice_count(&self) -> usize {
        self.entries.iter().map(|e| e.stack.len()).sum()
    }

    /// `(height, width)` shared by every stack.
    pub fn slice_dims(&self) -> Option<(usize, usize)> {
        self.entries.first().map(|e| (e.stack.height, e.stack.width))
    }

    /// `(scan_id, positive)` pairs in dataset order.
    pub fn labels(&self) -> Vec<(String, bool)> {
        self.entries.iter().map(|e| (e.scan_id.clone(), e.label.is_positive())).collect()
    }

    /// The entries named by `ids`, in the order given.
    pub fn subset(&self, ids: &[String]) -> Result<Dataset, PipelineError> {
        let entries = ids
            .iter()
            .map(|id| {
                self.get(id).cloned().ok_or_else(|| PipelineError::InsufficientData(format!("unknown scan {id}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Dataset::new(entries)
    }

    /// Splits by scan into stratified training and validation sets and checks
    /// that no scan lands on both sides.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), PipelineError> {
        let (train_ids, val_ids) = stratified_split(&self.labels(), fraction, seed)?;
        let (train, val) = (self.subset(&train_ids)?, self.subset(&val_ids)?);
        check_disjoint(&train, &val)?;
        Ok((train, val))
    }
}

pub fn check_disjoint(train: &Dataset, val: &Dataset) -> Result<(), PipelineError> {
    match val.entries.iter().find(|e| train.index.contains_key(&e.scan_id)) {
        Some(e) => Err(PipelineError::Leakage(e.scan_id.clone())),
        None => Ok(()),
    }
}

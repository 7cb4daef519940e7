//! Intravenous contrast detection for CT volumes.
//!
//! The crate covers the whole curation workflow: DICOM/NRRD ingestion,
//! bolus-tag auditing, geometric preprocessing into slice stacks, a small
//! CNN engine with training and fine-tuning, patient-level aggregation and
//! evaluation statistics, Grad-CAM explanations, and a synthetic phantom
//! generator for desk-scale experiments.

// `!(x >= lo)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod config;
pub mod dicom;
pub mod eval;
pub mod fsutil;
pub mod gradcam;
pub mod imaging;
pub mod manifest;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod volume;

pub use audit::{audit, normalize_bolus, AuditReport, ContrastLabel};
pub use config::RunConfig;
pub use manifest::{ExpertLabel, Manifest, ManifestRow, Site};
pub use nn::{ModelSpec, Network};
pub use volume::{SliceStack, Volume};

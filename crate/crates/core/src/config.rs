//! Run configuration: flat `key = value` files with dotted keys, overlaid by
//! command-line overrides on top of the defaults.

use std::fmt::Display;
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::audit::BolusVocabulary;
use crate::pipeline::{AugmentConfig, TrainConfig};
use crate::volume::{HuWindow, PreprocessConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{key}` (valid keys: {valid})")]
    UnknownKey { key: String, valid: String },
    #[error("config key `{key}`: cannot parse `{value}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    pub negatives: Vec<String>,
    pub train: TrainConfig,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub threshold: f64,
    pub bootstrap: usize,
    pub predict_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            preprocess: PreprocessConfig::default(),
            negatives: vec!["N".into(), "NO".into()],
            train: TrainConfig::default(),
            finetune_epochs: 10,
            finetune_lr: 1e-5,
            threshold: 0.5,
            bootstrap: 10_000,
            predict_batch: 32,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "preprocess.spacing_mm",
    "preprocess.crop_mm",
    "preprocess.z_fraction",
    "preprocess.window_low_hu",
    "preprocess.window_high_hu",
    "preprocess.align",
    "preprocess.align_threshold_hu",
    "preprocess.output_size",
    "audit.negatives",
    "train.batch_size",
    "train.lr",
    "train.max_epochs",
    "train.patience",
    "train.split_fraction",
    "train.slices_per_scan",
    "train.val_slices_per_scan",
    "augment.enabled",
    "augment.rotate_deg",
    "augment.zoom",
    "augment.flip",
    "finetune.epochs",
    "finetune.lr",
    "eval.threshold",
    "eval.bootstrap",
    "predict.batch_size",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_opt(key: &str, value: &str) -> Result<Option<usize>, ConfigError> {
    if value == "all" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map_or("all".to_string(), |n| n.to_string())
}

impl RunConfig {
    /// Sets one dotted key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let p = &mut self.preprocess;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "preprocess.spacing_mm" => {
                let parts = value.split(',').map(|s| parse::<f64>(key, s.trim())).collect::<Result<Vec<_>, _>>()?;
                p.target_spacing_mm = parts.try_into().map_err(|_| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    reason: "expected three comma-separated numbers".into(),
                })?;
            }
            "preprocess.crop_mm" => p.crop_mm = parse(key, value)?,
            "preprocess.z_fraction" => p.z_fraction = parse(key, value)?,
            "preprocess.window_low_hu" => p.window.low_hu = parse(key, value)?,
            "preprocess.window_high_hu" => p.window.high_hu = parse(key, value)?,
            "preprocess.align" => p.align = parse(key, value)?,
            "preprocess.align_threshold_hu" => p.align_threshold_hu = parse(key, value)?,
            "preprocess.output_size" => p.output_size = parse(key, value)?,
            "audit.negatives" => {
                self.negatives = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
            }
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.max_epochs" => t.max_epochs = parse(key, value)?,
            "train.patience" => t.patience = parse(key, value)?,
            "train.split_fraction" => t.split_fraction = parse(key, value)?,
            "train.slices_per_scan" => t.slices_per_scan = parse_opt(key, value)?,
            "train.val_slices_per_scan" => t.val_slices_per_scan = parse_opt(key, value)?,
            "augment.enabled" => t.augment.enabled = parse(key, value)?,
            "augment.rotate_deg" => t.augment.rotate_deg = parse(key, value)?,
            "augment.zoom" => t.augment.zoom = parse(key, value)?,
            "augment.flip" => t.augment.flip = parse(key, value)?,
            "finetune.epochs" => self.finetune_epochs = parse(key, value)?,
            "finetune.lr" => self.finetune_lr = parse(key, value)?,
            "eval.threshold" => self.threshold = parse(key, value)?,
            "eval.bootstrap" => self.bootstrap = parse(key, value)?,
            "predict.batch_size" => self.predict_batch = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey { key: key.to_string(), valid: KEYS.join(", ") }),
        }
        Ok(())
    }

    /// Applies a config file body. `#` starts a comment; blank lines are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides, as given on the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        for o in overrides {
            let (k, v) = o.as_ref().split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Every key with its effective value, in [`KEYS`] order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let p = &self.preprocess;
        let t = &self.train;
        let s = p.target_spacing_mm;
        let values = [
            self.seed.to_string(),
            format!("{},{},{}", s[0], s[1], s[2]),
            p.crop_mm.to_string(),
            p.z_fraction.to_string(),
            p.window.low_hu.to_string(),
            p.window.high_hu.to_string(),
            p.align.to_string(),
            p.align_threshold_hu.to_string(),
            p.output_size.to_string(),
            self.negatives.join(","),
            t.batch_size.to_string(),
            t.lr.to_string(),
            t.max_epochs.to_string(),
            t.patience.to_string(),
            t.split_fraction.to_string(),
            fmt_opt(t.slices_per_scan),
            fmt_opt(t.val_slices_per_scan),
            t.augment.enabled.to_string(),
            t.augment.rotate_deg.to_string(),
            t.augment.zoom.to_string(),
            t.augment.flip.to_string(),
            self.finetune_epochs.to_string(),
            self.finetune_lr.to_string(),
            self.threshold.to_string(),
            self.bootstrap.to_string(),
            self.predict_batch.to_string(),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    /// The effective config in file syntax; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.pairs().into_iter().map(|(k, v)| (k.to_string(), Value::String(v))).collect::<Map<_, _>>())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let p = &self.preprocess;
        if p.target_spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return bad("preprocess.spacing_mm must be positive");
        }
        if !(p.crop_mm > 0.0) || p.output_size == 0 {
            return bad("preprocess.crop_mm and preprocess.output_size must be positive");
        }
        if !(p.z_fraction > 0.0 && p.z_fraction <= 1.0) {
            return bad("preprocess.z_fraction must lie in (0, 1]");
        }
        if !(p.window.low_hu < p.window.high_hu) {
            return bad("preprocess.window_low_hu must be below preprocess.window_high_hu");
        }
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.finetune_lr > 0.0) {
            return bad("finetune.lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("eval.threshold must lie in [0, 1]");
        }
        if self.predict_batch == 0 {
            return bad("predict.batch_size must be positive");
        }
        Ok(())
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        TrainConfig { lr: self.finetune_lr, ..self.train_config() }
    }

    pub fn vocabulary(&self) -> BolusVocabulary {
        BolusVocabulary::new(&self.negatives)
    }

    pub fn window(&self) -> HuWindow {
        self.preprocess.window
    }

    pub fn augment(&self) -> &AugmentConfig {
        &self.train.augment
    }
}

use serde::{Deserialize, Serialize};

use super::{align_center_of_mass, crop_xy, crop_z_central, extract_slice_stack, resample, HuWindow};
use super::{SliceStack, Volume, VolumeError};

/// The geometric chain from a raw HU volume to a model-ready slice stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub target_spacing_mm: [f64; 3],
    pub crop_mm: f64,
    pub z_fraction: f64,
    pub window: HuWindow,
    pub align: bool,
    pub align_threshold_hu: f64,
    /// In-plane size of the emitted slices; the crop is resized when it differs.
    pub output_size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_spacing_mm: [1.0, 1.0, 3.0],
            crop_mm: 192.0,
            z_fraction: 2.0 / 3.0,
            window: HuWindow::default(),
            align: false,
            align_threshold_hu: -300.0,
            output_size: 192,
        }
    }
}

/// Resample, optionally align, crop in-plane and along z, then window.
pub fn preprocess_volume(v: &Volume, cfg: &PreprocessConfig, scan_id: &str) -> Result<SliceStack, VolumeError> {
    let mut vol = resample(v, cfg.target_spacing_mm);
    if cfg.align {
        vol = align_center_of_mass(&vol, cfg.align_threshold_hu)?.0;
    }
    let vol = crop_xy(&vol, cfg.crop_mm)?;
    let vol = crop_z_central(&vol, cfg.z_fraction);
    let stack = extract_slice_stack(&vol, cfg.window, scan_id);
    if stack.height == cfg.output_size && stack.width == cfg.output_size {
        Ok(stack)
    } else {
        Ok(stack.resized(cfg.output_size, cfg.output_size))
    }
}

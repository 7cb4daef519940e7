//! Volumes in Hounsfield units and the geometric preprocessing chain that
//! turns them into normalized slice stacks.

mod align;
mod crop;
pub mod nrrd;
mod preprocess;
mod resample;
mod stack;

pub use align::{align_center_of_mass, Alignment};
pub use crop::{crop_xy, crop_z_central};
pub use preprocess::{preprocess_volume, PreprocessConfig};
pub use resample::resample;
pub use stack::{extract_slice_stack, HuWindow, SliceStack, SLICE_STACK_MAGIC};

use thiserror::Error;

/// HU used for every region outside the acquired grid (air).
pub const PADDING_HU: f32 = -1024.0;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("invalid volume geometry: {0}")]
    InvalidGeometry(String),
    #[error("crop of {requested:?} voxels exceeds volume of {available:?} voxels")]
    CropExceedsVolume { requested: [usize; 2], available: [usize; 2] },
    #[error("no voxel above {threshold} HU; cannot locate the body")]
    EmptyBodyMask { threshold: f64 },
    #[error("unsupported NRRD field `{field}`: {value}")]
    UnsupportedNrrdField { field: String, value: String },
    #[error("NRRD encoding error: {0}")]
    Encoding(String),
    #[error("slice stack format error: {0}")]
    StackFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A 3D scalar grid indexed `(x, y, z)` with x varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        origin_mm: [f64; 3],
        data: Vec<f32>,
    ) -> Result<Self, VolumeError> {
        if dims.contains(&0) {
            return Err(VolumeError::InvalidGeometry(format!("zero dimension in {dims:?}")));
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(VolumeError::InvalidGeometry(format!("spacing must be positive, got {spacing_mm:?}")));
        }
        if origin_mm.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::InvalidGeometry(format!("non-finite origin {origin_mm:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(VolumeError::InvalidGeometry(format!(
                "data length {} does not match dims {:?} ({n})",
                data.len(),
                dims
            )));
        }
        Ok(Volume { dims, spacing_mm, origin_mm, data })
    }

    pub fn filled(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        origin_mm: [f64; 3],
        value: f32,
    ) -> Result<Self, VolumeError> {
        let n = dims.iter().product();
        Volume::new(dims, spacing_mm, origin_mm, vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin_mm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f32) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    /// Physical position of a voxel center.
    pub fn voxel_position(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let idx = [x as f64, y as f64, z as f64];
        std::array::from_fn(|a| self.origin_mm[a] + idx[a] * self.spacing_mm[a])
    }

    /// One axial plane as a row-major `dims_y × dims_x` grid.
    pub fn axial_slice(&self, z: usize) -> &[f32] {
        let plane = self.dims[0] * self.dims[1];
        &self.data[z * plane..(z + 1) * plane]
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Volume, VolumeError};
use crate::fsutil::atomic_write;
use crate::imaging::resize_bilinear;

pub const SLICE_STACK_MAGIC: &[u8; 4] = b"SLST";

/// Intensity window applied before scaling to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuWindow {
    pub low_hu: f64,
    pub high_hu: f64,
}

impl Default for HuWindow {
    /// Soft-tissue/vessel window: opacified vessels stay distinct from blood.
    fn default() -> Self {
        HuWindow { low_hu: -175.0, high_hu: 275.0 }
    }
}

impl HuWindow {
    #[inline]
    pub fn normalize(&self, hu: f32) -> f32 {
        let lo = self.low_hu as f32;
        let hi = self.high_hu as f32;
        ((hu.clamp(lo, hi) - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

/// Ordered, normalized axial slices of one scan (caudal to cranial).
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStack {
    pub height: usize,
    pub width: usize,
    pub slices: Vec<Vec<f32>>,
    pub source_scan_id: String,
    pub normalization: HuWindow,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    scan_id: String,
    window: HuWindow,
    count: usize,
    height: usize,
    width: usize,
    #[serde(default)]
    provenance: serde_json::Value,
}

/// Windows and normalizes every axial plane of `v`.
pub fn extract_slice_stack(v: &Volume, window: HuWindow, scan_id: &str) -> SliceStack {
    let [nx, ny, nz] = v.dims();
    let slices = (0..nz).map(|z| v.axial_slice(z).iter().map(|&h| window.normalize(h)).collect()).collect();
    SliceStack { height: ny, width: nx, slices, source_scan_id: scan_id.to_string(), normalization: window }
}

impl SliceStack {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Bilinear resize of every slice.
    pub fn resized(&self, height: usize, width: usize) -> SliceStack {
        let slices = self.slices.iter().map(|s| resize_bilinear(s, self.height, self.width, height, width)).collect();
        SliceStack { height, width, slices, ..self.clone() }
    }

    /// `SLST`, u32 count, u32 height, u32 width, then little-endian f32 slices.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.len() * self.height * self.width);
        out.extend_from_slice(SLICE_STACK_MAGIC);
        for n in [self.len(), self.height, self.width] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for s in &self.slices {
            for v in s {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], scan_id: &str, window: HuWindow) -> Result<SliceStack, VolumeError> {
        if bytes.len() < 16 || &bytes[..4] != SLICE_STACK_MAGIC {
            return Err(VolumeError::StackFormat("missing SLST magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (count, height, width) = (word(1), word(2), word(3));
        let plane = height * width;
        let expected = count.checked_mul(plane).and_then(|n| n.checked_mul(4)).and_then(|n| n.checked_add(16));
        if expected != Some(bytes.len()) || plane == 0 {
            return Err(VolumeError::StackFormat(format!(
                "{} bytes for {count} slices of {height}x{width}",
                bytes.len()
            )));
        }
        let values: Vec<f32> =
            bytes[16..].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let slices = values.chunks_exact(plane).map(<[f32]>::to_vec).collect();
        Ok(SliceStack { height, width, slices, source_scan_id: scan_id.to_string(), normalization: window })
    }

    pub fn file_paths(dir: &Path, scan_id: &str) -> (PathBuf, PathBuf) {
        (dir.join(format!("{scan_id}.slst")), dir.join(format!("{scan_id}.slst.json")))
    }

    /// Writes the binary stack and its JSON sidecar into `dir`.
    pub fn write_to_dir(&self, dir: &Path, provenance: serde_json::Value) -> Result<PathBuf, VolumeError> {
        let (bin, json) = Self::file_paths(dir, &self.source_scan_id);
        let sidecar = Sidecar {
            scan_id: self.source_scan_id.clone(),
            window: self.normalization,
            count: self.len(),
            height: self.height,
            width: self.width,
            provenance,
        };
        atomic_write(&bin, &self.to_bytes())?;
        let text = serde_json::to_string_pretty(&sidecar).map_err(|e| VolumeError::StackFormat(e.to_string()))?;
        atomic_write(&json, text.as_bytes())?;
        Ok(bin)
    }

    pub fn read_from_dir(dir: &Path, scan_id: &str) -> Result<SliceStack, VolumeError> {
        let (bin, json) = Self::file_paths(dir, scan_id);
        Self::read_file(&bin, Some(&json))
    }

    /// Reads a `.slst` file; the sidecar defaults to `<file>.json`.
    pub fn read_file(bin: &Path, sidecar: Option<&Path>) -> Result<SliceStack, VolumeError> {
        let default_sidecar = PathBuf::from(format!("{}.json", bin.display()));
        let json_path = sidecar.unwrap_or(&default_sidecar);
        let meta: Sidecar = serde_json::from_slice(&std::fs::read(json_path)?)
            .map_err(|e| VolumeError::StackFormat(format!("{}: {e}", json_path.display())))?;
        let stack = Self::from_bytes(&std::fs::read(bin)?, &meta.scan_id, meta.window)?;
        if (stack.len(), stack.height, stack.width) != (meta.count, meta.height, meta.width) {
            return Err(VolumeError::StackFormat(format!("{} disagrees with its sidecar", bin.display())));
        }
        Ok(stack)
    }
}

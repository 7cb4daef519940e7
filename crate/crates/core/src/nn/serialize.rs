//! `.dcmodel` files: `DCMODEL1`, a little-endian `u32` header length, a JSON
//! header, the little-endian `f32` weight blob and a CRC32 of the blob.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{count_params, ModelSpec, Network, NnError};
use crate::volume::{HuWindow, PreprocessConfig};

pub const MAGIC: &[u8; 8] = b"DCMODEL1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub dims: Vec<usize>,
    /// Offset into the blob, in elements.
    pub offset: usize,
    pub len: usize,
    pub trainable: bool,
}

/// Everything besides weights that travels with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub window: HuWindow,
    pub preprocessing: Option<PreprocessConfig>,
    #[serde(default)]
    pub training: serde_json::Value,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl Default for ModelMetadata {
    fn default() -> Self {
        ModelMetadata {
            window: HuWindow::default(),
            preprocessing: None,
            training: serde_json::Value::Null,
            provenance: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub arrays: Vec<ArrayEntry>,
    pub total_params: usize,
    pub trainable_params: usize,
    pub metadata: ModelMetadata,
}

pub fn serialize(net: &Network<f32>, metadata: &ModelMetadata) -> Vec<u8> {
    let mut arrays = Vec::new();
    let mut blob = Vec::new();
    let mut offset = 0;
    for (name, t, trainable) in net.arrays() {
        arrays.push(ArrayEntry { name, dims: t.dims().to_vec(), offset, len: t.len(), trainable });
        offset += t.len();
        for v in &t.values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let (total, trainable) = net.param_counts();
    let header = ModelHeader {
        format_version: FORMAT_VERSION,
        spec: net.spec().clone(),
        arrays,
        total_params: total,
        trainable_params: trainable,
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec_pretty(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    out.extend_from_slice(&crc32fast::hash(&blob).to_le_bytes());
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, NnError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| NnError::Format("truncated file".into()))
}

pub fn deserialize(bytes: &[u8]) -> Result<(Network<f32>, ModelHeader), NnError> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(NnError::Format("not a model file".into()));
    }
    let header_len = read_u32(bytes, 8)? as usize;
    let json = bytes.get(12..12 + header_len).ok_or_else(|| NnError::Format("truncated header".into()))?;
    let raw: serde_json::Value = serde_json::from_slice(json).map_err(|e| NnError::Format(format!("header: {e}")))?;
    let version = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(NnError::SpecVersionUnsupported(version));
    }
    let header: ModelHeader = serde_json::from_value(raw).map_err(|e| NnError::Format(format!("header: {e}")))?;
    let blob_start = 12 + header_len;
    let n_values: usize = header.arrays.iter().map(|a| a.len).sum();
    let blob_end = blob_start + 4 * n_values;
    if bytes.len() != blob_end + 4 {
        return Err(NnError::Format(format!(
            "expected {} bytes for {n_values} weights plus checksum, found {}",
            blob_end + 4 - blob_start,
            bytes.len().saturating_sub(blob_start)
        )));
    }
    let blob = &bytes[blob_start..blob_end];
    let expected = read_u32(bytes, blob_end)?;
    let actual = crc32fast::hash(blob);
    if expected != actual {
        return Err(NnError::ChecksumMismatch { expected, actual });
    }
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for a in &header.arrays {
        if a.offset + a.len > n_values || a.dims.iter().product::<usize>() != a.len {
            return Err(NnError::Format(format!("array {} has inconsistent extent", a.name)));
        }
        let vals = blob[4 * a.offset..4 * (a.offset + a.len)]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(vals);
    }
    let net = Network::from_arrays(header.spec.clone(), arrays)?;
    for (entry, (name, t, trainable)) in header.arrays.iter().zip(net.arrays()) {
        if entry.name != name || entry.dims != t.dims() || entry.trainable != trainable {
            return Err(NnError::Format(format!("array {} does not match the spec layout ({name})", entry.name)));
        }
    }
    let counts = count_params(&header.spec)?;
    if counts.total != header.total_params || counts.trainable != header.trainable_params {
        return Err(NnError::Format("parameter counts disagree with the spec".into()));
    }
    Ok((net, header))
}

pub fn write_model_file(path: &Path, net: &Network<f32>, metadata: &ModelMetadata) -> Result<(), NnError> {
    crate::fsutil::atomic_write(path, &serialize(net, metadata))
        .map_err(|e| NnError::Io { path: path.display().to_string(), message: e.to_string() })
}

pub fn read_model_file(path: &Path) -> Result<(Network<f32>, ModelHeader), NnError> {
    let bytes =
        std::fs::read(path).map_err(|e| NnError::Io { path: path.display().to_string(), message: e.to_string() })?;
    deserialize(&bytes)
}

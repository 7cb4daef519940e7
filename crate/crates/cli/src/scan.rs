//! Loading raw scans (NRRD, DICOM file or series directory) and slice stacks.

use std::path::Path;

use deepcontrast_core::dicom::{assemble_series, load_series_dir, parse_dicom_file, series_to_volume};
use deepcontrast_core::nn::ModelHeader;
use deepcontrast_core::volume::nrrd::{read_nrrd, read_nrrd_file};
use deepcontrast_core::volume::{preprocess_volume, PreprocessConfig};
use deepcontrast_core::{SliceStack, Volume};

use crate::provenance::{digest_path, sha256_hex, InputDigest};
use crate::CliError;

fn extension(path: &Path) -> String {
    path.extension().map(|e| e.to_string_lossy().to_lowercase()).unwrap_or_default()
}

/// Reads a raw scan and digests every file it was built from.
pub fn load_volume(path: &Path) -> Result<(Volume, Vec<InputDigest>), CliError> {
    if path.is_dir() {
        let digests = digest_path(path)?;
        let series = load_series_dir(path).map_err(|e| CliError::data(path, e))?;
        let vol = series_to_volume(&series).map_err(|e| CliError::data(path, e))?;
        return Ok((vol, digests));
    }
    if extension(path) == "nhdr" {
        let digests = digest_path(path)?;
        return Ok((read_nrrd_file(path).map_err(|e| CliError::data(path, e))?, digests));
    }
    let bytes = std::fs::read(path).map_err(|e| CliError::data(path, e))?;
    let digest = InputDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) };
    let vol = if bytes.starts_with(b"NRRD") {
        read_nrrd(&bytes).map_err(|e| CliError::data(path, e))?
    } else {
        let slice = parse_dicom_file(&bytes).map_err(|e| CliError::data(path, e))?;
        let series = assemble_series(vec![slice]).map_err(|e| CliError::data(path, e))?;
        series_to_volume(&series).map_err(|e| CliError::data(path, e))?
    };
    Ok((vol, vec![digest]))
}

pub fn is_stack(path: &Path) -> bool {
    extension(path) == "slst"
}

pub fn scan_id_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scan".into())
}

/// A model-ready slice stack: read directly for `.slst` files, otherwise
/// preprocessed with the settings the model was trained on.
pub fn load_stack(
    path: &Path,
    header: &ModelHeader,
    fallback: &PreprocessConfig,
) -> Result<(SliceStack, Vec<InputDigest>), CliError> {
    let (stack, digests) = if is_stack(path) {
        let sidecar = std::path::PathBuf::from(format!("{}.json", path.display()));
        let stack = SliceStack::read_file(path, None).map_err(|e| CliError::data(path, e))?;
        let mut digests = digest_path(path)?;
        if sidecar.exists() {
            digests.extend(digest_path(&sidecar)?);
        }
        (stack, digests)
    } else {
        let (vol, digests) = load_volume(path)?;
        let cfg = header.metadata.preprocessing.clone().unwrap_or_else(|| fallback.clone());
        let stack = preprocess_volume(&vol, &cfg, &scan_id_of(path)).map_err(|e| CliError::data(path, e))?;
        (stack, digests)
    };
    check_dims(&stack, header, &path.display().to_string())?;
    Ok((stack, digests))
}

pub fn check_dims(stack: &SliceStack, header: &ModelHeader, what: &str) -> Result<(), CliError> {
    let [h, w, _] = header.spec.input;
    if (stack.height, stack.width) != (h, w) {
        return Err(CliError::Data(format!(
            "{what}: slices are {}x{} but the model expects {h}x{w}",
            stack.height, stack.width
        )));
    }
    Ok(())
}

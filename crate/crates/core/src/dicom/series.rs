use std::path::Path;

use super::{parse_dicom_file, DicomError, DicomSlice};
use crate::volume::Volume;

const SPACING_TOLERANCE_MM: f64 = 1e-6;
const Z_GAP_TOLERANCE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct DicomSeries {
    pub series_id: String,
    /// Sorted by ascending z of the image position.
    pub slices: Vec<DicomSlice>,
}

pub fn assemble_series(mut slices: Vec<DicomSlice>) -> Result<DicomSeries, DicomError> {
    let first = slices.first().ok_or(DicomError::EmptySeries)?;
    let (rows, cols, spacing) = (first.rows, first.cols, first.pixel_spacing_mm);
    for s in &slices {
        if s.rows != rows || s.cols != cols {
            return Err(DicomError::InconsistentGeometry(format!(
                "slice of {}x{} in a {rows}x{cols} series",
                s.rows, s.cols
            )));
        }
        if (0..2).any(|a| (s.pixel_spacing_mm[a] - spacing[a]).abs() > SPACING_TOLERANCE_MM) {
            return Err(DicomError::InconsistentGeometry(format!(
                "pixel spacing {:?} differs from {spacing:?}",
                s.pixel_spacing_mm
            )));
        }
    }
    slices.sort_by(|a, b| a.image_position_mm[2].total_cmp(&b.image_position_mm[2]));
    if let Some(w) =
        slices.windows(2).find(|w| w[1].image_position_mm[2] - w[0].image_position_mm[2] < SPACING_TOLERANCE_MM)
    {
        return Err(DicomError::DuplicateZ(w[0].image_position_mm[2]));
    }
    let series_id = slices[0].series_instance_uid.clone().unwrap_or_else(|| "unknown".to_string());
    Ok(DicomSeries { series_id, slices })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Stacks a series into an HU volume. Spacing is (column spacing, row
/// spacing, median z gap); a single-slice series uses its thickness as z.
pub fn series_to_volume(series: &DicomSeries) -> Result<Volume, DicomError> {
    let first = series.slices.first().ok_or(DicomError::EmptySeries)?;
    let z: Vec<f64> = series.slices.iter().map(|s| s.image_position_mm[2]).collect();
    let dz = if z.len() == 1 {
        first.slice_thickness_mm
    } else {
        let gaps: Vec<f64> = z.windows(2).map(|w| w[1] - w[0]).collect();
        let mut sorted = gaps.clone();
        sorted.sort_by(f64::total_cmp);
        let med = median(&sorted);
        let max_deviation = gaps.iter().map(|g| (g - med).abs()).fold(0.0, f64::max);
        if max_deviation > Z_GAP_TOLERANCE * med {
            return Err(DicomError::NonUniformZGap { median: med, max_deviation });
        }
        med
    };

    let mut data = Vec::with_capacity(first.rows * first.cols * series.slices.len());
    for s in &series.slices {
        data.extend(s.hounsfield_pixels());
    }
    Volume::new(
        [first.cols, first.rows, series.slices.len()],
        [first.pixel_spacing_mm[1], first.pixel_spacing_mm[0], dz],
        first.image_position_mm,
        data,
    )
    .map_err(|e| DicomError::InconsistentGeometry(e.to_string()))
}

/// Reads every regular file in `dir` as a DICOM slice and assembles them.
pub fn load_series_dir(dir: &Path) -> Result<DicomSeries, DicomError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| DicomError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut slices = Vec::with_capacity(paths.len());
    for p in paths {
        let bytes = std::fs::read(&p).map_err(|e| DicomError::Io(format!("{}: {e}", p.display())))?;
        let slice = parse_dicom_file(&bytes)
            .map_err(|e| DicomError::File { path: p.display().to_string(), source: Box::new(e) })?;
        slices.push(slice);
    }
    assemble_series(slices)
}

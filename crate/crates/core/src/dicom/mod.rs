//! A scoped DICOM Part-10 reader for uncompressed little-endian CT slices,
//! plus the reference writer used to build fixtures.

mod parse;
mod series;
mod writer;

pub use parse::parse_dicom_file;
pub use series::{assemble_series, load_series_dir, series_to_volume, DicomSeries};
pub use writer::{write_dicom_file, write_dicom_file_with};

use std::fmt;
use thiserror::Error;

pub const EXPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2.1";
pub const IMPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2";

/// A (group, element) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag(pub u16, pub u16);

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:04X},{:04X})", self.0, self.1)
    }
}

pub mod tags {
    use super::Tag;

    pub const TRANSFER_SYNTAX_UID: Tag = Tag(0x0002, 0x0010);
    pub const CONTRAST_BOLUS_AGENT: Tag = Tag(0x0018, 0x0010);
    pub const SLICE_THICKNESS: Tag = Tag(0x0018, 0x0050);
    pub const SERIES_INSTANCE_UID: Tag = Tag(0x0020, 0x000E);
    pub const IMAGE_POSITION_PATIENT: Tag = Tag(0x0020, 0x0032);
    pub const ROWS: Tag = Tag(0x0028, 0x0010);
    pub const COLUMNS: Tag = Tag(0x0028, 0x0011);
    pub const PIXEL_SPACING: Tag = Tag(0x0028, 0x0030);
    pub const BITS_ALLOCATED: Tag = Tag(0x0028, 0x0100);
    pub const PIXEL_REPRESENTATION: Tag = Tag(0x0028, 0x0103);
    pub const RESCALE_INTERCEPT: Tag = Tag(0x0028, 0x1052);
    pub const RESCALE_SLOPE: Tag = Tag(0x0028, 0x1053);
    pub const PIXEL_DATA: Tag = Tag(0x7FE0, 0x0010);
}

#[derive(Debug, Error, PartialEq)]
pub enum DicomError {
    #[error("not a DICOM Part-10 file (missing DICM magic)")]
    MissingMagic,
    #[error("unsupported transfer syntax {0}")]
    UnsupportedTransferSyntax(String),
    #[error("missing required tag {0}")]
    MissingRequiredTag(Tag),
    #[error("pixel data holds {actual} bytes, expected {expected}")]
    PixelLengthMismatch { expected: usize, actual: usize },
    #[error("unsupported pixel format: {0}")]
    UnsupportedPixelFormat(String),
    #[error("truncated element at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("malformed value for {tag}: {reason}")]
    MalformedValue { tag: Tag, reason: String },
    #[error("stored pixel {0} does not fit in 16 bits")]
    PixelOutOfRange(i32),
    #[error("empty series")]
    EmptySeries,
    #[error("inconsistent slice geometry: {0}")]
    InconsistentGeometry(String),
    #[error("two slices share z = {0} mm")]
    DuplicateZ(f64),
    #[error("slice gap deviates by {max_deviation} mm from median gap {median} mm")]
    NonUniformZGap { median: f64, max_deviation: f64 },
    #[error("{path}: {source}")]
    File { path: String, source: Box<DicomError> },
    #[error("I/O error: {0}")]
    Io(String),
}

/// One CT slice with the tags this toolkit needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DicomSlice {
    pub rows: usize,
    pub cols: usize,
    /// DICOM order: (row spacing, column spacing), i.e. (y, x).
    pub pixel_spacing_mm: [f64; 2],
    pub slice_thickness_mm: f64,
    pub image_position_mm: [f64; 3],
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    /// `None` when (0018,0010) is absent from the file.
    pub bolus_agent_raw: Option<String>,
    pub series_instance_uid: Option<String>,
    /// Row-major, `rows × cols`.
    pub stored_pixels: Vec<i32>,
}

impl DicomSlice {
    pub fn to_hounsfield(&self, stored: i32) -> f64 {
        self.rescale_slope * stored as f64 + self.rescale_intercept
    }

    pub fn hounsfield_pixels(&self) -> Vec<f32> {
        self.stored_pixels.iter().map(|&s| self.to_hounsfield(s) as f32).collect()
    }
}

//! Reference writer producing minimal Part-10 CT files. Values are padded to
//! even length (space for text, NUL for UIDs) and elements are emitted in
//! ascending tag order.

use super::{tags, DicomError, DicomSlice, Tag, EXPLICIT_VR_LITTLE_ENDIAN, IMPLICIT_VR_LITTLE_ENDIAN};

const CT_IMAGE_STORAGE: &str = "1.2.840.10008.5.1.4.1.1.2";

struct Out {
    bytes: Vec<u8>,
    implicit: bool,
}

impl Out {
    fn element(&mut self, tag: Tag, vr: &[u8; 2], value: &[u8]) {
        debug_assert!(value.len().is_multiple_of(2));
        self.bytes.extend_from_slice(&tag.0.to_le_bytes());
        self.bytes.extend_from_slice(&tag.1.to_le_bytes());
        let long = matches!(vr, b"OB" | b"OW" | b"UN" | b"SQ" | b"UT");
        if self.implicit && tag.0 != 0x0002 {
            self.bytes.extend_from_slice(&(value.len() as u32).to_le_bytes());
        } else if long {
            self.bytes.extend_from_slice(vr);
            self.bytes.extend_from_slice(&[0, 0]);
            self.bytes.extend_from_slice(&(value.len() as u32).to_le_bytes());
        } else {
            self.bytes.extend_from_slice(vr);
            self.bytes.extend_from_slice(&(value.len() as u16).to_le_bytes());
        }
        self.bytes.extend_from_slice(value);
    }

    fn text(&mut self, tag: Tag, vr: &[u8; 2], text: &str) {
        let mut v = text.as_bytes().to_vec();
        if v.len() % 2 == 1 {
            v.push(if vr == b"UI" { 0 } else { b' ' });
        }
        self.element(tag, vr, &v);
    }

    fn us(&mut self, tag: Tag, value: u16) {
        self.element(tag, b"US", &value.to_le_bytes());
    }

    fn ds(&mut self, tag: Tag, values: &[f64]) {
        let s: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
        self.text(tag, b"DS", &s.join("\\"));
    }
}

/// Writes `slice` as explicit-VR little-endian.
pub fn write_dicom_file(slice: &DicomSlice) -> Result<Vec<u8>, DicomError> {
    write_dicom_file_with(slice, false)
}

/// Writes `slice` with either explicit- or implicit-VR little-endian data set
/// encoding. The file meta group is always explicit.
pub fn write_dicom_file_with(slice: &DicomSlice, implicit: bool) -> Result<Vec<u8>, DicomError> {
    if slice.stored_pixels.len() != slice.rows * slice.cols {
        return Err(DicomError::PixelLengthMismatch {
            expected: slice.rows * slice.cols * 2,
            actual: slice.stored_pixels.len() * 2,
        });
    }
    let signed = slice.stored_pixels.iter().any(|&p| p < 0);
    let mut pixel_bytes = Vec::with_capacity(slice.stored_pixels.len() * 2);
    for &p in &slice.stored_pixels {
        let raw = if signed {
            i16::try_from(p).map_err(|_| DicomError::PixelOutOfRange(p))? as u16
        } else {
            u16::try_from(p).map_err(|_| DicomError::PixelOutOfRange(p))?
        };
        pixel_bytes.extend_from_slice(&raw.to_le_bytes());
    }

    let syntax = if implicit { IMPLICIT_VR_LITTLE_ENDIAN } else { EXPLICIT_VR_LITTLE_ENDIAN };
    let mut meta = Out { bytes: Vec::new(), implicit: false };
    meta.element(Tag(0x0002, 0x0001), b"OB", &[0, 1]);
    meta.text(Tag(0x0002, 0x0002), b"UI", CT_IMAGE_STORAGE);
    meta.text(tags::TRANSFER_SYNTAX_UID, b"UI", syntax);

    let mut out = Out { bytes: vec![0u8; 128], implicit };
    out.bytes.extend_from_slice(b"DICM");
    out.element(Tag(0x0002, 0x0000), b"UL", &(meta.bytes.len() as u32).to_le_bytes());
    out.bytes.extend_from_slice(&meta.bytes);

    out.text(Tag(0x0008, 0x0060), b"CS", "CT");
    if let Some(bolus) = &slice.bolus_agent_raw {
        out.text(tags::CONTRAST_BOLUS_AGENT, b"LO", bolus);
    }
    out.ds(tags::SLICE_THICKNESS, &[slice.slice_thickness_mm]);
    if let Some(uid) = &slice.series_instance_uid {
        out.text(tags::SERIES_INSTANCE_UID, b"UI", uid);
    }
    out.ds(tags::IMAGE_POSITION_PATIENT, &slice.image_position_mm);
    out.us(Tag(0x0028, 0x0002), 1);
    out.text(Tag(0x0028, 0x0004), b"CS", "MONOCHROME2");
    out.us(tags::ROWS, slice.rows as u16);
    out.us(tags::COLUMNS, slice.cols as u16);
    out.ds(tags::PIXEL_SPACING, &slice.pixel_spacing_mm);
    out.us(tags::BITS_ALLOCATED, 16);
    out.us(Tag(0x0028, 0x0101), 16);
    out.us(Tag(0x0028, 0x0102), 15);
    out.us(tags::PIXEL_REPRESENTATION, signed as u16);
    out.ds(tags::RESCALE_INTERCEPT, &[slice.rescale_intercept]);
    out.ds(tags::RESCALE_SLOPE, &[slice.rescale_slope]);
    out.element(tags::PIXEL_DATA, b"OW", &pixel_bytes);
    Ok(out.bytes)
}

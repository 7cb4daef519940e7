use std::collections::BTreeMap;

use super::{tags, DicomError, DicomSlice, Tag, EXPLICIT_VR_LITTLE_ENDIAN, IMPLICIT_VR_LITTLE_ENDIAN};

const PREAMBLE_LEN: usize = 128;
const UNDEFINED_LENGTH: u32 = 0xFFFF_FFFF;
const ITEM: Tag = Tag(0xFFFE, 0xE000);
const ITEM_DELIMITER: Tag = Tag(0xFFFE, 0xE00D);
const SEQUENCE_DELIMITER: Tag = Tag(0xFFFE, 0xE0DD);
const MAX_NESTING: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Syntax {
    Explicit,
    Implicit,
}

/// VRs with a 2-byte reserved field and a 32-bit length in explicit encoding.
fn has_long_length(vr: [u8; 2]) -> bool {
    matches!(&vr, b"OB" | b"OD" | b"OF" | b"OL" | b"OV" | b"OW" | b"SQ" | b"SV" | b"UC" | b"UN" | b"UR" | b"UT" | b"UV")
}

/// The implicit-VR dictionary, limited to the tags this reader extracts.
fn implicit_vr(tag: Tag) -> Option<[u8; 2]> {
    Some(match tag {
        tags::ROWS | tags::COLUMNS | tags::BITS_ALLOCATED | tags::PIXEL_REPRESENTATION => *b"US",
        tags::PIXEL_SPACING
        | tags::SLICE_THICKNESS
        | tags::IMAGE_POSITION_PATIENT
        | tags::RESCALE_SLOPE
        | tags::RESCALE_INTERCEPT => *b"DS",
        tags::CONTRAST_BOLUS_AGENT => *b"LO",
        tags::SERIES_INSTANCE_UID => *b"UI",
        tags::PIXEL_DATA => *b"OW",
        _ => return None,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DicomError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(DicomError::Truncated { offset: self.pos }),
        }
    }

    fn u16(&mut self) -> Result<u16, DicomError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DicomError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn peek_group(&self) -> Option<u16> {
        self.buf.get(self.pos..self.pos + 2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn at_end(&self) -> bool {
        self.pos >= self.buf.len()
    }
}

struct Element<'a> {
    tag: Tag,
    /// `None` for undefined-length values, which have already been skipped.
    value: Option<&'a [u8]>,
}

fn read_element<'a>(r: &mut Reader<'a>, syntax: Syntax, depth: usize) -> Result<Element<'a>, DicomError> {
    let start = r.pos;
    let tag = Tag(r.u16()?, r.u16()?);
    let (length, vr) = if tag.0 == 0xFFFE {
        (r.u32()?, None)
    } else {
        match syntax {
            Syntax::Explicit => {
                let vr_bytes = r.take(2)?;
                let vr = [vr_bytes[0], vr_bytes[1]];
                if !vr.iter().all(u8::is_ascii_uppercase) {
                    return Err(DicomError::MalformedValue { tag, reason: format!("invalid VR at byte {start}") });
                }
                if has_long_length(vr) {
                    r.take(2)?;
                    (r.u32()?, Some(vr))
                } else {
                    (r.u16()? as u32, Some(vr))
                }
            }
            Syntax::Implicit => (r.u32()?, implicit_vr(tag)),
        }
    };

    if length == UNDEFINED_LENGTH {
        if tag == tags::PIXEL_DATA {
            return Err(DicomError::UnsupportedTransferSyntax("encapsulated pixel data".into()));
        }
        let is_sequence = vr.is_none_or(|v| &v == b"SQ" || &v == b"UN");
        if !is_sequence {
            return Err(DicomError::MalformedValue { tag, reason: "undefined length on non-sequence".into() });
        }
        skip_sequence(r, syntax, depth + 1)?;
        return Ok(Element { tag, value: None });
    }
    let value = r.take(length as usize)?;
    Ok(Element { tag, value: Some(value) })
}

/// Skips an undefined-length sequence up to and including its delimiter.
fn skip_sequence(r: &mut Reader<'_>, syntax: Syntax, depth: usize) -> Result<(), DicomError> {
    if depth > MAX_NESTING {
        return Err(DicomError::MalformedValue { tag: ITEM, reason: "sequence nesting too deep".into() });
    }
    loop {
        let offset = r.pos;
        let tag = Tag(r.u16()?, r.u16()?);
        let length = r.u32()?;
        match tag {
            SEQUENCE_DELIMITER => return Ok(()),
            ITEM if length == UNDEFINED_LENGTH => loop {
                let el = read_element(r, syntax, depth + 1)?;
                if el.tag == ITEM_DELIMITER {
                    break;
                }
            },
            ITEM => {
                r.take(length as usize)?;
            }
            _ => {
                return Err(DicomError::MalformedValue {
                    tag,
                    reason: format!("unexpected element inside sequence at byte {offset}"),
                })
            }
        }
    }
}

fn ascii_text(bytes: &[u8]) -> String {
    let trimmed_len = bytes.iter().rposition(|&b| b != b' ' && b != 0).map_or(0, |p| p + 1);
    bytes[..trimmed_len].iter().map(|&b| if b.is_ascii() { b as char } else { char::REPLACEMENT_CHARACTER }).collect()
}

fn decode_ds(tag: Tag, bytes: &[u8]) -> Result<Vec<f64>, DicomError> {
    let text = ascii_text(bytes);
    text.split('\\')
        .map(|part| {
            let p = part.trim_matches(|c: char| c == ' ' || c == '\0');
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DicomError::MalformedValue { tag, reason: format!("bad decimal string {p:?}") })
        })
        .collect()
}

fn decode_us(tag: Tag, bytes: &[u8]) -> Result<u16, DicomError> {
    match bytes {
        [a, b] => Ok(u16::from_le_bytes([*a, *b])),
        _ => Err(DicomError::MalformedValue { tag, reason: format!("US value of {} bytes", bytes.len()) }),
    }
}

fn decode_ds_n<const N: usize>(tag: Tag, bytes: &[u8]) -> Result<[f64; N], DicomError> {
    let v = decode_ds(tag, bytes)?;
    <[f64; N]>::try_from(v.as_slice())
        .map_err(|_| DicomError::MalformedValue { tag, reason: format!("expected {N} values, found {}", v.len()) })
}

fn required<'a>(map: &BTreeMap<Tag, &'a [u8]>, tag: Tag) -> Result<&'a [u8], DicomError> {
    map.get(&tag).copied().ok_or(DicomError::MissingRequiredTag(tag))
}

/// Parses an uncompressed little-endian Part-10 file into a [`DicomSlice`].
///
/// Unknown elements are skipped by length; only top-level elements are
/// retained.
pub fn parse_dicom_file(bytes: &[u8]) -> Result<DicomSlice, DicomError> {
    if bytes.len() < PREAMBLE_LEN + 4 || &bytes[PREAMBLE_LEN..PREAMBLE_LEN + 4] != b"DICM" {
        return Err(DicomError::MissingMagic);
    }
    let mut r = Reader { buf: bytes, pos: PREAMBLE_LEN + 4 };

    let mut transfer_syntax = None;
    while r.peek_group() == Some(0x0002) {
        let el = read_element(&mut r, Syntax::Explicit, 0)?;
        if el.tag == tags::TRANSFER_SYNTAX_UID {
            transfer_syntax = el.value.map(ascii_text);
        }
    }
    let transfer_syntax = transfer_syntax.ok_or(DicomError::MissingRequiredTag(tags::TRANSFER_SYNTAX_UID))?;
    let syntax = match transfer_syntax.as_str() {
        EXPLICIT_VR_LITTLE_ENDIAN => Syntax::Explicit,
        IMPLICIT_VR_LITTLE_ENDIAN => Syntax::Implicit,
        other => return Err(DicomError::UnsupportedTransferSyntax(other.to_string())),
    };

    let mut elements = BTreeMap::new();
    while !r.at_end() {
        let el = read_element(&mut r, syntax, 0)?;
        if let Some(value) = el.value {
            elements.insert(el.tag, value);
        }
    }

    let rows = decode_us(tags::ROWS, required(&elements, tags::ROWS)?)? as usize;
    let cols = decode_us(tags::COLUMNS, required(&elements, tags::COLUMNS)?)? as usize;
    if rows == 0 || cols == 0 {
        return Err(DicomError::MalformedValue { tag: tags::ROWS, reason: format!("{rows}x{cols} image") });
    }
    let pixel_spacing_mm = decode_ds_n::<2>(tags::PIXEL_SPACING, required(&elements, tags::PIXEL_SPACING)?)?;
    if pixel_spacing_mm.iter().any(|&s| s <= 0.0) {
        return Err(DicomError::MalformedValue { tag: tags::PIXEL_SPACING, reason: "non-positive spacing".into() });
    }
    let [slice_thickness_mm] = decode_ds_n::<1>(tags::SLICE_THICKNESS, required(&elements, tags::SLICE_THICKNESS)?)?;
    if slice_thickness_mm <= 0.0 {
        return Err(DicomError::MalformedValue { tag: tags::SLICE_THICKNESS, reason: "non-positive thickness".into() });
    }
    let image_position_mm =
        decode_ds_n::<3>(tags::IMAGE_POSITION_PATIENT, required(&elements, tags::IMAGE_POSITION_PATIENT)?)?;
    let [rescale_slope] = decode_ds_n::<1>(tags::RESCALE_SLOPE, required(&elements, tags::RESCALE_SLOPE)?)?;
    let [rescale_intercept] = decode_ds_n::<1>(tags::RESCALE_INTERCEPT, required(&elements, tags::RESCALE_INTERCEPT)?)?;
    let bolus_agent_raw = elements.get(&tags::CONTRAST_BOLUS_AGENT).map(|v| ascii_text(v));
    let series_instance_uid = elements.get(&tags::SERIES_INSTANCE_UID).map(|v| ascii_text(v));

    let bits = match elements.get(&tags::BITS_ALLOCATED) {
        Some(v) => decode_us(tags::BITS_ALLOCATED, v)?,
        None => 16,
    };
    if bits != 16 {
        return Err(DicomError::UnsupportedPixelFormat(format!("{bits} bits allocated")));
    }
    let signed = match elements.get(&tags::PIXEL_REPRESENTATION) {
        Some(v) => decode_us(tags::PIXEL_REPRESENTATION, v)? == 1,
        None => false,
    };
    let pixels = required(&elements, tags::PIXEL_DATA)?;
    let expected = rows * cols * 2;
    if pixels.len() != expected {
        return Err(DicomError::PixelLengthMismatch { expected, actual: pixels.len() });
    }
    let stored_pixels = pixels
        .chunks_exact(2)
        .map(|b| if signed { i16::from_le_bytes([b[0], b[1]]) as i32 } else { u16::from_le_bytes([b[0], b[1]]) as i32 })
        .collect();

    Ok(DicomSlice {
        rows,
        cols,
        pixel_spacing_mm,
        slice_thickness_mm,
        image_position_mm,
        rescale_slope,
        rescale_intercept,
        bolus_agent_raw,
        series_instance_uid,
        stored_pixels,
    })
}

//! Attached-header NRRD volumes: 3D, axis-aligned, `short` or `float`
//! samples, raw or gzip encoded, little endian.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Volume, VolumeError};
use crate::fsutil::atomic_write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NrrdType {
    Short,
    Float,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NrrdEncoding {
    Raw,
    Gzip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NrrdOptions {
    pub value_type: NrrdType,
    pub encoding: NrrdEncoding,
    /// Emitted as `#` comment lines after the magic.
    pub comments: Vec<String>,
}

impl Default for NrrdOptions {
    fn default() -> Self {
        NrrdOptions { value_type: NrrdType::Float, encoding: NrrdEncoding::Raw, comments: Vec::new() }
    }
}

fn unsupported(field: &str, value: &str) -> VolumeError {
    VolumeError::UnsupportedNrrdField { field: field.to_string(), value: value.to_string() }
}

fn fmt_vec(v: [f64; 3]) -> String {
    format!("({},{},{})", v[0], v[1], v[2])
}

pub fn write_nrrd(v: &Volume) -> Vec<u8> {
    write_nrrd_with(v, &NrrdOptions::default())
}

pub fn write_nrrd_with(v: &Volume, opts: &NrrdOptions) -> Vec<u8> {
    let [sx, sy, sz] = v.spacing();
    let [nx, ny, nz] = v.dims();
    let mut header = String::from("NRRD0004\n");
    for c in &opts.comments {
        for line in c.lines() {
            header.push_str(&format!("# {line}\n"));
        }
    }
    header.push_str(match opts.value_type {
        NrrdType::Short => "type: short\n",
        NrrdType::Float => "type: float\n",
    });
    header.push_str("dimension: 3\nspace: left-posterior-superior\n");
    header.push_str(&format!("sizes: {nx} {ny} {nz}\n"));
    header.push_str(&format!(
        "space directions: {} {} {}\n",
        fmt_vec([sx, 0.0, 0.0]),
        fmt_vec([0.0, sy, 0.0]),
        fmt_vec([0.0, 0.0, sz])
    ));
    header.push_str("kinds: domain domain domain\nendian: little\n");
    header.push_str(match opts.encoding {
        NrrdEncoding::Raw => "encoding: raw\n",
        NrrdEncoding::Gzip => "encoding: gzip\n",
    });
    header.push_str(&format!("space origin: {}\n\n", fmt_vec(v.origin())));

    let mut raw = Vec::with_capacity(v.data().len() * 4);
    match opts.value_type {
        NrrdType::Short => {
            for &h in v.data() {
                let s = h.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
                raw.extend_from_slice(&s.to_le_bytes());
            }
        }
        NrrdType::Float => {
            for &h in v.data() {
                raw.extend_from_slice(&h.to_le_bytes());
            }
        }
    }
    let mut out = header.into_bytes();
    match opts.encoding {
        NrrdEncoding::Raw => out.extend_from_slice(&raw),
        NrrdEncoding::Gzip => {
            let mut enc = GzEncoder::new(out, Compression::fast());
            enc.write_all(&raw).expect("in-memory gzip");
            out = enc.finish().expect("in-memory gzip");
        }
    }
    out
}

fn parse_vector(text: &str) -> Option<[f64; 3]> {
    let inner = text.trim().strip_prefix('(')?.strip_suffix(')')?;
    let parts: Vec<f64> = inner.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    parts.try_into().ok()
}

fn parse_directions(value: &str) -> Result<[f64; 3], VolumeError> {
    let vectors: Vec<&str> = value.split(')').map(str::trim).filter(|s| !s.is_empty()).collect();
    if vectors.len() != 3 {
        return Err(unsupported("space directions", value));
    }
    let mut spacing = [0.0; 3];
    for (axis, v) in vectors.iter().enumerate() {
        let vec = parse_vector(&format!("{v})")).ok_or_else(|| unsupported("space directions", value))?;
        let off_axis = (0..3).filter(|&a| a != axis).any(|a| vec[a] != 0.0);
        if off_axis || !(vec[axis] > 0.0) {
            return Err(unsupported("space directions", value));
        }
        spacing[axis] = vec[axis];
    }
    Ok(spacing)
}

pub fn read_nrrd(bytes: &[u8]) -> Result<Volume, VolumeError> {
    if !bytes.starts_with(b"NRRD000") {
        return Err(VolumeError::Encoding("missing NRRD magic".into()));
    }
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| VolumeError::Encoding("header not terminated by a blank line".into()))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| VolumeError::Encoding("non-UTF-8 header".into()))?
            .trim_end_matches('\r');
        pos += end + 1;
        if line.is_empty() {
            break;
        }
        lines.push(line);
    }

    let mut value_type = None;
    let mut dims = None;
    let mut spacing = None;
    let mut origin = [0.0; 3];
    let mut encoding = NrrdEncoding::Raw;
    for line in lines.iter().skip(1) {
        if line.starts_with('#') || line.contains(":=") {
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            return Err(VolumeError::Encoding(format!("malformed header line {line:?}")));
        };
        let value = value.trim();
        match key.trim() {
            "type" => {
                value_type = Some(match value {
                    "short" | "short int" | "signed short" | "signed short int" | "int16" | "int16_t" => {
                        NrrdType::Short
                    }
                    "float" => NrrdType::Float,
                    _ => return Err(unsupported("type", value)),
                })
            }
            "dimension" if value != "3" => return Err(unsupported("dimension", value)),
            "sizes" => {
                let s: Vec<usize> = value
                    .split_whitespace()
                    .map(|t| t.parse().ok())
                    .collect::<Option<_>>()
                    .ok_or_else(|| unsupported("sizes", value))?;
                dims = Some(<[usize; 3]>::try_from(s).map_err(|_| unsupported("sizes", value))?);
            }
            "space directions" => spacing = Some(parse_directions(value)?),
            "spacings" => {
                let s: Vec<f64> = value
                    .split_whitespace()
                    .map(|t| t.parse().ok())
                    .collect::<Option<_>>()
                    .ok_or_else(|| unsupported("spacings", value))?;
                spacing = Some(<[f64; 3]>::try_from(s).map_err(|_| unsupported("spacings", value))?);
            }
            "space origin" => origin = parse_vector(value).ok_or_else(|| unsupported("space origin", value))?,
            "encoding" => {
                encoding = match value {
                    "raw" => NrrdEncoding::Raw,
                    "gzip" | "gz" => NrrdEncoding::Gzip,
                    _ => return Err(unsupported("encoding", value)),
                }
            }
            "endian" if value != "little" => return Err(unsupported("endian", value)),
            "data file" | "datafile" => return Err(unsupported("data file", value)),
            "byte skip" | "byteskip" | "line skip" | "lineskip" if value != "0" => {
                return Err(unsupported(key.trim(), value))
            }
            _ => {}
        }
    }
    let value_type = value_type.ok_or_else(|| VolumeError::Encoding("missing `type` field".into()))?;
    let dims = dims.ok_or_else(|| VolumeError::Encoding("missing `sizes` field".into()))?;
    let spacing = spacing.unwrap_or([1.0; 3]);

    let payload = &bytes[pos..];
    let decoded;
    let raw = match encoding {
        NrrdEncoding::Raw => payload,
        NrrdEncoding::Gzip => {
            let mut buf = Vec::new();
            GzDecoder::new(payload).read_to_end(&mut buf).map_err(|e| VolumeError::Encoding(format!("gzip: {e}")))?;
            decoded = buf;
            &decoded[..]
        }
    };
    let n: usize = dims.iter().product();
    let width = match value_type {
        NrrdType::Short => 2,
        NrrdType::Float => 4,
    };
    if raw.len() != n * width {
        return Err(VolumeError::Encoding(format!("payload holds {} bytes, expected {}", raw.len(), n * width)));
    }
    let data = match value_type {
        NrrdType::Short => raw.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]]) as f32).collect(),
        NrrdType::Float => raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect(),
    };
    Volume::new(dims, spacing, origin, data)
}

pub fn read_nrrd_file(path: &Path) -> Result<Volume, VolumeError> {
    read_nrrd(&std::fs::read(path)?)
}

pub fn write_nrrd_file(path: &Path, v: &Volume, opts: &NrrdOptions) -> Result<(), VolumeError> {
    atomic_write(path, &write_nrrd_with(v, opts))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_constant_volume() {
        let v = Volume::filled([2, 2, 2], [1.0, 1.0, 3.0], [-1.5, 2.0, 0.25], 100.0).unwrap();
        assert_eq!(read_nrrd(&write_nrrd(&v)).unwrap(), v);
    }

    #[test]
    fn gzip_twin_matches_raw() {
        let data: Vec<f32> = (0..60).map(|i| (i as f32 * 17.0) % 300.0 - 150.0).collect();
        let v = Volume::new([5, 4, 3], [0.8, 0.8, 2.5], [0.0; 3], data).unwrap();
        for value_type in [NrrdType::Short, NrrdType::Float] {
            let raw = NrrdOptions { value_type, encoding: NrrdEncoding::Raw, comments: vec![] };
            let gz = NrrdOptions { encoding: NrrdEncoding::Gzip, ..raw.clone() };
            let a = read_nrrd(&write_nrrd_with(&v, &raw)).unwrap();
            let b = read_nrrd(&write_nrrd_with(&v, &gz)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn oblique_directions_rejected() {
        let text = "NRRD0004\ntype: float\ndimension: 3\nsizes: 1 1 1\n\
                    space directions: (0.9,0.1,0) (0,1,0) (0,0,1)\nencoding: raw\n\n";
        let mut bytes = text.as_bytes().to_vec();
        bytes.extend_from_slice(&0f32.to_le_bytes());
        match read_nrrd(&bytes) {
            Err(VolumeError::UnsupportedNrrdField { field, .. }) => assert_eq!(field, "space directions"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn comments_and_detached_data() {
        let v = Volume::filled([1, 1, 2], [1.0; 3], [0.0; 3], -3.0).unwrap();
        let opts = NrrdOptions { comments: vec!["config: a=1".into()], ..Default::default() };
        assert_eq!(read_nrrd(&write_nrrd_with(&v, &opts)).unwrap(), v);
        let text = "NRRD0004\ntype: float\ndimension: 3\nsizes: 1 1 1\ndata file: x.raw\n\n";
        assert!(matches!(read_nrrd(text.as_bytes()), Err(VolumeError::UnsupportedNrrdField { .. })));
    }
}

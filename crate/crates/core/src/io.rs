//! Binary and text output formats.
//!
//! * WFLD (pre-images): `b"WFLD"`, u32 version = 1, u32 n_tone, u32 n, then
//!   `n_tone · n · n` complex values as interleaved little-endian f64 re/im,
//!   ordered (tone, row, col).
//! * WLBL (labels): `b"WLBL"`, u32 n, then `n · n` label bytes row-major.
//!   All integers are little-endian.
//! * PGM: binary P5 grayscale, 8-bit.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::FieldSet;
use crate::invert::PreImage;
use crate::linalg::C64;
use crate::scene::LabelGrid;

pub const WFLD_MAGIC: &[u8; 4] = b"WFLD";
pub const WLBL_MAGIC: &[u8; 4] = b"WLBL";
pub const WFLD_VERSION: u32 = 1;

pub fn encode_wfld(pre: &PreImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pre.chi.len() * 16);
    out.extend_from_slice(WFLD_MAGIC);
    out.extend_from_slice(&WFLD_VERSION.to_le_bytes());
    out.extend_from_slice(&(pre.n_tone as u32).to_le_bytes());
    out.extend_from_slice(&(pre.n as u32).to_le_bytes());
    for c in &pre.chi {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
    out
}

fn format_err(kind: &'static str, reason: impl Into<String>) -> Error {
    Error::Format { kind, reason: reason.into() }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_wfld(bytes: &[u8]) -> Result<PreImage> {
    if bytes.len() < 16 || &bytes[..4] != WFLD_MAGIC {
        return Err(format_err("WFLD", "missing magic"));
    }
    let version = read_u32(bytes, 4);
    if version != WFLD_VERSION {
        return Err(format_err("WFLD", format!("unsupported version {version}")));
    }
    let n_tone = read_u32(bytes, 8) as usize;
    let n = read_u32(bytes, 12) as usize;
    let count = n_tone.checked_mul(n).and_then(|v| v.checked_mul(n)).ok_or_else(|| format_err("WFLD", "dimensions overflow"))?;
    if bytes.len() != 16 + count * 16 {
        return Err(format_err("WFLD", format!("expected {} payload bytes, found {}", count * 16, bytes.len() - 16)));
    }
    let chi = bytes[16..]
        .chunks_exact(16)
        .map(|c| C64::new(f64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap())))
        .collect();
    PreImage::new(n_tone, n, chi).map_err(|e| format_err("WFLD", e.to_string()))
}

pub fn write_wfld(path: impl AsRef<Path>, pre: &PreImage) -> Result<()> {
    std::fs::write(path, encode_wfld(pre))?;
    Ok(())
}

pub fn read_wfld(path: impl AsRef<Path>) -> Result<PreImage> {
    decode_wfld(&std::fs::read(path)?)
}

pub fn encode_wlbl(labels: &LabelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.labels.len());
    out.extend_from_slice(WLBL_MAGIC);
    out.extend_from_slice(&(labels.n as u32).to_le_bytes());
    out.extend_from_slice(&labels.labels);
    out
}

pub fn decode_wlbl(bytes: &[u8]) -> Result<LabelGrid> {
    if bytes.len() < 8 || &bytes[..4] != WLBL_MAGIC {
        return Err(format_err("WLBL", "missing magic"));
    }
    let n = read_u32(bytes, 4) as usize;
    if bytes.len() != 8 + n * n {
        return Err(format_err("WLBL", format!("expected {} label bytes, found {}", n * n, bytes.len() - 8)));
    }
    Ok(LabelGrid { n, labels: bytes[8..].to_vec() })
}

pub fn write_wlbl(path: impl AsRef<Path>, labels: &LabelGrid) -> Result<()> {
    std::fs::write(path, encode_wlbl(labels))?;
    Ok(())
}

pub fn read_wlbl(path: impl AsRef<Path>) -> Result<LabelGrid> {
    decode_wlbl(&std::fs::read(path)?)
}

/// 8-bit P5 image of `values` (row-major `rows × cols`), min–max scaled.
pub fn encode_pgm(values: &[f64], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if values.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::Shape(format!("{} values cannot form a {rows}×{cols} image", values.len())));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 }));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, values: &[f64], rows: usize, cols: usize) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_pgm(values, rows, cols)?)?;
    Ok(())
}

/// Parsed P5 image: `(rows, cols, pixels)`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("PGM", "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(format_err("PGM", "not a P5 image"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format_err("PGM", format!("bad header field {s}")));
    let (cols, rows) = (parse(&fields[1])?, parse(&fields[2])?);
    let pixels = bytes.get(pos..).unwrap_or_default().to_vec();
    if pixels.len() != rows * cols {
        return Err(format_err("PGM", "pixel count does not match header"));
    }
    Ok((rows, cols, pixels))
}

/// JSON view of a [`FieldSet`]: arrays indexed `[tone][tx][rx]` of `[re, im]`,
/// with per-cell fields `[tone][tx][cell]` when requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldsJson {
    pub tones_hz: Vec<f64>,
    pub n: usize,
    pub e_s_rx: Vec<Vec<Vec<C64>>>,
    pub e_total_rx: Vec<Vec<Vec<C64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_t_cells: Option<Vec<Vec<Vec<C64>>>>,
}

impl FieldsJson {
    pub fn from_fields(fs: &FieldSet, include_cells: bool) -> Self {
        let rows = |m: &crate::linalg::ComplexMatrix| (0..m.rows()).map(|r| m.row(r).to_vec()).collect::<Vec<_>>();
        Self {
            tones_hz: fs.tones.iter().map(|t| t.freq_hz).collect(),
            n: fs.n,
            e_s_rx: fs.tones.iter().map(|t| rows(&t.e_s_rx)).collect(),
            e_total_rx: fs.tones.iter().map(|t| rows(&t.e_total_rx)).collect(),
            e_t_cells: include_cells.then(|| fs.tones.iter().map(|t| rows(&t.e_t_cells)).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wfld_header_layout() {
        let pre = PreImage::new(2, 2, (0..8).map(|i| C64::new(i as f64, -(i as f64))).collect()).unwrap();
        let bytes = encode_wfld(&pre);
        assert_eq!(&bytes[..4], b"WFLD");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 8 * 16);
        assert_eq!(&bytes[32..40], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[40..48], &(-1.0f64).to_le_bytes());
        let back = decode_wfld(&bytes).unwrap();
        assert_eq!(back.chi, pre.chi);
        assert!(decode_wfld(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(decode_wfld(&bad).is_err());
    }

    #[test]
    fn wlbl_roundtrip() {
        let l = LabelGrid { n: 3, labels: vec![0, 1, 2, 3, 0, 0, 1, 1, 2] };
        let bytes = encode_wlbl(&l);
        assert_eq!(&bytes[..8], &[b'W', b'L', b'B', b'L', 3, 0, 0, 0]);
        assert_eq!(decode_wlbl(&bytes).unwrap(), l);
        assert!(decode_wlbl(b"WLBL\x02\0\0\0\0").is_err());
    }

    #[test]
    fn pgm_scaling() {
        let img = encode_pgm(&[1.0, 2.0, 3.0, 5.0], 2, 2).unwrap();
        assert!(img.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&img[img.len() - 4..], &[0, 64, 128, 255]);
        let flat = encode_pgm(&[4.0; 6], 2, 3).unwrap();
        assert!(flat.ends_with(&[0; 6]));
    }
}

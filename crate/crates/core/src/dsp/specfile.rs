//! Portable float matrix file: an ASCII header line
//! `rows cols frame_rate_hz kind` followed by row-major little-endian f32.

use std::path::Path;

use super::{BinAxis, SpecKind, Spectrogram};
use crate::error::{Error, Result};

pub fn spec_file_bytes(spec: &Spectrogram) -> Vec<u8> {
    let header = format!("{} {} {} {}\n", spec.n_frames(), spec.n_bins(), spec.frame_rate_hz, spec.kind.as_str());
    let mut out = header.into_bytes();
    for &v in spec.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_spec_bytes(bytes: &[u8]) -> Result<Spectrogram> {
    let bad = |m: &str| Error::Decode(format!("spectrogram file: {m}"));
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not UTF-8"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(bad("header needs 4 fields"));
    }
    let rows: usize = fields[0].parse().map_err(|_| bad("rows"))?;
    let cols: usize = fields[1].parse().map_err(|_| bad("cols"))?;
    let rate: f64 = fields[2].parse().map_err(|_| bad("frame_rate_hz"))?;
    let (kind, axis) = match fields[3] {
        "magnitude" => (SpecKind::Magnitude, BinAxis::Index),
        "log_mel" => (SpecKind::LogMel, BinAxis::Mel),
        other => return Err(bad(&format!("unknown kind {other}"))),
    };
    let body = &bytes[nl + 1..];
    if body.len() != rows * cols * 4 {
        return Err(bad(&format!("expected {} data bytes, found {}", rows * cols * 4, body.len())));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Spectrogram::new(values, rows, cols, rate, axis, kind)
}

pub fn write_spec_file(path: &Path, spec: &Spectrogram) -> Result<()> {
    std::fs::write(path, spec_file_bytes(spec))?;
    Ok(())
}

pub fn read_spec_file(path: &Path) -> Result<Spectrogram> {
    read_spec_bytes(&std::fs::read(path)?)
}

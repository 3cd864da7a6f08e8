//! File formats: wavelet coefficients (binary or CSV, each with a JSON
//! header) and grid functions as CSV.
//!
//! Binary layout: the magic bytes `VBWC`, a little-endian `u32` header length,
//! the JSON header, then the coefficients as little-endian `f64` in flat order
//! (level ascending, scaling before mother at level 0, translation ascending).
//! CSV layout: a `# ` line with the JSON header, a column line
//! `level,generator,translation,value`, then one row per coefficient.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wavelet::{Convention, Generator, WaveletCoefficients};

const MAGIC: &[u8; 4] = b"VBWC";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientHeader {
    pub max_level: usize,
    pub convention: Convention,
    pub family_order: usize,
    pub count: usize,
}

impl CoefficientHeader {
    pub fn for_coefficients(coeffs: &WaveletCoefficients, family_order: usize) -> Self {
        CoefficientHeader {
            max_level: coeffs.max_level(),
            convention: coeffs.convention(),
            family_order,
            count: coeffs.len(),
        }
    }
}

pub fn encode_binary(coeffs: &WaveletCoefficients, family_order: usize) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&CoefficientHeader::for_coefficients(coeffs, family_order))?;
    let mut out = Vec::with_capacity(8 + header.len() + 8 * coeffs.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in coeffs.to_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_binary(bytes: &[u8]) -> Result<(CoefficientHeader, WaveletCoefficients)> {
    let bad = |m: &str| Error::InvalidInput(format!("coefficient file: {m}"));
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes")) as usize;
    let body = bytes.get(8..8 + len).ok_or_else(|| bad("truncated header"))?;
    let header: CoefficientHeader = serde_json::from_slice(body)?;
    let data = &bytes[8 + len..];
    if data.len() != 8 * header.count || header.count != 2usize << header.max_level {
        return Err(bad("coefficient count does not match the header"));
    }
    let flat: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    let coeffs = WaveletCoefficients::from_flat(header.convention, &flat)?;
    Ok((header, coeffs))
}

pub fn write_binary(path: &Path, coeffs: &WaveletCoefficients, family_order: usize) -> Result<()> {
    fs::write(path, encode_binary(coeffs, family_order)?)?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<(CoefficientHeader, WaveletCoefficients)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_binary(&bytes)
}

pub fn write_csv<W: Write>(mut out: W, coeffs: &WaveletCoefficients, family_order: usize) -> Result<()> {
    let header = serde_json::to_string(&CoefficientHeader::for_coefficients(coeffs, family_order))?;
    writeln!(out, "# {header}")?;
    writeln!(out, "level,generator,translation,value")?;
    for idx in WaveletCoefficients::indices(coeffs.max_level()) {
        let g = match idx.generator {
            Generator::F => "F",
            Generator::M => "M",
        };
        writeln!(out, "{},{},{},{:e}", idx.level, g, idx.translation, coeffs.get(idx))?;
    }
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<(CoefficientHeader, WaveletCoefficients)> {
    let bad = |m: String| Error::InvalidInput(format!("coefficient CSV: {m}"));
    let mut lines = BufReader::new(input).lines();
    let first = lines.next().ok_or_else(|| bad("empty file".into()))??;
    let json = first.strip_prefix("# ").ok_or_else(|| bad("missing header line".into()))?;
    let header: CoefficientHeader = serde_json::from_str(json)?;
    lines.next().ok_or_else(|| bad("missing column line".into()))??;
    let mut flat = Vec::with_capacity(header.count);
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = line
            .rsplit(',')
            .next()
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| bad(format!("line {}: unreadable value", n + 3)))?;
        flat.push(value);
    }
    if flat.len() != header.count {
        return Err(bad(format!("{} rows for {} coefficients", flat.len(), header.count)));
    }
    let coeffs = WaveletCoefficients::from_flat(header.convention, &flat)?;
    Ok((header, coeffs))
}

/// `x,value` rows for samples on the grid `i / n`.
pub fn write_grid_csv<W: Write>(mut out: W, values: &[f64]) -> Result<()> {
    writeln!(out, "x,value")?;
    let n = values.len();
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{:e},{:e}", i as f64 / n as f64, v)?;
    }
    Ok(())
}

/// `x,value` rows at arbitrary points.
pub fn write_points_csv<W: Write>(mut out: W, points: &[f64], values: &[f64]) -> Result<()> {
    writeln!(out, "x,value")?;
    for (x, v) in points.iter().zip(values) {
        writeln!(out, "{x:e},{v:e}")?;
    }
    Ok(())
}

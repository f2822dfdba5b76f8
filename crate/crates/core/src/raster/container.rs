//! Length-prefixed binary container shared by rasters and checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"FMSRBIN\x01"
//! 8       8     u64    header length in bytes (N)
//! 16      N     UTF-8 JSON header object
//! 16+N    ...   raw payload, interpretation given by the header
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"FMSRBIN\x01";
/// Magic plus the header length field.
pub const PREAMBLE_LEN: usize = 16;
const MAX_HEADER_LEN: u64 = 1 << 24;

/// Element encoding of a payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    U16,
    F32,
    F64,
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "u8" => Ok(DType::U8),
            "u16" => Ok(DType::U16),
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(Error::invalid(format!("unknown dtype {other:?}"))),
        }
    }
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::U16 => 2,
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    /// Encodes `values` little-endian. Integer dtypes require exactly
    /// representable values; `f32` requires values that survive the cast.
    pub fn encode(self, values: &[f64], out: &mut Vec<u8>) -> Result<()> {
        out.reserve(values.len() * self.size());
        for (i, &v) in values.iter().enumerate() {
            let unrepresentable =
                || Error::invalid(format!("value {v} at index {i} is not representable as {self:?}"));
            match self {
                DType::U8 => {
                    if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                        return Err(unrepresentable());
                    }
                    out.push(v as u8);
                }
                DType::U16 => {
                    if v.fract() != 0.0 || !(0.0..=65535.0).contains(&v) {
                        return Err(unrepresentable());
                    }
                    out.extend_from_slice(&(v as u16).to_le_bytes());
                }
                DType::F32 => {
                    let f = v as f32;
                    if f as f64 != v {
                        return Err(unrepresentable());
                    }
                    out.extend_from_slice(&f.to_le_bytes());
                }
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        Ok(())
    }

    pub fn decode(self, bytes: &[u8]) -> Vec<f64> {
        match self {
            DType::U8 => bytes.iter().map(|&b| b as f64).collect(),
            DType::U16 => bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
                .collect(),
            DType::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        }
    }
}

pub fn write_container(path: &Path, header: &serde_json::Value, payload: &[u8]) -> Result<()> {
    let header_bytes = serde_json::to_vec(header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<(serde_json::Value, Vec<u8>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut preamble = [0u8; PREAMBLE_LEN];
    r.read_exact(&mut preamble)
        .map_err(|_| Error::format(format!("{}: file shorter than preamble", path.display())))?;
    if preamble[..8] != MAGIC {
        return Err(Error::format(format!("{}: bad magic bytes", path.display())));
    }
    let header_len = u64::from_le_bytes(preamble[8..16].try_into().unwrap());
    if header_len > MAX_HEADER_LEN {
        return Err(Error::format(format!(
            "{}: header length {header_len} exceeds limit",
            path.display()
        )));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::format(format!("{}: truncated header", path.display())))?;
    let header: serde_json::Value = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::format(format!("{}: header is not valid JSON: {e}", path.display())))?;
    if !header.is_object() {
        return Err(Error::format(format!("{}: header must be a JSON object", path.display())));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    Ok((header, payload))
}

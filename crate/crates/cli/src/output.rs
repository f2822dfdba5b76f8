use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use fmsr_core::{read_raster, write_raster, DType, GeoChip};
use serde::Serialize;
use serde_json::Value;

use crate::error::{at, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// A file when a path is given, standard output otherwise.
pub fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::File {
            path: p.to_path_buf(),
            source: e.into(),
        })?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

pub fn write_json(path: Option<&Path>, value: &impl Serialize) -> CliResult<()> {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// JSON has no infinities; they are written as the strings `"inf"`/`"-inf"`.
pub fn number(v: f64) -> Value {
    if v.is_nan() {
        Value::String("nan".into())
    } else if v.is_infinite() {
        Value::String(if v > 0.0 { "inf" } else { "-inf" }.into())
    } else {
        Value::from(v)
    }
}

pub fn optional_number(v: Option<f64>) -> Value {
    v.map_or(Value::Null, number)
}

pub fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn load_chip(path: &Path) -> CliResult<GeoChip> {
    read_raster(path).map_err(at(path))
}

/// Writes `chip` in `dtype`, rounding values to the nearest representable one.
pub fn save_chip(chip: &GeoChip, path: &Path, dtype: DType) -> CliResult<()> {
    let quantize: fn(f64) -> f64 = match dtype {
        DType::F64 => return write_raster(chip, path, dtype).map_err(at(path)),
        DType::F32 => |v| v as f32 as f64,
        DType::U8 | DType::U16 => f64::round,
    };
    let rounded = GeoChip {
        tensor: chip.tensor.map(quantize),
        ..chip.clone()
    };
    write_raster(&rounded, path, dtype).map_err(at(path))
}

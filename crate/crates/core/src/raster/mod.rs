//! Georeferenced chips and their on-disk format.

pub mod container;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use container::DType;
use container::{read_container, write_container};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

/// A tensor with ground geometry and an optional validity mask.
///
/// `nodata_mask[i]` is `true` where pixel `i` (row-major over `H×W`) has no data.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoChip {
    pub tensor: ImageTensor,
    pub pixel_size_m: f64,
    pub origin_xy: (f64, f64),
    pub nodata_mask: Option<Vec<bool>>,
}

impl GeoChip {
    pub fn new(
        tensor: ImageTensor,
        pixel_size_m: f64,
        origin_xy: (f64, f64),
        nodata_mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        let chip = Self {
            tensor,
            pixel_size_m,
            origin_xy,
            nodata_mask,
        };
        chip.validate()?;
        Ok(chip)
    }

    /// A chip at the origin with unit pixel size and no mask.
    pub fn plain(tensor: ImageTensor) -> Self {
        Self {
            tensor,
            pixel_size_m: 1.0,
            origin_xy: (0.0, 0.0),
            nodata_mask: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_size_m.is_finite() && self.pixel_size_m > 0.0) {
            return Err(Error::invalid(format!(
                "pixel size must be positive, got {}",
                self.pixel_size_m
            )));
        }
        if !(self.origin_xy.0.is_finite() && self.origin_xy.1.is_finite()) {
            return Err(Error::invalid("origin must be finite"));
        }
        if let Some(mask) = &self.nodata_mask {
            let plane = self.tensor.shape().plane();
            if mask.len() != plane {
                return Err(Error::shape(format!(
                    "nodata mask has {} entries, raster plane has {plane}",
                    mask.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RasterHeader {
    kind: String,
    channels: usize,
    height: usize,
    width: usize,
    dtype: DType,
    pixel_size_m: f64,
    origin_xy: [f64; 2],
    nodata_mask: bool,
}

pub fn write_raster(chip: &GeoChip, path: &Path, dtype: DType) -> Result<()> {
    chip.validate()?;
    let shape = chip.tensor.shape();
    let header = RasterHeader {
        kind: "raster".into(),
        channels: shape.channels,
        height: shape.height,
        width: shape.width,
        dtype,
        pixel_size_m: chip.pixel_size_m,
        origin_xy: [chip.origin_xy.0, chip.origin_xy.1],
        nodata_mask: chip.nodata_mask.is_some(),
    };
    let mut payload = Vec::new();
    dtype.encode(chip.tensor.data(), &mut payload)?;
    if let Some(mask) = &chip.nodata_mask {
        payload.extend(mask.iter().map(|&m| m as u8));
    }
    write_container(path, &json!(header), &payload)
}

pub fn read_raster(path: &Path) -> Result<GeoChip> {
    read_raster_with_dtype(path).map(|(chip, _)| chip)
}

/// Reads a raster and reports the dtype it was stored with.
pub fn read_raster_with_dtype(path: &Path) -> Result<(GeoChip, DType)> {
    let (header, payload) = read_container(path)?;
    let header: RasterHeader = serde_json::from_value(header)
        .map_err(|e| Error::format(format!("{}: bad raster header: {e}", path.display())))?;
    if header.kind != "raster" {
        return Err(Error::format(format!(
            "{}: expected a raster, found kind {:?}",
            path.display(),
            header.kind
        )));
    }
    let shape = Shape::new(header.channels, header.height, header.width);
    shape
        .validate()
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let data_len = shape.len() * header.dtype.size();
    let mask_len = if header.nodata_mask { shape.plane() } else { 0 };
    if payload.len() != data_len + mask_len {
        return Err(Error::format(format!(
            "{}: header declares {shape} {:?}{} ({} payload bytes) but payload has {} bytes",
            path.display(),
            header.dtype,
            if header.nodata_mask { " + mask" } else { "" },
            data_len + mask_len,
            payload.len()
        )));
    }
    let data = header.dtype.decode(&payload[..data_len]);
    let tensor = ImageTensor::new(shape, data)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let nodata_mask = header.nodata_mask.then(|| {
        payload[data_len..]
            .iter()
            .map(|&b| b != 0)
            .collect::<Vec<_>>()
    });
    let chip = GeoChip::new(
        tensor,
        header.pixel_size_m,
        (header.origin_xy[0], header.origin_xy[1]),
        nodata_mask,
    )
    .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    Ok((chip, header.dtype))
}

/// Single-band categorical raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRaster {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

impl LabelRaster {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::shape(format!(
                "label raster {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn to_chip(&self, pixel_size_m: f64, origin_xy: (f64, f64)) -> Result<GeoChip> {
        let tensor = ImageTensor::new(
            Shape::new(1, self.height, self.width),
            self.labels.iter().map(|&l| l as f64).collect(),
        )?;
        GeoChip::new(tensor, pixel_size_m, origin_xy, None)
    }

    pub fn from_chip(chip: &GeoChip) -> Result<Self> {
        let t = &chip.tensor;
        if t.channels() != 1 {
            return Err(Error::shape(format!(
                "label raster must have one channel, got {}",
                t.channels()
            )));
        }
        let labels = t
            .data()
            .iter()
            .map(|&v| {
                if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                    Err(Error::invalid(format!("{v} is not a class id")))
                } else {
                    Ok(v as u32)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(t.height(), t.width(), labels)
    }

    /// Narrowest integer dtype that holds every label.
    pub fn storage_dtype(&self) -> DType {
        if self.labels.iter().all(|&l| l <= u8::MAX as u32) {
            DType::U8
        } else {
            DType::U16
        }
    }
}

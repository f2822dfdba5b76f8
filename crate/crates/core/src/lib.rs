//! Flow-matching and diffusion super-resolution toolkit.
//!
//! Sampling (`flow`, `diffusion`), training objectives (`objectives`,
//! `training`), preprocessing (`resample`), evaluation (`metrics`) and
//! large-raster inference (`tiling`) all operate on [`ImageTensor`].

pub mod classifier;
pub mod diffusion;
pub mod error;
pub mod flow;
pub mod generate;
pub mod metrics;
pub mod nn;
pub mod normalize;
pub mod objectives;
pub mod raster;
pub mod resample;
pub mod rng;
pub mod tensor;
pub mod tiling;
pub mod toy;
pub mod training;

pub use error::{Error, ErrorCategory, Result};
pub use normalize::{denormalize, normalize, NormalizationSpec};
pub use raster::{read_raster, write_raster, DType, GeoChip, LabelRaster};
pub use rng::{gaussian_noise_like, SeededRng};
pub use tensor::{ImageTensor, Shape};

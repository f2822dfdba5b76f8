//! Resampling, radiometric cross-calibration, PCA and compositing.

mod calibrate;
mod composite;
mod lanczos;
mod pca;

pub use calibrate::{apply_calibration, fit_band, fit_cross_calibration, BandCalibration, CalibrationSet};
pub use composite::{composite_chips, masked_mean_composite, Composite};
pub use lanczos::{box_downsample, lanczos_resample, lanczos_scale, mode_downsample, LanczosKernel};
pub use pca::IncrementalPcaModel;

//! Image quality, spectral agreement, knee selection and land cover accuracy.

mod classification;
mod image;
mod knee;
mod spectral;

pub use classification::{
    accumulate_confusion, classification_metrics, ClassMetrics, ClassificationReport, ConfusionMatrix,
    LAND_COVER_CLASSES,
};
pub use image::{psnr, ssim, SsimParams};
pub use knee::{kneedle, Curvature, Direction, KneeResult};
pub use spectral::{spectral_metrics, spectral_metrics_slice, SpectralMetrics, SpectralReport};

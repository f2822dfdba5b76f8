use std::path::{Path, PathBuf};

use fmsr_core::resample::{
    apply_calibration, box_downsample, composite_chips, fit_cross_calibration, IncrementalPcaModel,
};
use fmsr_core::{DType, GeoChip, ImageTensor, Shape};

use crate::config::{options, RunCommand};
use crate::error::{at, required, CliError, CliResult};
use crate::output::{load_chip, save_chip, write_json};

options! {
    CalibrateArgs => CalibrateConfig {
        /// Ratio between the high-resolution and reference pixel sizes.
        factor: usize = 4,
        dtype: DType = DType::F32,
    }
    optional {
        /// High-resolution raster to be calibrated.
        hr: PathBuf,
        /// Coarse reference raster on the aggregated grid.
        reference: PathBuf,
        /// Coefficients JSON.
        out: PathBuf,
        /// Calibrated high-resolution raster.
        calibrated_out: PathBuf,
    }
}

impl RunCommand for CalibrateConfig {
    fn primary_output(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    fn run(&self) -> CliResult<()> {
        let hr_path = required(&self.hr, "hr")?;
        let out = required(&self.out, "out")?;
        let hr = load_chip(hr_path)?;
        let reference = load_chip(required(&self.reference, "reference")?)?;
        let aggregated = box_downsample(&hr.tensor, self.factor).map_err(at(hr_path))?;
        let calibration = fit_cross_calibration(&aggregated, &reference.tensor)?;
        for (b, band) in calibration.bands.iter().enumerate() {
            if band.degenerate {
                log::warn!("band {b} has no variance; identity calibration kept");
            }
        }
        write_json(Some(out), &calibration)?;
        if let Some(path) = &self.calibrated_out {
            let calibrated = apply_calibration(&hr.tensor, &calibration)?;
            let chip = GeoChip::new(calibrated, hr.pixel_size_m, hr.origin_xy, hr.nodata_mask.clone())?;
            save_chip(&chip, path, self.dtype)?;
        }
        Ok(())
    }
}

options! {
    CompositeArgs => CompositeConfig {
        /// Aligned rasters to average.
        #[arg(num_args = 1..)]
        inputs: Vec<PathBuf> = Vec::new(),
        dtype: DType = DType::F32,
    }
    optional {
        out: PathBuf,
        /// Per-pixel count of valid observations.
        counts_out: PathBuf,
    }
}

impl RunCommand for CompositeConfig {
    fn primary_output(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    fn run(&self) -> CliResult<()> {
        let out = required(&self.out, "out")?;
        if self.inputs.is_empty() {
            return Err(CliError::usage("--inputs needs at least one raster"));
        }
        let chips = self
            .inputs
            .iter()
            .map(|p| load_chip(p))
            .collect::<CliResult<Vec<_>>>()?;
        let (pixel, origin) = (chips[0].pixel_size_m, chips[0].origin_xy);
        let shape = chips[0].tensor.shape();
        let composite = composite_chips(&chips)?;
        let counts = composite.counts.clone();
        save_chip(&composite.into_chip(pixel, origin)?, out, self.dtype)?;
        if let Some(path) = &self.counts_out {
            let tensor = ImageTensor::new(
                Shape::new(1, shape.height, shape.width),
                counts.iter().map(|&c| c as f64).collect(),
            )?;
            let dtype = if counts.iter().all(|&c| c <= u8::MAX as u32) { DType::U8 } else { DType::U16 };
            save_chip(&GeoChip::new(tensor, pixel, origin, None)?, path, dtype)?;
        }
        Ok(())
    }
}

options! {
    PcaArgs => PcaConfig {
        /// Rasters whose pixels are the samples and bands the features.
        #[arg(num_args = 1..)]
        inputs: Vec<PathBuf> = Vec::new(),
        components: usize = 3,
        /// Pixels per incremental update.
        batch_size: usize = 4096,
    }
    optional {
        out: PathBuf,
    }
}

impl RunCommand for PcaConfig {
    fn primary_output(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    fn run(&self) -> CliResult<()> {
        let out = required(&self.out, "out")?;
        if self.inputs.is_empty() || self.batch_size == 0 {
            return Err(CliError::usage("--inputs and a positive --batch-size are required"));
        }
        let mut model: Option<IncrementalPcaModel> = None;
        for path in &self.inputs {
            let chip = load_chip(path)?;
            let t = &chip.tensor;
            let (bands, plane) = (t.channels(), t.shape().plane());
            let model = match &mut model {
                Some(m) if m.n_features() != bands => {
                    return Err(CliError::usage(format!(
                        "{}: {bands} bands, earlier inputs had {}",
                        path.display(),
                        m.n_features()
                    )))
                }
                Some(m) => m,
                None => model.insert(IncrementalPcaModel::new(bands, self.components)?),
            };
            let valid: Vec<usize> = (0..plane)
                .filter(|&p| chip.nodata_mask.as_ref().is_none_or(|m| !m[p]))
                .collect();
            for chunk in valid.chunks(self.batch_size) {
                let rows: Vec<f64> = chunk
                    .iter()
                    .flat_map(|&p| (0..bands).map(move |b| t.data()[b * plane + p]))
                    .collect();
                model.partial_fit(&rows).map_err(at(path))?;
            }
        }
        let model = model.expect("at least one input");
        log::info!(
            "{} samples, explained variance ratio {:?}",
            model.samples_seen(),
            model.explained_variance_ratio()
        );
        write_json(Some(out), &model)
    }
}

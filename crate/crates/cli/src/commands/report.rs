use std::io::Write;
use std::path::{Path, PathBuf};

use fmsr_core::metrics::{
    accumulate_confusion, classification_metrics, kneedle, psnr, spectral_metrics, ssim, ConfusionMatrix,
    Curvature, Direction, SpectralMetrics, SsimParams, LAND_COVER_CLASSES,
};
use fmsr_core::{ImageTensor, LabelRaster, Shape};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{options, RunCommand};
use crate::error::{required, CliError, CliResult};
use crate::output::{cell, load_chip, number, optional_number, sink, write_json, ReportFormat};

fn band(image: &ImageTensor, c: usize) -> CliResult<ImageTensor> {
    Ok(ImageTensor::new(
        Shape::new(1, image.height(), image.width()),
        image.channel(c).to_vec(),
    )?)
}

fn spectral_json(m: &SpectralMetrics) -> Value {
    json!({
        "r2": optional_number(m.r2),
        "rmse": number(m.rmse),
        "mae": number(m.mae),
        "mape": optional_number(m.mape),
        "mape_skipped": m.mape_skipped,
        "n": m.n,
    })
}

options! {
    MetricsArgs => MetricsConfig {
        /// Dynamic range used by PSNR and SSIM.
        range: f64 = 2.0,
        #[arg(value_enum)]
        format: ReportFormat = ReportFormat::Json,
    }
    optional {
        /// Reference raster.
        a: PathBuf,
        /// Raster compared against the reference.
        b: PathBuf,
        out: PathBuf,
    }
}

impl RunCommand for MetricsConfig {
    fn primary_output(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    fn run(&self) -> CliResult<()> {
        let a = load_chip(required(&self.a, "a")?)?.tensor;
        let b = load_chip(required(&self.b, "b")?)?.tensor;
        if a.shape() != b.shape() {
            return Err(CliError::usage(format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape())));
        }
        let params = SsimParams {
            range: self.range,
            ..SsimParams::default()
        };
        let spectral = spectral_metrics(&a, &b)?;
        let mut per_band = Vec::new();
        for c in 0..a.channels() {
            let (x, y) = (band(&a, c)?, band(&b, c)?);
            per_band.push((psnr(&x, &y, self.range)?, ssim(&x, &y, &params)?, spectral.bands[c]));
        }
        let overall = (psnr(&a, &b, self.range)?, ssim(&a, &b, &params)?, spectral.pooled);

        match self.format {
            ReportFormat::Json => {
                let bands: Vec<Value> = per_band
                    .iter()
                    .enumerate()
                    .map(|(i, (p, s, m))| {
                        let mut v = json!({ "band": i, "psnr": number(*p), "ssim": number(*s) });
                        v.as_object_mut().unwrap().extend(spectral_json(m).as_object().unwrap().clone());
                        v
                    })
                    .collect();
                let mut report = json!({ "psnr": number(overall.0), "ssim": number(overall.1) });
                let map = report.as_object_mut().unwrap();
                map.extend(spectral_json(&overall.2).as_object().unwrap().clone());
                map.insert("bands".into(), Value::Array(bands));
                write_json(self.out.as_deref(), &report)
            }
            ReportFormat::Csv => {
                let mut w = csv::Writer::from_writer(sink(self.out.as_deref())?);
                w.write_record(["band", "psnr", "ssim", "r2", "rmse", "mae", "mape", "mape_skipped", "n"])?;
                let rows = per_band
                    .iter()
                    .enumerate()
                    .map(|(i, row)| (i.to_string(), row))
                    .chain(std::iter::once(("pooled".to_string(), &overall)));
                for (name, (p, s, m)) in rows {
                    w.write_record([
                        name,
                        p.to_string(),
                        s.to_string(),
                        cell(m.r2),
                        m.rmse.to_string(),
                        m.mae.to_string(),
                        cell(m.mape),
                        m.mape_skipped.to_string(),
                        m.n.to_string(),
                    ])?;
                }
                w.flush()?;
                Ok(())
            }
        }
    }
}

#[derive(Deserialize)]
struct CurvePoint {
    x: f64,
    y: f64,
}

options! {
    KneeArgs => KneeConfig {
        sensitivity: f64 = 1.0,
        curvature: Curvature = Curvature::Concave,
        direction: Direction = Direction::Increasing,
    }
    optional {
        /// CSV with `x` and `y` columns.
        input: PathBuf,
        out: PathBuf,
    }
}

impl RunCommand for KneeConfig {
    fn primary_output(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    fn run(&self) -> CliResult<()> {
        let mut reader = csv::Reader::from_path(required(&self.input, "input")?)?;
        let points = reader
            .deserialize::<CurvePoint>()
            .collect::<Result<Vec<_>, _>>()?;
        let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
        let result = kneedle(&xs, &ys, self.sensitivity, self.curvature, self.direction)?;
        if result.knee_index.is_none() {
            log::warn!("no knee found");
        }
        write_json(self.out.as_deref(), &result)
    }
}

#[derive(Deserialize)]
struct LabelledPoint {
    truth: u32,
    pred: u32,
}

options! {
    EvalLcArgs => EvalLcConfig {
        classes: usize = 5,
        #[arg(value_enum)]
        format: ReportFormat = ReportFormat::Json,
    }
    optional {
        /// Predicted label raster.
        pred: PathBuf,
        /// Reference label raster.
        truth: PathBuf,
        /// CSV with `truth` and `pred` columns, instead of rasters.
        points: PathBuf,
        out: PathBuf,
    }
}

impl EvalLcConfig {
    fn confusion(&self) -> CliResult<ConfusionMatrix> {
        match (&self.pred, &self.truth, &self.points) {
            (Some(pred), Some(truth), None) => {
                let pred = LabelRaster::from_chip(&load_chip(pred)?)?;
                let truth = LabelRaster::from_chip(&load_chip(truth)?)?;
                if (pred.height, pred.width) != (truth.height, truth.width) {
                    return Err(CliError::usage("prediction and truth rasters differ in size"));
                }
                Ok(accumulate_confusion(&pred.labels, &truth.labels, self.classes)?)
            }
            (None, None, Some(points)) => {
                let mut cm = ConfusionMatrix::new(self.classes)?;
                for row in csv::Reader::from_path(points)?.deserialize::<LabelledPoint>() {
                    let row = row?;
                    cm.record(row.truth, row.pred)?;
                }
                Ok(cm)
            }
            _ => Err(CliError::usage("give either --pred and --truth, or --points")),
        }
    }

    fn class_name(&self, k: usize) -> String {
        if self.classes == LAND_COVER_CLASSES.len() {
            LAND_COVER_CLASSES[k].to_string()
        } else {
            k.to_string()
        }
    }
}

impl RunCommand for EvalLcConfig {
    fn primary_output(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    fn run(&self) -> CliResult<()> {
        let cm = self.confusion()?;
        let report = classification_metrics(&cm)?;
        match self.format {
            ReportFormat::Json => {
                let per_class: Vec<Value> = report
                    .per_class
                    .iter()
                    .enumerate()
                    .map(|(k, m)| {
                        json!({
                            "class": self.class_name(k),
                            "users_accuracy": optional_number(m.users_accuracy),
                            "producers_accuracy": optional_number(m.producers_accuracy),
                            "f1": optional_number(m.f1),
                            "true_count": m.true_count,
                            "predicted_count": m.predicted_count,
                        })
                    })
                    .collect();
                let value = json!({
                    "classes": (0..self.classes).map(|k| self.class_name(k)).collect::<Vec<_>>(),
                    "confusion_matrix": cm.rows(),
                    "overall_accuracy": report.overall_accuracy,
                    "macro_users_accuracy": report.macro_users_accuracy,
                    "macro_producers_accuracy": report.macro_producers_accuracy,
                    "macro_f1": report.macro_f1,
                    "absent_classes": report.absent_classes,
                    "per_class": per_class,
                });
                write_json(self.out.as_deref(), &value)
            }
            ReportFormat::Csv => {
                let mut out = sink(self.out.as_deref())?;
                {
                    let mut w = csv::Writer::from_writer(&mut out);
                    let mut header = vec!["class".to_string()];
                    header.extend((0..self.classes).map(|k| format!("pred_{}", self.class_name(k))));
                    header.extend(
                        ["users_accuracy", "producers_accuracy", "f1", "overall_accuracy"].map(String::from),
                    );
                    w.write_record(&header)?;
                    for (k, m) in report.per_class.iter().enumerate() {
                        let mut row = vec![self.class_name(k)];
                        row.extend((0..self.classes).map(|p| cm.get(k, p).to_string()));
                        row.extend([cell(m.users_accuracy), cell(m.producers_accuracy), cell(m.f1), String::new()]);
                        w.write_record(&row)?;
                    }
                    let mut row = vec!["all".to_string()];
                    row.extend((0..self.classes).map(|p| cm.column_total(p).to_string()));
                    row.extend([
                        report.macro_users_accuracy.to_string(),
                        report.macro_producers_accuracy.to_string(),
                        report.macro_f1.to_string(),
                        report.overall_accuracy.to_string(),
                    ]);
                    w.write_record(&row)?;
                    w.flush()?;
                }
                out.flush()?;
                Ok(())
            }
        }
    }
}

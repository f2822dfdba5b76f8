//! `fmsr`: training, sampling, tiled inference and evaluation from the shell.
//!
//! Every subcommand resolves its settings from built-in defaults, then the
//! `--config` JSON file, then flags, and writes the resolved settings to a
//! sidecar JSON (`--sidecar`, or `<out>.config.json`). Running
//! `fmsr --config <sidecar>` repeats the run. Exit codes: 2 usage, 3 I/O or
//! format, 4 numeric.

mod commands;
mod config;
mod error;
mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use commands::{data, generate, report, train};
use config::{default_sidecar_path, load_config_file, resolve, sidecar_value, RunCommand};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "fmsr", version, about = "Generative super-resolution and land cover toolkit")]
struct Cli {
    /// JSON file of settings; flags override it. A sidecar from an earlier
    /// run may be given without a subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Where to write the effective settings (default `<out>.config.json`).
    #[arg(long, global = true)]
    sidecar: Option<PathBuf>,

    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a small field model on a synthetic task.
    TrainToy(train::TrainToyArgs),
    /// Draw samples from a checkpoint.
    Sample(generate::SampleArgs),
    /// Super-resolve a raster window by window with blended overlaps.
    SrTile(generate::SrTileArgs),
    /// Tiled land cover mapping with optional super-resolution.
    LcMap(generate::LcMapArgs),
    /// Fit per-band linear calibration against a coarse reference.
    Calibrate(data::CalibrateArgs),
    /// Masked per-pixel mean of aligned rasters.
    Composite(data::CompositeArgs),
    /// Incremental PCA over raster pixels.
    Pca(data::PcaArgs),
    /// Image and spectral fidelity between two rasters.
    Metrics(report::MetricsArgs),
    /// Knee point of a curve.
    Knee(report::KneeArgs),
    /// Confusion matrix and accuracy of a land cover map.
    EvalLc(report::EvalLcArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TrainToy(_) => "train-toy",
            Command::Sample(_) => "sample",
            Command::SrTile(_) => "sr-tile",
            Command::LcMap(_) => "lc-map",
            Command::Calibrate(_) => "calibrate",
            Command::Composite(_) => "composite",
            Command::Pca(_) => "pca",
            Command::Metrics(_) => "metrics",
            Command::Knee(_) => "knee",
            Command::EvalLc(_) => "eval-lc",
        }
    }
}

fn execute<C: RunCommand>(
    name: &str,
    file: Option<&Map<String, Value>>,
    flags: &impl Serialize,
    sidecar: Option<&Path>,
) -> CliResult<()> {
    let config: C = resolve(name, file, flags)?;
    log::debug!("{name}: {}", serde_json::to_string(&config)?);
    config.run()?;
    let path = sidecar
        .map(Path::to_path_buf)
        .or_else(|| config.primary_output().map(default_sidecar_path));
    if let Some(path) = path {
        let value = sidecar_value(name, &config)?;
        output::write_json(Some(&path), &value)?;
    }
    Ok(())
}

fn dispatch(cli: &Cli, command: &Command) -> CliResult<()> {
    let file = cli.config.as_deref().map(load_config_file).transpose()?;
    let (file, sidecar, name) = (file.as_ref(), cli.sidecar.as_deref(), command.name());
    match command {
        Command::TrainToy(a) => execute::<train::TrainToyConfig>(name, file, a, sidecar),
        Command::Sample(a) => execute::<generate::SampleConfig>(name, file, a, sidecar),
        Command::SrTile(a) => execute::<generate::SrTileConfig>(name, file, a, sidecar),
        Command::LcMap(a) => execute::<generate::LcMapConfig>(name, file, a, sidecar),
        Command::Calibrate(a) => execute::<data::CalibrateConfig>(name, file, a, sidecar),
        Command::Composite(a) => execute::<data::CompositeConfig>(name, file, a, sidecar),
        Command::Pca(a) => execute::<data::PcaConfig>(name, file, a, sidecar),
        Command::Metrics(a) => execute::<report::MetricsConfig>(name, file, a, sidecar),
        Command::Knee(a) => execute::<report::KneeConfig>(name, file, a, sidecar),
        Command::EvalLc(a) => execute::<report::EvalLcConfig>(name, file, a, sidecar),
    }
}

fn parse(args: &[OsString]) -> Result<Cli, ExitCode> {
    Cli::try_parse_from(args).map_err(|e| {
        let _ = e.print();
        ExitCode::from(e.exit_code() as u8)
    })
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let mut cli = match parse(&args) {
        Ok(cli) => cli,
        Err(code) => return code,
    };

    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    // A bare `--config` replays the command recorded in that file.
    if cli.command.is_none() {
        let recorded = cli
            .config
            .as_deref()
            .map(load_config_file)
            .transpose()
            .map(|file| file.and_then(|f| f.get("command").and_then(Value::as_str).map(String::from)));
        match recorded {
            Ok(Some(name)) => {
                let mut replay = args.clone();
                replay.push(name.into());
                cli = match parse(&replay) {
                    Ok(cli) => cli,
                    Err(code) => return code,
                };
            }
            Ok(None) => {
                let _ = Cli::command().print_help();
                return ExitCode::from(2);
            }
            Err(e) => return report_error(&e),
        }
    }

    let command = cli.command.as_ref().expect("subcommand resolved above");
    match dispatch(&cli, command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &CliError) -> ExitCode {
    let class = match e.exit_code() {
        2 => "usage",
        3 => "io",
        _ => "numeric",
    };
    eprintln!("fmsr: error[{class}]: {e}");
    ExitCode::from(e.exit_code() as u8)
}

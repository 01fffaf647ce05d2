use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sievi::simbench::ModelId;
use sievi::tuning::{log_space, TuningGrid};
use sievi::Fidelity;

use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "sievi", version, about = "Single-index extreme value index regression")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit at a fixed threshold level and smoothing parameter.
    Fit(FitArgs),
    /// Select the threshold level and smoothing parameter on a grid.
    Tune(TuneArgs),
    /// Predict the tail index (and optionally extreme quantiles) from a fit file.
    Predict(PredictArgs),
    /// Draw a dataset from one of the simulation models.
    Simulate(SimulateArgs),
    /// Monte Carlo comparison of SIM-D, SIM-M and the linear model.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the response column; every other column is a predictor.
    #[arg(long)]
    pub response: String,
    /// Z-score each predictor.
    #[arg(long)]
    pub standardize: bool,
    /// Drop rows with a non-positive response.
    #[arg(long)]
    pub drop_zero_response: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SplineArgs {
    /// Basis dimension K.
    #[arg(long, default_value_t = 40)]
    pub knots: usize,
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    #[arg(long, default_value_t = 2)]
    pub penalty_order: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    /// Threshold levels as start:stop:step.
    #[arg(long, default_value = "0.90:0.99:0.01")]
    pub tau_grid: String,
    /// Smoothing parameters as lo:hi:count, log-spaced.
    #[arg(long, default_value = "1e-6:1e2:9")]
    pub lambda_grid: String,
}

impl GridArgs {
    pub fn grid(&self) -> Result<TuningGrid> {
        Ok(TuningGrid::new(
            parse_tau_grid(&self.tau_grid)?,
            parse_lambda_grid(&self.lambda_grid)?,
        )?)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub spline: SplineArgs,
    #[arg(long, default_value_t = 0.9)]
    pub tau: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = FidelityArg::Corrected)]
    pub fidelity: FidelityArg,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Write result files even when the fit did not converge.
    #[arg(long)]
    pub keep_partial: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub spline: SplineArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value_t = FidelityArg::Corrected)]
    pub fidelity: FidelityArg,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub keep_partial: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    /// Fit file written by `fit` or `tune`.
    #[arg(long)]
    pub fit: PathBuf,
    /// CSV holding the fit's predictor columns.
    #[arg(long)]
    pub data: PathBuf,
    /// Also report the extrapolated quantile at this level.
    #[arg(long)]
    pub tau_e: Option<f64>,
    /// Overrides the fidelity stored in the fit file.
    #[arg(long, value_enum)]
    pub fidelity: Option<FidelityArg>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_model)]
    #[serde(serialize_with = "display")]
    pub model: ModelId,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub p: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_parser = parse_model)]
    #[serde(serialize_with = "display")]
    pub model: ModelId,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub p: usize,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub spline: SplineArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FidelityArg {
    #[value(name = "paper")]
    #[serde(rename = "paper")]
    Published,
    Corrected,
}

impl From<FidelityArg> for Fidelity {
    fn from(f: FidelityArg) -> Self {
        match f {
            FidelityArg::Published => Fidelity::Published,
            FidelityArg::Corrected => Fidelity::Corrected,
        }
    }
}

fn parse_model(s: &str) -> std::result::Result<ModelId, String> {
    s.parse().map_err(|e: sievi::Error| e.to_string())
}

fn display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn split3<'a>(spec: &'a str, flag: &str) -> Result<[&'a str; 3]> {
    let parts: Vec<&str> = spec.split(':').collect();
    <[&str; 3]>::try_from(parts)
        .map_err(|_| CliError::Usage(format!("--{flag} expects three ':'-separated fields, got {spec:?}")))
}

fn number<T: std::str::FromStr>(s: &str, flag: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("--{flag}: cannot parse {s:?}")))
}

/// `start:stop:step`, inclusive of `stop` up to rounding.
pub fn parse_tau_grid(spec: &str) -> Result<Vec<f64>> {
    let [a, b, h] = split3(spec, "tau-grid")?;
    let (start, stop, step): (f64, f64, f64) = (number(a, "tau-grid")?, number(b, "tau-grid")?, number(h, "tau-grid")?);
    if !(step > 0.0 && stop >= start) {
        return Err(CliError::Usage(format!("--tau-grid {spec:?} is empty")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    // snap to 12 decimals so 0.9 + 3·0.01 prints as 0.93
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

/// `lo:hi:count` log-spaced values.
pub fn parse_lambda_grid(spec: &str) -> Result<Vec<f64>> {
    let [a, b, c] = split3(spec, "lambda-grid")?;
    let (lo, hi): (f64, f64) = (number(a, "lambda-grid")?, number(b, "lambda-grid")?);
    let count: usize = number(c, "lambda-grid")?;
    if !(lo > 0.0 && hi >= lo && count >= 1) {
        return Err(CliError::Usage(format!("--lambda-grid {spec:?} is invalid")));
    }
    Ok(log_space(lo, hi, count))
}

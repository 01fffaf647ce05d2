//! Subcommand bodies. Each writes its manifest before any result file.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sievi::baselines::model_quantile;
use sievi::numerics::RandomStream;
use sievi::simbench::{monte_carlo, MonteCarloConfig, SimModel};
use sievi::tuning::{evaluate_grid, table_of, Reference};
use sievi::{FitConfig, SingleIndexFit, ThresholdSpec};

use crate::args::{BenchArgs, FitArgs, PredictArgs, SimulateArgs, SplineArgs, TuneArgs};
use crate::artifacts::{write_file, FitFile, RunManifest};
use crate::error::{CliError, Result};
use crate::ingest::{dataset_csv, ingest_csv, read_covariates, IngestOptions, Ingested};

pub const FIT_FILE: &str = "fit.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const DATA_FILE: &str = "data.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPLICATIONS_FILE: &str = "replications.csv";

const CURVE_POINTS: usize = 101;

fn prepare(out_dir: &Path, command: &str, config: &impl Serialize, seed: Option<u64>, inputs: &[&Path]) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    RunManifest::new(command, serde_json::to_value(config)?, seed, inputs)?.write(out_dir)?;
    Ok(())
}

fn fit_config(spline: &SplineArgs, tau: f64, lambda: f64) -> FitConfig {
    FitConfig {
        basis_dim: spline.knots,
        degree: spline.degree,
        penalty_order: spline.penalty_order,
        lambda,
        threshold: ThresholdSpec::MarginalQuantile(tau),
        ..FitConfig::default()
    }
}

fn load_data(args: &crate::args::DataArgs) -> Result<Ingested> {
    let opts = IngestOptions {
        standardize: args.standardize,
        drop_zero_response: args.drop_zero_response,
    };
    let ingested = ingest_csv(&args.data, &args.response, &opts)?;
    if args.drop_zero_response {
        eprintln!("dropped {} rows with non-positive response", ingested.dropped);
    }
    Ok(ingested)
}

/// `index,alpha,gamma` over an even grid of the basis interval.
pub fn curve_csv(fit: &SingleIndexFit) -> String {
    let (a, b) = fit.basis.interval();
    let mut out = String::from("index,alpha,gamma\n");
    for i in 0..CURVE_POINTS {
        let z = a + (b - a) * i as f64 / (CURVE_POINTS - 1) as f64;
        out.push_str(&format!("{z},{},{}\n", fit.alpha_at(z), fit.gamma_at(z)));
    }
    out
}

fn write_fit(out_dir: &Path, file: &FitFile) -> Result<()> {
    file.save(&out_dir.join(FIT_FILE))?;
    write_file(&out_dir.join(CURVE_FILE), &curve_csv(&file.fit))
}

fn report(fit: &SingleIndexFit) {
    println!("converged: {}", fit.converged);
    println!("outer iterations: {}", fit.trace.len());
    println!("loss: {}", fit.loss);
    println!("exceedances: {} of {}", fit.n_exceed, fit.n_total);
    println!("theta: {:?}", fit.theta.as_slice());
}

pub fn fit(args: &FitArgs) -> Result<()> {
    prepare(&args.out_dir, "fit", args, None, &[&args.data.data])?;
    let ingested = load_data(&args.data)?;
    let config = fit_config(&args.spline, args.tau, args.lambda);
    let fitted = sievi::fit(&ingested.data, &config)?;
    report(&fitted);
    let converged = fitted.converged;
    if converged || args.keep_partial {
        let file = FitFile::new(
            fitted,
            &args.data.response,
            ingested.data.names().to_vec(),
            ingested.standardization,
            args.fidelity.into(),
        );
        write_fit(&args.out_dir, &file)?;
    }
    if converged {
        Ok(())
    } else {
        Err(CliError::NotConverged)
    }
}

pub fn tune(args: &TuneArgs) -> Result<()> {
    prepare(&args.out_dir, "tune", args, None, &[&args.data.data])?;
    let grid = args.grid.grid()?;
    let ingested = load_data(&args.data)?;
    let config = fit_config(&args.spline, grid.taus()[0], grid.lambdas()[0]);
    config.validate()?;
    let cells = evaluate_grid(&ingested.data, &grid, &config, Reference::ExpectedOrder);
    let table = table_of(&cells, &config);
    let best = table.best();
    if best.is_some() || args.keep_partial {
        write_file(&args.out_dir.join(SCORES_FILE), &table.to_csv())?;
    }
    let Some(best) = best.and_then(|i| cells[i].fit.clone().map(|f| (i, f))) else {
        return Err(sievi::Error::AllCellsFailed.into());
    };
    let (i, fitted) = best;
    let cell = &table.cells[i];
    println!("selected tau: {}", cell.tau);
    println!("selected lambda: {}", cell.lambda);
    println!("discrepancy: {}", cell.score.unwrap_or(f64::NAN));
    report(&fitted);
    let file = FitFile::new(
        fitted,
        &args.data.response,
        ingested.data.names().to_vec(),
        ingested.standardization,
        args.fidelity.into(),
    );
    write_fit(&args.out_dir, &file)
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    prepare(&args.out_dir, "predict", args, None, &[&args.fit, &args.data])?;
    let file = FitFile::load(&args.fit)?;
    let fidelity = args.fidelity.map_or(file.fidelity, Into::into);
    let x = read_covariates(&args.data, &file.covariates, file.standardization.as_ref())?;
    let mut out = String::from("row,index,alpha,gamma");
    if args.tau_e.is_some() {
        out.push_str(",quantile");
    }
    out.push('\n');
    for (i, row) in x.rows().into_iter().enumerate() {
        let row = row.to_vec();
        let z = file.fit.index_value(&row);
        let alpha = file.fit.alpha_at(z);
        out.push_str(&format!("{},{z},{alpha},{}", i + 1, (-alpha).exp()));
        if let Some(tau_e) = args.tau_e {
            let q = model_quantile(&file.fit, &row, tau_e, fidelity)?;
            out.push_str(&format!(",{q}"));
        }
        out.push('\n');
    }
    write_file(&args.out_dir.join(PREDICTIONS_FILE), &out)
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    prepare(&args.out_dir, "simulate", args, Some(args.seed), &[])?;
    let model = SimModel::new(args.model, args.p)?;
    let data = model.sample(args.n, &mut RandomStream::new(args.seed))?;
    write_file(&args.out_dir.join(DATA_FILE), &dataset_csv(&data))
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    prepare(&args.out_dir, "bench", args, Some(args.seed), &[])?;
    let mut cfg = MonteCarloConfig::new(args.model, args.n, args.p, args.reps, args.seed);
    cfg.grid = args.grid.grid()?;
    cfg.fit = fit_config(&args.spline, cfg.grid.taus()[0], cfg.grid.lambdas()[0]);
    cfg.fit.validate()?;
    let result = monte_carlo(&cfg)?;
    write_file(&args.out_dir.join(SUMMARY_FILE), &result.summary_csv())?;
    write_file(&args.out_dir.join(REPLICATIONS_FILE), &result.replications_csv())?;
    print!("{}", result.summary_csv());
    Ok(())
}

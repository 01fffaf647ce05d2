//! Discrepancy score and grid selection of the threshold level and smoothing
//! parameter.
//!
//! For a fitted model the exceedances are mapped to
//! `Û_i = exp(−exp(α̂(x_i)) · log(Y_i / w_i))`, approximately uniform when the
//! model fits. The score compares their order statistics with the expected
//! uniform order statistics `i / (N_e + 1)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::EviModel;
use crate::error::{Error, Result};
use crate::numerics::RandomStream;
use crate::pot::{Dataset, ThresholdSpec};
use crate::single_index::{build_context, fit_with_context, initial_theta, FitConfig, IndexParam, SingleIndexFit};

/// Reference order statistics for the discrepancy score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// `i / (N_e + 1)`.
    #[default]
    ExpectedOrder,
    /// Sorted draws of `N_e` independent uniforms from the given seed.
    Randomized(u64),
}

/// Mean squared gap between sorted `u` and the reference order statistics.
pub fn uniform_discrepancy(u: &[f64], reference: Reference) -> Result<f64> {
    let n = u.len();
    if n < 2 {
        return Err(Error::TooFewExceedances { got: n, need: 2 });
    }
    let mut sorted = u.to_vec();
    sorted.sort_by(f64::total_cmp);
    let refs: Vec<f64> = match reference {
        Reference::ExpectedOrder => (1..=n).map(|i| i as f64 / (n as f64 + 1.0)).collect(),
        Reference::Randomized(seed) => {
            let mut rng = RandomStream::new(seed);
            let mut v: Vec<f64> = (0..n).map(|_| rng.open_uniform()).collect();
            v.sort_by(f64::total_cmp);
            v
        }
    };
    Ok(sorted.iter().zip(&refs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64)
}

/// Probability-integral transforms `Û_i` of the exceedances under `model`.
pub fn pit_values<M: EviModel + ?Sized>(model: &M, data: &Dataset, thresholds: &[f64]) -> Vec<f64> {
    data.y()
        .iter()
        .zip(thresholds)
        .enumerate()
        .filter(|(_, (y, w))| y > w)
        .map(|(i, (y, w))| {
            let x = data.row(i).to_vec();
            let alpha = model.alpha(&x);
            (-(alpha.exp() * (y / w).ln())).exp()
        })
        .collect()
}

pub fn discrepancy_with<M: EviModel + ?Sized>(
    model: &M,
    data: &Dataset,
    thresholds: &[f64],
    reference: Reference,
) -> Result<f64> {
    uniform_discrepancy(&pit_values(model, data, thresholds), reference)
}

/// Discrepancy of a fit with a constant (marginal-quantile) threshold.
pub fn discrepancy(fit: &SingleIndexFit, data: &Dataset) -> Result<f64> {
    let w = fit
        .threshold
        .ok_or_else(|| Error::InvalidConfig("fit has per-row thresholds; use discrepancy_with".into()))?;
    discrepancy_with(fit, data, &vec![w; data.n()], Reference::ExpectedOrder)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    taus: Vec<f64>,
    lambdas: Vec<f64>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        Self {
            taus: (0..10).map(|i| (90 + i) as f64 / 100.0).collect(),
            lambdas: log_space(1e-6, 1e2, 9),
        }
    }
}

/// `count` points log-evenly spaced from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect()
}

impl TuningGrid {
    pub fn new(taus: Vec<f64>, lambdas: Vec<f64>) -> Result<Self> {
        if taus.is_empty() || lambdas.is_empty() {
            return Err(Error::InvalidConfig("tuning grid axes must be nonempty".into()));
        }
        if taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) || taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "tau values must increase strictly inside (0, 1)".into(),
            ));
        }
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) || lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "lambda values must increase strictly from 0".into(),
            ));
        }
        Ok(Self { taus, lambdas })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    pub tau: f64,
    pub lambda: f64,
    pub score: Option<f64>,
    pub n_exceed: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    /// Cells in τ-major order.
    pub cells: Vec<ScoreCell>,
    pub min_exceed: usize,
}

impl ScoreTable {
    pub fn eligible(&self, cell: &ScoreCell) -> bool {
        cell.converged && cell.n_exceed >= self.min_exceed && cell.score.is_some_and(f64::is_finite)
    }

    /// Minimal score among eligible cells; ties go to larger τ, then larger λ.
    pub fn best(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, cell) in self.cells.iter().enumerate() {
            if !self.eligible(cell) {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(j) => {
                    let other = &self.cells[j];
                    let (s, o) = (cell.score.unwrap(), other.score.unwrap());
                    let better = s < o
                        || (s == o && (cell.tau > other.tau || (cell.tau == other.tau && cell.lambda > other.lambda)));
                    if better {
                        Some(i)
                    } else {
                        Some(j)
                    }
                }
            };
        }
        best
    }

    /// CSV with header `tau,lambda,D,n_exceed,converged`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau,lambda,D,n_exceed,converged\n");
        for c in &self.cells {
            let d = c.score.map_or_else(|| "nan".to_string(), |v| v.to_string());
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.tau, c.lambda, d, c.n_exceed, c.converged
            ));
        }
        out
    }
}

/// One grid cell: its fit (if the fit ran) and score.
#[derive(Debug, Clone)]
pub struct CellFit {
    pub cell: ScoreCell,
    pub fit: Option<SingleIndexFit>,
}

/// Fits every grid cell. τ columns run in parallel; within a column the
/// fits warm-start from the previous λ.
pub fn evaluate_grid(data: &Dataset, grid: &TuningGrid, config: &FitConfig, reference: Reference) -> Vec<CellFit> {
    grid.taus
        .par_iter()
        .map(|&tau| evaluate_column(data, tau, &grid.lambdas, config, reference))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn evaluate_column(
    data: &Dataset,
    tau: f64,
    lambdas: &[f64],
    config: &FitConfig,
    reference: Reference,
) -> Vec<CellFit> {
    let failed = |lambda: f64, n_exceed: usize| CellFit {
        cell: ScoreCell {
            tau,
            lambda,
            score: None,
            n_exceed,
            converged: false,
        },
        fit: None,
    };
    let cfg = FitConfig {
        threshold: ThresholdSpec::MarginalQuantile(tau),
        lambda: lambdas[0],
        ..config.clone()
    };
    let Ok((ctx, exceedances, thresholds)) = build_context(data, &cfg) else {
        return lambdas.iter().map(|&l| failed(l, 0)).collect();
    };
    let mut theta: IndexParam = match &config.theta_init {
        Some(t) => t.clone(),
        None => initial_theta(data, &exceedances),
    };
    let mut coefs: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let cctx = ctx.with_lambda(lambda);
        let cell_cfg = FitConfig { lambda, ..cfg.clone() };
        match fit_with_context(&cctx, theta.clone(), coefs.as_deref(), &cell_cfg, &thresholds) {
            Ok(fit) => {
                let score = discrepancy_with(&fit, data, &thresholds, reference).ok();
                theta = fit.theta.clone();
                coefs = Some(fit.coefs.clone());
                out.push(CellFit {
                    cell: ScoreCell {
                        tau,
                        lambda,
                        score,
                        n_exceed: fit.n_exceed,
                        converged: fit.converged,
                    },
                    fit: Some(fit),
                });
            }
            Err(_) => out.push(failed(lambda, exceedances.len())),
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub tau: f64,
    pub lambda: f64,
    pub table: ScoreTable,
    pub fit: SingleIndexFit,
}

/// Cells need at least `K + 5` exceedances to be selectable.
pub fn min_exceedances(config: &FitConfig) -> usize {
    config.basis_dim + 5
}

pub fn table_of(cells: &[CellFit], config: &FitConfig) -> ScoreTable {
    ScoreTable {
        cells: cells.iter().map(|c| c.cell.clone()).collect(),
        min_exceed: min_exceedances(config),
    }
}

/// Grid search minimizing the discrepancy score.
pub fn select(data: &Dataset, grid: &TuningGrid, config: &FitConfig) -> Result<Selection> {
    select_with(data, grid, config, Reference::ExpectedOrder)
}

pub fn select_with(data: &Dataset, grid: &TuningGrid, config: &FitConfig, reference: Reference) -> Result<Selection> {
    let cells = evaluate_grid(data, grid, config, reference);
    let table = table_of(&cells, config);
    let best = table.best().ok_or(Error::AllCellsFailed)?;
    let fit = cells[best].fit.clone().ok_or(Error::AllCellsFailed)?;
    Ok(Selection {
        tau: table.cells[best].tau,
        lambda: table.cells[best].lambda,
        table,
        fit,
    })
}

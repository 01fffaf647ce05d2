//! Simulation models, MISE evaluation, the Monte Carlo harness and
//! cross-validated prediction error.
//!
//! Data follow `P(Y > y | x) = y^{−1/γ(x)} / (1 + ℓ y^{−1/γ(x)})` with
//! `γ(x) = exp(−α(x))` and covariates i.i.d. uniform on `[−1/√3, 1/√3]`.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_linear_evi, EviModel, LinearEviFit};
use crate::error::{Error, Result};
use crate::numerics::{quantile_sorted, RandomStream};
use crate::pot::{realize_threshold, Dataset, ThresholdSpec};
use crate::single_index::{FitConfig, IndexParam};
use crate::tuning::{discrepancy_with, evaluate_grid, table_of, Reference, TuningGrid};

pub const GAUSS_MU: f64 = 0.3;
pub const GAUSS_SIGMA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    I,
    Ii,
    Iii,
    Iv,
    V,
}

impl ModelId {
    pub const ALL: [ModelId; 5] = [ModelId::I, ModelId::Ii, ModelId::Iii, ModelId::Iv, ModelId::V];

    /// Hall second-order constant `ℓ`.
    pub fn ell(self) -> f64 {
        match self {
            ModelId::I => 0.0,
            ModelId::Ii => 0.5,
            ModelId::Iii | ModelId::Iv | ModelId::V => 0.25,
        }
    }

    pub fn is_single_index(self) -> bool {
        self != ModelId::V
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelId::I => "i",
            ModelId::Ii => "ii",
            ModelId::Iii => "iii",
            ModelId::Iv => "iv",
            ModelId::V => "v",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(ModelId::I),
            "ii" | "2" => Ok(ModelId::Ii),
            "iii" | "3" => Ok(ModelId::Iii),
            "iv" | "4" => Ok(ModelId::Iv),
            "v" | "5" => Ok(ModelId::V),
            other => Err(Error::InvalidConfig(format!("unknown model id {other:?}"))),
        }
    }
}

fn gaussian_density(z: f64, mu: f64, sigma: f64) -> f64 {
    let u = (z - mu) / sigma;
    (-0.5 * u * u).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// One data-generating process with its covariate dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimModel {
    pub id: ModelId,
    pub p: usize,
    theta: Vec<f64>,
}

impl SimModel {
    pub fn new(id: ModelId, p: usize) -> Result<Self> {
        if p == 0 || (id == ModelId::V && p < 3) {
            return Err(Error::InvalidConfig(format!(
                "model {id} needs p >= {}",
                if id == ModelId::V { 3 } else { 1 }
            )));
        }
        let mut raw = vec![0.0; p];
        for (slot, v) in raw.iter_mut().zip([1.0, 0.2, 0.5]) {
            *slot = v;
        }
        let theta = IndexParam::normalized(&raw)?.as_slice().to_vec();
        Ok(Self { id, p, theta })
    }

    /// `(1, 0.2, 0.5, 0, …) / ‖·‖`.
    pub fn theta_true(&self) -> &[f64] {
        &self.theta
    }

    pub fn ell(&self) -> f64 {
        self.id.ell()
    }

    pub fn index(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.theta).map(|(a, b)| a * b).sum()
    }

    pub fn true_alpha(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: x.len(),
            });
        }
        let z = self.index(x);
        Ok(match self.id {
            ModelId::I | ModelId::Ii => 1.2 + 2.0 * z,
            ModelId::Iii => 1.5 + 2.0 * z.cos().powi(2),
            ModelId::Iv => {
                -3.0 + gaussian_density(z, -GAUSS_MU, GAUSS_SIGMA) + gaussian_density(z, GAUSS_MU, GAUSS_SIGMA)
            }
            ModelId::V => -1.2 - x[0] * (1.0 - x[2]) * (2.0 * std::f64::consts::PI * x[1]).sin(),
        })
    }

    pub fn true_gamma(&self, x: &[f64]) -> Result<f64> {
        Ok((-self.true_alpha(x)?).exp())
    }

    /// Conditional survival `P(Y > y | x)`.
    pub fn survival(&self, y: f64, x: &[f64]) -> Result<f64> {
        let gamma = self.true_gamma(x)?;
        let s = y.powf(-1.0 / gamma);
        Ok((s / (1.0 + self.ell() * s)).min(1.0))
    }

    /// Inverse survival: `t = u / (1 − ℓu)`, `y = t^{−γ}`.
    pub fn quantile_from_uniform(&self, u: f64, gamma: f64) -> f64 {
        let t = u / (1.0 - self.ell() * u);
        t.powf(-gamma)
    }

    /// Covariate row uniform on `[−1/√3, 1/√3]^p`.
    pub fn draw_covariates(&self, rng: &mut RandomStream) -> Vec<f64> {
        let h = 1.0 / 3f64.sqrt();
        (0..self.p).map(|_| rng.uniform_in(-h, h)).collect()
    }

    /// `n` rows; per row the `p` covariates are drawn first, then the uniform
    /// that is inverted into the response.
    pub fn sample(&self, n: usize, rng: &mut RandomStream) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let mut x = Array2::zeros((n, self.p));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let row = self.draw_covariates(rng);
            let gamma = self.true_gamma(&row)?;
            let u = rng.open_uniform();
            y.push(self.quantile_from_uniform(u, gamma));
            for (j, v) in row.into_iter().enumerate() {
                x[[i, j]] = v;
            }
        }
        Dataset::from_parts(y, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiseConfig {
    pub test_points: usize,
    /// Points with `xᵀθ_true` outside the `[trim, 1 − trim]` quantiles are dropped.
    pub trim: f64,
}

impl Default for MiseConfig {
    fn default() -> Self {
        Self {
            test_points: 1000,
            trim: 0.05,
        }
    }
}

/// Exactly `test_points` covariate rows: an oversampled pool is trimmed on
/// the true index quantiles and truncated, topping up if needed.
pub fn test_points(model: &SimModel, cfg: &MiseConfig, rng: &mut RandomStream) -> Vec<Vec<f64>> {
    let j = cfg.test_points.max(1);
    let mut kept = Vec::with_capacity(j);
    while kept.len() < j {
        let pool: Vec<Vec<f64>> = (0..2 * j).map(|_| model.draw_covariates(rng)).collect();
        let mut z: Vec<f64> = pool.iter().map(|x| model.index(x)).collect();
        z.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&z, cfg.trim);
        let hi = quantile_sorted(&z, 1.0 - cfg.trim);
        for x in pool {
            let zi = model.index(&x);
            if zi >= lo && zi <= hi && kept.len() < j {
                kept.push(x);
            }
        }
    }
    kept
}

/// `(1/J) Σ_j (γ̂(x_j)/γ(x_j) − 1)²`.
pub fn mise<F: Fn(&[f64]) -> f64>(gamma_hat: F, model: &SimModel, points: &[Vec<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = 0.0;
    for x in points {
        let r = gamma_hat(x) / model.true_gamma(x)? - 1.0;
        acc += r * r;
    }
    Ok(acc / points.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    /// Single-index fit tuned by the discrepancy score.
    SimD,
    /// Single-index fit tuned by oracle MISE over the same grid.
    SimM,
    /// Linear index model, threshold tuned by the discrepancy score.
    Linear,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::SimD, Estimator::SimM, Estimator::Linear];

    pub fn label(self) -> &'static str {
        match self {
            Estimator::SimD => "SIM-D",
            Estimator::SimM => "SIM-M",
            Estimator::Linear => "Linear",
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sim-d" | "simd" => Ok(Estimator::SimD),
            "sim-m" | "simm" => Ok(Estimator::SimM),
            "linear" => Ok(Estimator::Linear),
            other => Err(Error::InvalidConfig(format!("unknown estimator {other:?}"))),
        }
    }
}

/// Outcome of one estimator on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub estimator: Estimator,
    pub mise: Option<f64>,
    /// `‖θ̂ − θ_true‖` for single-index estimators (ids i–iv).
    pub theta_error: Option<f64>,
    pub tau: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: u64,
    pub outcomes: Vec<EstimatorOutcome>,
    /// SIM-D's selected cell MISE divided by the grid-best MISE.
    pub selection_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub model: ModelId,
    pub n: usize,
    pub p: usize,
    pub estimators: Vec<Estimator>,
    pub reps: usize,
    pub seed: u64,
    pub grid: TuningGrid,
    pub fit: FitConfig,
    pub mise: MiseConfig,
}

impl MonteCarloConfig {
    pub fn new(model: ModelId, n: usize, p: usize, reps: usize, seed: u64) -> Self {
        Self {
            model,
            n,
            p,
            estimators: Estimator::ALL.to_vec(),
            reps,
            seed,
            grid: TuningGrid::default(),
            fit: FitConfig::default(),
            mise: MiseConfig::default(),
        }
    }
}

/// Streams for replication `r`: data from `2r`, test points from `2r + 1`.
fn replication_streams(seed: u64, r: u64) -> (RandomStream, RandomStream) {
    (RandomStream::derive(seed, 2 * r), RandomStream::derive(seed, 2 * r + 1))
}

/// Linear fit with τ chosen by the discrepancy score over the grid's τ axis.
pub fn tune_linear(data: &Dataset, taus: &[f64], reference: Reference) -> Option<LinearEviFit> {
    let mut best: Option<(f64, LinearEviFit)> = None;
    for &tau in taus {
        let spec = ThresholdSpec::MarginalQuantile(tau);
        let Ok(fit) = fit_linear_evi(data, &spec) else {
            continue;
        };
        let Ok(w) = realize_threshold(data, &spec) else {
            continue;
        };
        let Ok(score) = discrepancy_with(&fit, data, &w, reference) else {
            continue;
        };
        if best.as_ref().is_none_or(|(s, _)| score <= *s) {
            best = Some((score, fit));
        }
    }
    best.map(|(_, f)| f)
}

pub fn run_replication(cfg: &MonteCarloConfig, r: u64) -> Result<Replication> {
    let model = SimModel::new(cfg.model, cfg.p)?;
    let (mut data_rng, mut test_rng) = replication_streams(cfg.seed, r);
    let data = model.sample(cfg.n, &mut data_rng)?;
    let points = test_points(&model, &cfg.mise, &mut test_rng);
    let theta_error = |theta: &IndexParam| {
        model.id.is_single_index().then(|| {
            theta
                .as_slice()
                .iter()
                .zip(model.theta_true())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
    };

    let mut outcomes = Vec::new();
    let mut selection_ratio = None;
    let wants = |e: Estimator| cfg.estimators.contains(&e);
    if wants(Estimator::SimD) || wants(Estimator::SimM) {
        let cells = evaluate_grid(&data, &cfg.grid, &cfg.fit, Reference::ExpectedOrder);
        let table = table_of(&cells, &cfg.fit);
        let cell_mise: Vec<Option<f64>> = cells
            .iter()
            .map(|c| match &c.fit {
                Some(f) if c.cell.converged => mise(|x| f.gamma(x), &model, &points).ok(),
                _ => None,
            })
            .collect();
        let oracle = cell_mise
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|v| (i, v)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let selected = table.best();
        if let (Some(s), Some((_, best))) = (selected, oracle) {
            selection_ratio = cell_mise[s].map(|m| if best > 0.0 { m / best } else { 1.0 });
        }
        for est in [Estimator::SimD, Estimator::SimM] {
            if !wants(est) {
                continue;
            }
            let pick = match est {
                Estimator::SimD => selected,
                _ => oracle.map(|(i, _)| i),
            };
            let outcome = match pick.and_then(|i| cells[i].fit.as_ref().map(|f| (i, f))) {
                Some((i, f)) => EstimatorOutcome {
                    estimator: est,
                    mise: cell_mise[i],
                    theta_error: theta_error(&f.theta),
                    tau: Some(cells[i].cell.tau),
                    lambda: Some(cells[i].cell.lambda),
                },
                None => EstimatorOutcome {
                    estimator: est,
                    mise: None,
                    theta_error: None,
                    tau: None,
                    lambda: None,
                },
            };
            outcomes.push(outcome);
        }
    }
    if wants(Estimator::Linear) {
        let fit = tune_linear(&data, cfg.grid.taus(), Reference::ExpectedOrder);
        outcomes.push(EstimatorOutcome {
            estimator: Estimator::Linear,
            mise: fit.as_ref().and_then(|f| mise(|x| f.gamma(x), &model, &points).ok()),
            theta_error: fit
                .as_ref()
                .and_then(|f| IndexParam::normalized(&f.slopes).ok())
                .and_then(|t| theta_error(&t)),
            tau: fit.as_ref().and_then(|f| f.tau),
            lambda: None,
        });
    }
    Ok(Replication {
        index: r,
        outcomes,
        selection_ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub model: ModelId,
    pub p: usize,
    pub n: usize,
    pub reps: usize,
    pub mean: f64,
    pub sd: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub replications: Vec<Replication>,
    pub summary: Vec<SummaryRow>,
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `reps` independent replications in parallel. Results depend only
/// on the configuration, never on the worker count.
pub fn monte_carlo(cfg: &MonteCarloConfig) -> Result<MonteCarloResult> {
    if cfg.reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    SimModel::new(cfg.model, cfg.p)?;
    let replications: Vec<Replication> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|r| run_replication(cfg, r))
        .collect::<Result<_>>()?;
    let summary = cfg
        .estimators
        .iter()
        .map(|&est| {
            let values: Vec<f64> = replications
                .iter()
                .flat_map(|rep| rep.outcomes.iter())
                .filter(|o| o.estimator == est)
                .filter_map(|o| o.mise)
                .collect();
            let (mean, sd) = mean_sd(&values);
            SummaryRow {
                method: est.label().to_string(),
                model: cfg.model,
                p: cfg.p,
                n: cfg.n,
                reps: cfg.reps,
                mean,
                sd,
                failures: cfg.reps - values.len(),
            }
        })
        .collect();
    Ok(MonteCarloResult { replications, summary })
}

impl MonteCarloResult {
    /// `method,model,p,n,reps,mean,sd,failures`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,model,p,n,reps,mean,sd,failures\n");
        for r in &self.summary {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.method, r.model, r.p, r.n, r.reps, r.mean, r.sd, r.failures
            ));
        }
        out
    }

    /// `replication,method,mise,theta_error,tau,lambda`.
    pub fn replications_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let mut out = String::from("replication,method,mise,theta_error,tau,lambda\n");
        for rep in &self.replications {
            for o in &rep.outcomes {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    rep.index,
                    o.estimator.label(),
                    opt(o.mise),
                    opt(o.theta_error),
                    opt(o.tau),
                    opt(o.lambda)
                ));
            }
        }
        out
    }
}

/// `k` folds covering `0..n` exactly once, from a shuffled order.
pub fn fold_partition(n: usize, k: usize, rng: &mut RandomStream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    folds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeConfig {
    pub folds: usize,
    pub repetitions: usize,
}

impl Default for PeConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            repetitions: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeResult {
    /// Mean over repetitions of the per-repetition (fold-averaged) PE.
    pub mean: f64,
    pub sd: f64,
    pub abs_mean: f64,
    /// Mean log-density over all scored test exceedances.
    pub mean_log_density: f64,
    pub skipped_folds: usize,
}

/// `log φ(y, x)` with `φ = (1/γ)(y/w)^{−1/γ} y^{−1}` for `y > w`.
pub fn log_density(gamma: f64, y: f64, w: f64) -> f64 {
    -gamma.ln() - (y / w).ln() / gamma - y.ln()
}

/// Five-fold (by default) cross-validated prediction error
/// `PE = (mean log φ over test exceedances)^{-1}`, averaged over folds and
/// repeated with reshuffled folds.
pub fn prediction_error<F>(data: &Dataset, estimator: F, cfg: &PeConfig, seed: u64) -> Result<PeResult>
where
    F: Fn(&Dataset) -> Result<Box<dyn EviModel + Send + Sync>> + Sync,
{
    if data.n() < 10 {
        return Err(Error::InvalidData("prediction error needs n >= 10".into()));
    }
    if cfg.folds < 2 || cfg.repetitions == 0 {
        return Err(Error::InvalidConfig("need >= 2 folds and >= 1 repetition".into()));
    }
    let per_rep: Vec<(Option<f64>, f64, usize, usize)> = (0..cfg.repetitions as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = RandomStream::derive(seed, r);
            let folds = fold_partition(data.n(), cfg.folds, &mut rng);
            let mut pes = Vec::new();
            let mut log_sum = 0.0;
            let mut log_count = 0usize;
            let mut skipped = 0usize;
            for (f, test) in folds.iter().enumerate() {
                let train: Vec<usize> = folds
                    .iter()
                    .enumerate()
                    .filter(|(g, _)| *g != f)
                    .flat_map(|(_, idx)| idx.iter().copied())
                    .collect();
                let Ok(train_data) = data.subset(&train) else {
                    skipped += 1;
                    continue;
                };
                let Ok(model) = estimator(&train_data) else {
                    skipped += 1;
                    continue;
                };
                let Some(w) = model.threshold() else {
                    skipped += 1;
                    continue;
                };
                let logs: Vec<f64> = test
                    .iter()
                    .filter(|&&i| data.y()[i] > w)
                    .map(|&i| log_density(model.gamma(&data.row(i).to_vec()), data.y()[i], w))
                    .collect();
                if logs.is_empty() {
                    skipped += 1;
                    continue;
                }
                let mean = logs.iter().sum::<f64>() / logs.len() as f64;
                log_sum += logs.iter().sum::<f64>();
                log_count += logs.len();
                pes.push(1.0 / mean);
            }
            let pe = (!pes.is_empty()).then(|| pes.iter().sum::<f64>() / pes.len() as f64);
            (pe, log_sum, log_count, skipped)
        })
        .collect();
    let values: Vec<f64> = per_rep.iter().filter_map(|r| r.0).collect();
    if values.is_empty() {
        return Err(Error::NoExceedances);
    }
    let (mean, sd) = mean_sd(&values);
    let log_sum: f64 = per_rep.iter().map(|r| r.1).sum();
    let log_count: usize = per_rep.iter().map(|r| r.2).sum();
    Ok(PeResult {
        mean,
        sd,
        abs_mean: mean.abs(),
        mean_log_density: log_sum / log_count as f64,
        skipped_folds: per_rep.iter().map(|r| r.3).sum(),
    })
}

//! Alternating estimation of the single-index extreme value model.
//!
//! Each outer iteration refits the spline coefficients for the current index
//! (penalized), then minimizes the unpenalized loss over the index with the
//! coefficients held fixed, normalizing the result to unit length with a
//! positive first coordinate. When the index steps stop shrinking the index
//! update switches to a proximal form with growing step weight.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::baselines::fit_linear_on_exceedances;
use crate::error::{Error, Result};
use crate::likelihood::{LossContext, NewtonOptions, NewtonReport};
use crate::pot::{extract_exceedances, index_interval, realize_threshold, Dataset, ExceedanceSet, ThresholdSpec};
use crate::splines::{penalty_matrix, SplineBasis};

/// Unit index vector with positive first coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexParam(Vec<f64>);

impl IndexParam {
    /// Normalizes `v` to unit length and flips its sign so that `v[0] ≥ 0`
    /// (a zero first coordinate keeps the given sign).
    pub fn normalized(v: &[f64]) -> Result<Self> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if v.is_empty() || !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidConfig("index vector must be nonzero".into()));
        }
        let sign = if v[0] < 0.0 { -1.0 } else { 1.0 };
        Ok(Self(v.iter().map(|x| sign * x / norm).collect()))
    }

    /// `(1, 0, …, 0)`.
    pub fn first_axis(p: usize) -> Self {
        let mut v = vec![0.0; p];
        v[0] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn distance(&self, other: &IndexParam) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Angle in radians between the two (unit) vectors.
    pub fn angle(&self, other: &IndexParam) -> f64 {
        let c: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        c.clamp(-1.0, 1.0).acos()
    }
}

/// Free coordinates `φ` of `θ(φ) = (√(1 − ‖φ‖²), φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiParam(pub Vec<f64>);

pub fn to_theta(phi: &PhiParam) -> Result<IndexParam> {
    let sq: f64 = phi.0.iter().map(|v| v * v).sum();
    if !(sq < 1.0) {
        return Err(Error::InvalidConfig("phi must lie inside the unit ball".into()));
    }
    let mut v = Vec::with_capacity(phi.0.len() + 1);
    v.push((1.0 - sq).sqrt());
    v.extend_from_slice(&phi.0);
    Ok(IndexParam(v))
}

pub fn to_phi(theta: &IndexParam) -> Result<PhiParam> {
    if !(theta.0[0] > 0.0) {
        return Err(Error::FirstCoordinateNotPositive);
    }
    Ok(PhiParam(theta.0[1..].to_vec()))
}

/// Local chart `θ(φ) = √(1 − ‖φ‖²)·c + Qφ` around a unit center `c`, with
/// `Q` an orthonormal basis of the complement of `c`. With `c = e₁` this is
/// exactly the [`to_theta`] map.
struct Chart {
    center: Vec<f64>,
    frame: Vec<Vec<f64>>,
}

impl Chart {
    fn new(center: &[f64]) -> Self {
        let p = center.len();
        // Householder reflection mapping e₁ to the center.
        let mut v = center.to_vec();
        v[0] -= 1.0;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let frame = (1..p)
            .map(|k| {
                let mut col = vec![0.0; p];
                col[k] = 1.0;
                if vv > 1e-30 {
                    let f = 2.0 * v[k] / vv;
                    for (c, vi) in col.iter_mut().zip(&v) {
                        *c -= f * vi;
                    }
                }
                col
            })
            .collect();
        Self {
            center: center.to_vec(),
            frame,
        }
    }

    fn theta(&self, phi: &[f64]) -> Vec<f64> {
        let sq: f64 = phi.iter().map(|v| v * v).sum();
        let c0 = (1.0 - sq).max(0.0).sqrt();
        let mut t: Vec<f64> = self.center.iter().map(|v| c0 * v).collect();
        for (f, col) in phi.iter().zip(&self.frame) {
            for (ti, ci) in t.iter_mut().zip(col) {
                *ti += f * ci;
            }
        }
        t
    }

    /// Pulls a θ-gradient back to φ-coordinates.
    fn pullback(&self, phi: &[f64], grad_theta: &[f64]) -> Vec<f64> {
        let sq: f64 = phi.iter().map(|v| v * v).sum();
        let c0 = (1.0 - sq).max(1e-300).sqrt();
        let gc: f64 = self.center.iter().zip(grad_theta).map(|(a, b)| a * b).sum();
        self.frame
            .iter()
            .zip(phi)
            .map(|(col, &f)| col.iter().zip(grad_theta).map(|(a, b)| a * b).sum::<f64>() - gc * f / c0)
            .collect()
    }
}

/// Settings of the index update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Unpenalized loss over θ for fixed coefficients, optionally with the
/// proximal term `ν‖θ − anchor‖²`.
struct IndexObjective<'a> {
    ctx: &'a LossContext,
    coefs: &'a [f64],
    deriv_basis: SplineBasis,
    deriv_coefs: Vec<f64>,
    prox: Option<(f64, &'a [f64])>,
}

impl<'a> IndexObjective<'a> {
    fn new(ctx: &'a LossContext, coefs: &'a [f64], prox: Option<(f64, &'a [f64])>) -> Result<Self> {
        let (deriv_basis, deriv_coefs) = ctx.basis().deriv_coeffs(coefs, 1)?;
        Ok(Self {
            ctx,
            coefs,
            deriv_basis,
            deriv_coefs,
            prox,
        })
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let base = self.ctx.data_loss(self.coefs, theta).unwrap_or(f64::INFINITY);
        base + self.prox_term(theta)
    }

    fn prox_term(&self, theta: &[f64]) -> f64 {
        match self.prox {
            Some((nu, anchor)) => nu * theta.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            None => 0.0,
        }
    }

    /// Gradient in θ (ambient coordinates).
    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let ctx = self.ctx;
        let scale = 1.0 / ctx.n_total() as f64;
        let basis = ctx.basis();
        let (a, b) = basis.interval();
        let mut g = vec![0.0; theta.len()];
        let t = ArrayView1::from(theta);
        for (row, &l) in ctx.covariates().rows().into_iter().zip(ctx.log_excess()) {
            let z = row.dot(&t);
            if z < a || z > b {
                // clamped: locally constant in θ
                continue;
            }
            let eta = basis.value(self.coefs, z).clamp(-40.0, 40.0);
            let slope = self.deriv_basis.value(&self.deriv_coefs, z);
            let w = (eta.exp() * l - 1.0) * slope * scale;
            for (gi, xi) in g.iter_mut().zip(row.iter()) {
                *gi += w * xi;
            }
        }
        if let Some((nu, anchor)) = self.prox {
            for ((gi, ti), ai) in g.iter_mut().zip(theta).zip(anchor) {
                *gi += 2.0 * nu * (ti - ai);
            }
        }
        g
    }
}

/// Minimizes the unpenalized loss over unit θ for fixed coefficients by BFGS
/// in local φ-coordinates. Returns the sign-fixed unit minimizer.
///
/// `prox = Some((ν, θ_k))` adds `ν‖θ − θ_k‖²` to the objective.
pub fn theta_step(
    ctx: &LossContext,
    coefs: &[f64],
    theta_init: &IndexParam,
    prox: Option<(f64, &IndexParam)>,
    cfg: &StepConfig,
) -> Result<IndexParam> {
    let p = theta_init.dim();
    if p == 1 {
        return Ok(IndexParam(vec![1.0]));
    }
    let anchor = prox.map(|(nu, a)| (nu, a.as_slice()));
    let obj = IndexObjective::new(ctx, coefs, anchor)?;

    let mut chart = Chart::new(theta_init.as_slice());
    let m = p - 1;
    let mut phi = vec![0.0; m];
    let mut theta = chart.theta(&phi);
    let mut f = obj.value(&theta);
    let mut g = chart.pullback(&phi, &obj.gradient(&theta));
    let mut hinv = identity(m);
    let mut first = true;

    for _ in 0..cfg.max_iter {
        let gnorm = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if gnorm <= cfg.grad_tol {
            break;
        }
        let mut dir: Vec<f64> = matvec(&hinv, &g).into_iter().map(|v| -v).collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if !(slope < 0.0) {
            hinv = identity(m);
            dir = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        if first {
            // first step: cap at 0.1 rad
            let dn = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if dn > 0.1 {
                for d in dir.iter_mut() {
                    *d *= 0.1 / dn;
                }
                slope *= 0.1 / dn;
            }
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = phi.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let sq: f64 = trial.iter().map(|v| v * v).sum();
            if sq < 0.81 {
                let th = chart.theta(&trial);
                let ft = obj.value(&th);
                if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, th, ft));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((new_phi, new_theta, new_f)) = accepted else {
            if first {
                return Err(Error::LineSearchFailed);
            }
            break;
        };
        first = false;
        let new_g = chart.pullback(&new_phi, &obj.gradient(&new_theta));
        let decrease = f - new_f;
        let s: Vec<f64> = new_phi.iter().zip(&phi).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_g.iter().zip(&g).map(|(a, b)| a - b).collect();
        phi = new_phi;
        theta = new_theta;
        f = new_f;
        g = new_g;
        if decrease <= 1e-15 * (1.0 + f.abs()) {
            break;
        }
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-20 {
            bfgs_update(&mut hinv, &s, &y, sy);
        }
        // recenter before the chart degenerates
        if phi.iter().map(|v| v * v).sum::<f64>() > 0.25 {
            let unit = IndexParam::normalized(&theta)?;
            chart = Chart::new(unit.as_slice());
            phi = vec![0.0; m];
            theta = chart.theta(&phi);
            g = chart.pullback(&phi, &obj.gradient(&theta));
            hinv = identity(m);
        }
    }
    IndexParam::normalized(&theta)
}

fn identity(m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn matvec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let m = s.len();
    let rho = 1.0 / sy;
    let hy = matvec(h, y);
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..m {
        for j in 0..m {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Spline basis dimension `K`.
    pub basis_dim: usize,
    pub degree: usize,
    pub penalty_order: usize,
    pub lambda: f64,
    pub threshold: ThresholdSpec,
    pub newton: NewtonOptions,
    pub step: StepConfig,
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Outer iterations without a new smallest index step before switching
    /// to the proximal update.
    pub prox_trigger: usize,
    pub nu_init: f64,
    pub nu_growth: f64,
    pub theta_init: Option<IndexParam>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            basis_dim: 40,
            degree: 3,
            penalty_order: 2,
            lambda: 1e-2,
            threshold: ThresholdSpec::MarginalQuantile(0.9),
            newton: NewtonOptions::default(),
            step: StepConfig::default(),
            outer_tol: 1e-6,
            max_outer: 100,
            prox_trigger: 30,
            nu_init: 0.01,
            nu_growth: 1.2,
            theta_init: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.penalty_order == 0 || self.penalty_order > self.degree {
            return Err(Error::OrderExceedsDegree {
                order: self.penalty_order,
                degree: self.degree,
            });
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if let ThresholdSpec::MarginalQuantile(t) = self.threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidTau(t));
            }
        }
        if !(self.outer_tol > 0.0) || self.max_outer == 0 {
            return Err(Error::InvalidConfig(
                "outer tolerance and iteration cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub step: f64,
    pub loss: f64,
    pub proximal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleIndexFit {
    pub theta: IndexParam,
    pub coefs: Vec<f64>,
    pub basis: SplineBasis,
    pub penalty_order: usize,
    pub lambda: f64,
    pub tau: Option<f64>,
    /// Constant threshold when the threshold is a marginal quantile.
    pub threshold: Option<f64>,
    pub n_total: usize,
    pub n_exceed: usize,
    pub loss: f64,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    pub proximal_used: bool,
    pub final_newton: Option<NewtonReport>,
}

impl SingleIndexFit {
    pub fn index_value(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.theta.as_slice()).map(|(a, b)| a * b).sum()
    }

    /// `α̂(z) = B(z)ᵀb̂` at index value `z` (clamped to the basis interval).
    pub fn alpha_at(&self, z: f64) -> f64 {
        self.basis.value(&self.coefs, z)
    }

    pub fn gamma_at(&self, z: f64) -> f64 {
        (-self.alpha_at(z)).exp()
    }
}

/// Fits a linear extreme value index model to the exceedances and uses its
/// normalized slope as the starting index; `(1, 0, …, 0)` if that fails or
/// the slope vanishes.
pub fn initial_theta(data: &Dataset, exceedances: &ExceedanceSet) -> IndexParam {
    let p = data.p();
    if p == 1 {
        return IndexParam(vec![1.0]);
    }
    match fit_linear_on_exceedances(data, exceedances) {
        Ok((_, slopes, _)) => {
            let norm = slopes.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-8 || !norm.is_finite() {
                IndexParam::first_axis(p)
            } else {
                IndexParam::normalized(&slopes).unwrap_or_else(|_| IndexParam::first_axis(p))
            }
        }
        Err(_) => IndexParam::first_axis(p),
    }
}

/// Spline fit of `b` at fixed θ that keeps the best iterate on non-convergence.
fn fit_b_lenient(ctx: &LossContext, theta: &[f64], init: &[f64], opts: &NewtonOptions) -> (Vec<f64>, NewtonReport) {
    match ctx.fit_b(theta, init, opts) {
        Ok(v) => v,
        Err(Error::DidNotConverge { report, best }) => (best, *report),
        Err(_) => {
            let report = NewtonReport {
                iterations: 0,
                grad_norm: f64::INFINITY,
                loss: f64::INFINITY,
                halvings: 0,
                converged: false,
                losses: Vec::new(),
                max_ridge: 0.0,
                clipped: 0,
            };
            (init.to_vec(), report)
        }
    }
}

/// Builds the loss context for `data` under `config`.
pub fn build_context(data: &Dataset, config: &FitConfig) -> Result<(LossContext, ExceedanceSet, Vec<f64>)> {
    config.validate()?;
    let thresholds = realize_threshold(data, &config.threshold)?;
    let exceedances = extract_exceedances(data, &thresholds)?;
    let (a, b) = index_interval(data);
    let basis = SplineBasis::with_dim(a, b, config.basis_dim, config.degree)?;
    let penalty = penalty_matrix(&basis, config.penalty_order)?;
    let ctx = LossContext::new(data, &exceedances, basis, penalty, config.lambda)?;
    Ok((ctx, exceedances, thresholds))
}

/// Full alternating fit.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<SingleIndexFit> {
    let (ctx, exceedances, thresholds) = build_context(data, config)?;
    let theta0 = match &config.theta_init {
        Some(t) => {
            if t.dim() != data.p() {
                return Err(Error::DimensionMismatch {
                    expected: data.p(),
                    got: t.dim(),
                });
            }
            IndexParam::normalized(t.as_slice())?
        }
        None => initial_theta(data, &exceedances),
    };
    fit_with_context(&ctx, theta0, None, config, &thresholds)
}

/// Alternating fit on a prepared context from a given start.
pub fn fit_with_context(
    ctx: &LossContext,
    theta0: IndexParam,
    b_init: Option<&[f64]>,
    config: &FitConfig,
    thresholds: &[f64],
) -> Result<SingleIndexFit> {
    let mut theta = theta0;
    let mut coefs = match b_init {
        Some(b) if b.len() == ctx.basis().dim() => b.to_vec(),
        _ => ctx.default_init(),
    };
    let unpenalized = ctx.with_lambda(0.0);
    let mut trace = Vec::new();
    let mut proximal = false;
    let mut proximal_used = false;
    let mut nu = config.nu_init;
    let mut best_step = f64::INFINITY;
    let mut stall = 0usize;
    let mut converged = false;

    for _ in 0..config.max_outer {
        let (b, _) = fit_b_lenient(ctx, theta.as_slice(), &coefs, &config.newton);
        coefs = b;
        let prox = proximal.then_some((nu, &theta));
        let next = match theta_step(&unpenalized, &coefs, &theta, prox, &config.step) {
            Ok(t) => t,
            Err(Error::LineSearchFailed) if !proximal => {
                proximal = true;
                proximal_used = true;
                continue;
            }
            Err(Error::LineSearchFailed) => theta.clone(),
            Err(e) => return Err(e),
        };
        let step = next.distance(&theta);
        theta = next;
        let loss = ctx.loss(&coefs, theta.as_slice())?;
        trace.push(IterationRecord { step, loss, proximal });
        if step <= config.outer_tol {
            converged = true;
            break;
        }
        if proximal {
            nu *= config.nu_growth;
        } else if step < best_step {
            best_step = step;
            stall = 0;
        } else {
            stall += 1;
            if stall >= config.prox_trigger {
                proximal = true;
                proximal_used = true;
            }
        }
    }

    let (coefs, report) = fit_b_lenient(ctx, theta.as_slice(), &coefs, &config.newton);
    let loss = ctx.loss(&coefs, theta.as_slice())?;
    let converged = converged && report.converged;
    let threshold = match thresholds.first() {
        Some(&w) if thresholds.iter().all(|&v| v == w) => Some(w),
        _ => None,
    };
    Ok(SingleIndexFit {
        theta,
        coefs,
        basis: ctx.basis().clone(),
        penalty_order: ctx.penalty().order,
        lambda: ctx.lambda(),
        tau: config.threshold.tau(),
        threshold,
        n_total: ctx.n_total(),
        n_exceed: ctx.n_exceed(),
        loss,
        trace,
        converged,
        proximal_used,
        final_newton: Some(report),
    })
}

/// Index values `x_iᵀθ` for all rows.
pub fn project(data: &Dataset, theta: &IndexParam) -> Array1<f64> {
    data.x().dot(&ArrayView1::from(theta.as_slice()))
}

//! Penalized exceedance negative log-likelihood and its damped Newton solver.
//!
//! For exceedance rows with log-excess `L_i = log(Y_i / w_i) > 0` and linear
//! predictor `η_i = B(x_iᵀθ)ᵀb`, the loss is
//!
//! ```text
//! U(b, θ | λ) = (1/n) Σ_i [exp(η_i) L_i − η_i] + (λ/2) bᵀΔb
//! ```
//!
//! where `n` is the full sample size, not the exceedance count. The fitted
//! extreme value index at index value `z` is `γ(z) = exp(−B(z)ᵀb)`.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Cholesky;
use crate::pot::{Dataset, ExceedanceSet};
use crate::splines::{BasisRow, PenaltyMatrix, SplineBasis};

/// Linear predictors are clipped to `[-ETA_CLIP, ETA_CLIP]` before exponentiation.
pub const ETA_CLIP: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub iterations: usize,
    pub grad_norm: f64,
    pub loss: f64,
    pub halvings: usize,
    pub converged: bool,
    /// Loss after each accepted step, starting with the initial loss.
    pub losses: Vec<f64>,
    /// Largest ridge added to the Hessian (0 when none was needed).
    pub max_ridge: f64,
    /// Clipped linear predictors at the returned point.
    pub clipped: usize,
}

/// Sum of `exp(η_i) L_i − η_i` over sparse design rows, scaled by `1/n`, plus
/// an optional roughness penalty `(λ/2) bᵀΔb`.
pub(crate) struct ExcessObjective<'a> {
    pub rows: &'a [BasisRow],
    pub log_excess: &'a [f64],
    pub n_total: usize,
    pub dim: usize,
    pub penalty: Option<(&'a PenaltyMatrix, f64)>,
}

fn clip(eta: f64) -> (f64, bool) {
    if eta > ETA_CLIP {
        (ETA_CLIP, true)
    } else if eta < -ETA_CLIP {
        (-ETA_CLIP, true)
    } else {
        (eta, false)
    }
}

impl ExcessObjective<'_> {
    fn penalty_term(&self, b: &[f64]) -> f64 {
        match self.penalty {
            Some((p, lambda)) if lambda != 0.0 => 0.5 * lambda * p.quadratic_form(b),
            _ => 0.0,
        }
    }

    pub fn value(&self, b: &[f64]) -> f64 {
        let scale = 1.0 / self.n_total as f64;
        let data: f64 = self
            .rows
            .iter()
            .zip(self.log_excess)
            .map(|(row, &l)| {
                let eta = row.dot(b);
                clip(eta).0.exp() * l - eta
            })
            .sum();
        data * scale + self.penalty_term(b)
    }

    pub fn clipped(&self, b: &[f64]) -> usize {
        self.rows.iter().filter(|row| clip(row.dot(b)).1).count()
    }

    pub fn gradient(&self, b: &[f64]) -> Array1<f64> {
        let scale = 1.0 / self.n_total as f64;
        let mut g = Array1::zeros(self.dim);
        for (row, &l) in self.rows.iter().zip(self.log_excess) {
            let w = (clip(row.dot(b)).0.exp() * l - 1.0) * scale;
            for (k, &v) in row.values.iter().enumerate() {
                g[row.start + k] += w * v;
            }
        }
        if let Some((p, lambda)) = self.penalty {
            if lambda != 0.0 {
                g.scaled_add(lambda, &p.apply(b));
            }
        }
        g
    }

    pub fn hessian(&self, b: &[f64]) -> Array2<f64> {
        let scale = 1.0 / self.n_total as f64;
        let mut h = Array2::zeros((self.dim, self.dim));
        for (row, &l) in self.rows.iter().zip(self.log_excess) {
            let w = clip(row.dot(b)).0.exp() * l * scale;
            for (p, &vp) in row.values.iter().enumerate() {
                for (q, &vq) in row.values.iter().enumerate() {
                    h[[row.start + p, row.start + q]] += w * vp * vq;
                }
            }
        }
        if let Some((p, lambda)) = self.penalty {
            h.scaled_add(lambda, &p.matrix);
        }
        h
    }

    /// Damped Newton with Armijo step halving and ridge escalation.
    pub fn minimize(&self, init: &[f64], opts: &NewtonOptions) -> (Vec<f64>, NewtonReport) {
        let mut b = init.to_vec();
        let mut loss = self.value(&b);
        let mut report = NewtonReport {
            iterations: 0,
            grad_norm: f64::INFINITY,
            loss,
            halvings: 0,
            converged: false,
            losses: vec![loss],
            max_ridge: 0.0,
            clipped: 0,
        };
        loop {
            let g = self.gradient(&b);
            report.grad_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if report.grad_norm <= opts.tol {
                report.converged = true;
                break;
            }
            if report.iterations >= opts.max_iter {
                break;
            }
            report.iterations += 1;
            let h = self.hessian(&b);
            let (dir, ridge) = newton_direction(&h, &g);
            report.max_ridge = report.max_ridge.max(ridge);
            let slope = g.dot(&dir);
            let mut t = 1.0;
            let mut accepted = None;
            for halving in 0..=30 {
                let trial: Vec<f64> = b.iter().zip(dir.iter()).map(|(x, d)| x + t * d).collect();
                let f = self.value(&trial);
                if f.is_finite() && f <= loss + 1e-4 * t * slope {
                    report.halvings += halving;
                    accepted = Some((trial, f));
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some((trial, f)) => {
                    b = trial;
                    loss = f;
                    report.losses.push(f);
                }
                None => {
                    report.halvings += 30;
                    break;
                }
            }
        }
        report.loss = loss;
        report.clipped = self.clipped(&b);
        (b, report)
    }
}

/// Solves `H d = −g`; on failure retries with ridge `1e-8·tr/K`, doubling
/// up to `1e-2·tr/K`, then falls back to a scaled gradient step.
fn newton_direction(h: &Array2<f64>, g: &Array1<f64>) -> (Array1<f64>, f64) {
    let neg = g.mapv(|v| -v);
    if let Ok(ch) = Cholesky::factor(h) {
        return (ch.solve(&neg), 0.0);
    }
    let k = h.nrows();
    let avg = ((0..k).map(|i| h[[i, i]]).sum::<f64>() / k as f64)
        .abs()
        .max(f64::MIN_POSITIVE);
    let mut ridge = 1e-8 * avg;
    while ridge <= 1e-2 * avg * (1.0 + 1e-12) {
        let mut hr = h.clone();
        for i in 0..k {
            hr[[i, i]] += ridge;
        }
        if let Ok(ch) = Cholesky::factor(&hr) {
            return (ch.solve(&neg), ridge);
        }
        ridge *= 2.0;
    }
    (neg / avg, ridge)
}

/// Exceedance data, spline basis, penalty and smoothing level for one fit.
#[derive(Debug, Clone)]
pub struct LossContext {
    covariates: Array2<f64>,
    log_excess: Vec<f64>,
    basis: SplineBasis,
    penalty: PenaltyMatrix,
    lambda: f64,
    n_total: usize,
}

impl LossContext {
    pub fn new(
        data: &Dataset,
        exceedances: &ExceedanceSet,
        basis: SplineBasis,
        penalty: PenaltyMatrix,
        lambda: f64,
    ) -> Result<Self> {
        if exceedances.is_empty() {
            return Err(Error::NoExceedances);
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda = {lambda} must be >= 0")));
        }
        if penalty.order > basis.degree() {
            return Err(Error::OrderExceedsDegree {
                order: penalty.order,
                degree: basis.degree(),
            });
        }
        if penalty.dim() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                got: penalty.dim(),
            });
        }
        let p = data.p();
        let mut covariates = Array2::zeros((exceedances.len(), p));
        for (r, &i) in exceedances.indices.iter().enumerate() {
            covariates.row_mut(r).assign(&data.row(i));
        }
        Ok(Self {
            covariates,
            log_excess: exceedances.log_excess.clone(),
            basis,
            penalty,
            lambda,
            n_total: data.n(),
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn penalty(&self) -> &PenaltyMatrix {
        &self.penalty
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn n_exceed(&self) -> usize {
        self.log_excess.len()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn log_excess(&self) -> &[f64] {
        &self.log_excess
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.covariates.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.covariates.ncols(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn check_coefs(&self, b: &[f64]) -> Result<()> {
        if b.len() != self.basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.basis.dim(),
                got: b.len(),
            });
        }
        Ok(())
    }

    /// Projected index values `x_iᵀθ` of the exceedance rows.
    pub fn projections(&self, theta: &[f64]) -> Vec<f64> {
        let t = ArrayView1::from(theta);
        self.covariates.rows().into_iter().map(|r| r.dot(&t)).collect()
    }

    pub fn design_rows(&self, theta: &[f64]) -> Vec<BasisRow> {
        self.projections(theta)
            .into_iter()
            .map(|z| self.basis.eval_row(z))
            .collect()
    }

    fn objective<'a>(&'a self, rows: &'a [BasisRow], lambda: f64) -> ExcessObjective<'a> {
        ExcessObjective {
            rows,
            log_excess: &self.log_excess,
            n_total: self.n_total,
            dim: self.basis.dim(),
            penalty: Some((&self.penalty, lambda)),
        }
    }

    pub fn loss(&self, b: &[f64], theta: &[f64]) -> Result<f64> {
        self.check_coefs(b)?;
        self.check_theta(theta)?;
        let rows = self.design_rows(theta);
        Ok(self.objective(&rows, self.lambda).value(b))
    }

    /// Loss with the penalty removed.
    pub fn data_loss(&self, b: &[f64], theta: &[f64]) -> Result<f64> {
        self.check_coefs(b)?;
        self.check_theta(theta)?;
        let rows = self.design_rows(theta);
        Ok(self.objective(&rows, 0.0).value(b))
    }

    /// Number of clipped linear predictors at `(b, θ)`.
    pub fn clipped(&self, b: &[f64], theta: &[f64]) -> usize {
        let rows = self.design_rows(theta);
        self.objective(&rows, self.lambda).clipped(b)
    }

    pub fn gradient_b(&self, b: &[f64], theta: &[f64]) -> Result<Array1<f64>> {
        self.check_coefs(b)?;
        self.check_theta(theta)?;
        let rows = self.design_rows(theta);
        Ok(self.objective(&rows, self.lambda).gradient(b))
    }

    pub fn hessian_b(&self, b: &[f64], theta: &[f64]) -> Result<Array2<f64>> {
        self.check_coefs(b)?;
        self.check_theta(theta)?;
        let rows = self.design_rows(theta);
        Ok(self.objective(&rows, self.lambda).hessian(b))
    }

    /// Constant spline at `−log(mean log-excess)`, the scalar maximum
    /// likelihood solution.
    pub fn default_init(&self) -> Vec<f64> {
        let mean = self.log_excess.iter().sum::<f64>() / self.log_excess.len() as f64;
        vec![-mean.ln(); self.basis.dim()]
    }

    /// Minimizes `U(·, θ | λ)` over the spline coefficients.
    ///
    /// Returns [`Error::DidNotConverge`] (carrying the best iterate) when the
    /// gradient tolerance is not met or predictors are still clipped.
    pub fn fit_b(&self, theta: &[f64], b_init: &[f64], opts: &NewtonOptions) -> Result<(Vec<f64>, NewtonReport)> {
        self.check_coefs(b_init)?;
        self.check_theta(theta)?;
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidConfig("Newton tolerance must be positive".into()));
        }
        let rows = self.design_rows(theta);
        let (b, mut report) = self.objective(&rows, self.lambda).minimize(b_init, opts);
        if report.clipped > 0 {
            report.converged = false;
        }
        if report.converged {
            Ok((b, report))
        } else {
            Err(Error::DidNotConverge {
                report: Box::new(report),
                best: b,
            })
        }
    }
}

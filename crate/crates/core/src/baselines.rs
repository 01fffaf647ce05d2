//! Reference estimators and predictions: Hill, the linear extreme value index
//! model, EVI prediction and Weissman extrapolation.
//!
//! Sign convention everywhere: `γ = exp(−α)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{ExcessObjective, NewtonOptions, NewtonReport};
use crate::pot::{extract_exceedances, realize_threshold, Dataset, ExceedanceSet, ThresholdSpec};
use crate::single_index::SingleIndexFit;
use crate::splines::BasisRow;

/// Which reading of two ambiguous published formulas to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    /// Hill denominator `Y_(n−k)`; Weissman exponent `+γ̂`.
    #[default]
    Corrected,
    /// Hill denominator `Y_(k)`; Weissman exponent `−γ̂`.
    Published,
}

/// Hill estimator from the top `k` order statistics.
pub fn hill(y: &[f64], k: usize) -> Result<f64> {
    hill_with(y, k, Fidelity::Corrected)
}

pub fn hill_with(y: &[f64], k: usize, fidelity: Fidelity) -> Result<f64> {
    let n = y.len();
    if k == 0 || k >= n {
        return Err(Error::KOutOfRange { k, n });
    }
    if y.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidData("Hill estimator needs positive values".into()));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    // ascending order statistics Y_(1) ≤ … ≤ Y_(n) live at sorted[i - 1]
    let reference = match fidelity {
        Fidelity::Corrected => sorted[n - k - 1],
        Fidelity::Published => sorted[k - 1],
    };
    let sum: f64 = sorted[n - k..].iter().map(|v| (v / reference).ln()).sum();
    Ok(sum / k as f64)
}

/// Anything that predicts `α̂(x)`.
pub trait EviModel {
    fn alpha(&self, x: &[f64]) -> f64;

    fn gamma(&self, x: &[f64]) -> f64 {
        (-self.alpha(x)).exp()
    }

    /// Constant threshold the model was fitted with, when there is one.
    fn threshold(&self) -> Option<f64>;

    fn tau(&self) -> Option<f64>;
}

impl EviModel for SingleIndexFit {
    fn alpha(&self, x: &[f64]) -> f64 {
        self.alpha_at(self.index_value(x))
    }

    fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    fn tau(&self) -> Option<f64> {
        self.tau
    }
}

/// `α(x) = θ₀ + xᵀθ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEviFit {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub tau: Option<f64>,
    pub threshold: Option<f64>,
    pub n_exceed: usize,
    pub report: NewtonReport,
}

impl EviModel for LinearEviFit {
    fn alpha(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.slopes).map(|(a, b)| a * b).sum::<f64>()
    }

    fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    fn tau(&self) -> Option<f64> {
        self.tau
    }
}

/// Constant `α`, the closed-form intercept-only fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEviFit {
    pub alpha: f64,
    pub tau: Option<f64>,
    pub threshold: Option<f64>,
}

impl EviModel for ConstantEviFit {
    fn alpha(&self, _x: &[f64]) -> f64 {
        self.alpha
    }

    fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    fn tau(&self) -> Option<f64> {
        self.tau
    }
}

pub fn fit_constant_evi(data: &Dataset, spec: &ThresholdSpec) -> Result<ConstantEviFit> {
    let thresholds = realize_threshold(data, spec)?;
    let exc = extract_exceedances(data, &thresholds)?;
    Ok(ConstantEviFit {
        alpha: -exc.mean_log_excess().ln(),
        tau: spec.tau(),
        threshold: constant_of(&thresholds),
    })
}

fn constant_of(values: &[f64]) -> Option<f64> {
    match values.first() {
        Some(&w) if values.iter().all(|&v| v == w) => Some(w),
        _ => None,
    }
}

/// Unpenalized Newton fit of `(θ₀, θ)` on the exceedance rows.
pub(crate) fn fit_linear_on_exceedances(data: &Dataset, exc: &ExceedanceSet) -> Result<(f64, Vec<f64>, NewtonReport)> {
    let p = data.p();
    if exc.len() < p + 2 {
        return Err(Error::TooFewExceedances {
            got: exc.len(),
            need: p + 2,
        });
    }
    let rows: Vec<BasisRow> = exc
        .indices
        .iter()
        .map(|&i| {
            let mut values = Vec::with_capacity(p + 1);
            values.push(1.0);
            values.extend(data.row(i).iter());
            BasisRow {
                start: 0,
                values,
                clamped: false,
            }
        })
        .collect();
    let obj = ExcessObjective {
        rows: &rows,
        log_excess: &exc.log_excess,
        n_total: data.n(),
        dim: p + 1,
        penalty: None,
    };
    let mut init = vec![0.0; p + 1];
    init[0] = -exc.mean_log_excess().ln();
    let (coefs, mut report) = obj.minimize(&init, &NewtonOptions::default());
    if report.clipped > 0 {
        report.converged = false;
    }
    if !report.converged {
        return Err(Error::DidNotConverge {
            report: Box::new(report),
            best: coefs,
        });
    }
    Ok((coefs[0], coefs[1..].to_vec(), report))
}

/// Linear extreme value index model fitted by the exceedance likelihood.
pub fn fit_linear_evi(data: &Dataset, spec: &ThresholdSpec) -> Result<LinearEviFit> {
    let thresholds = realize_threshold(data, spec)?;
    let exc = extract_exceedances(data, &thresholds)?;
    let (intercept, slopes, report) = fit_linear_on_exceedances(data, &exc)?;
    Ok(LinearEviFit {
        intercept,
        slopes,
        tau: spec.tau(),
        threshold: constant_of(&thresholds),
        n_exceed: exc.len(),
        report,
    })
}

/// `(α̂(x), γ̂(x))`.
pub fn predict_evi<M: EviModel + ?Sized>(model: &M, x: &[f64]) -> (f64, f64) {
    let alpha = model.alpha(x);
    (alpha, (-alpha).exp())
}

/// Extrapolated quantile `((1 − τ)/(1 − τ_E))^{γ̂} · w` at level `τ_E`.
pub fn weissman_quantile(gamma: f64, threshold: f64, tau: f64, tau_e: f64, fidelity: Fidelity) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0 && tau_e >= tau && tau_e < 1.0) {
        return Err(Error::InvalidLevels { tau, tau_e });
    }
    let ratio = (1.0 - tau) / (1.0 - tau_e);
    let exponent = match fidelity {
        Fidelity::Corrected => gamma,
        Fidelity::Published => -gamma,
    };
    Ok(ratio.powf(exponent) * threshold)
}

/// Weissman quantile from a fitted model with a constant threshold.
pub fn model_quantile<M: EviModel + ?Sized>(model: &M, x: &[f64], tau_e: f64, fidelity: Fidelity) -> Result<f64> {
    let (Some(tau), Some(w)) = (model.tau(), model.threshold()) else {
        return Err(Error::InvalidConfig(
            "extrapolation needs a marginal-quantile threshold".into(),
        ));
    };
    weissman_quantile(model.gamma(x), w, tau, tau_e, fidelity)
}

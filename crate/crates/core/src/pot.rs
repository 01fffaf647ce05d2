//! Peaks over threshold: datasets, threshold realization and exceedances.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::empirical_quantile;

/// Below this covariate norm the index interval falls back to `(-1, 1)`.
pub const DEGENERATE_NORM: f64 = 1e-8;

/// Positive responses with their covariate rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Array2<f64>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Array2<f64>, names: Vec<String>) -> Result<Self> {
        let (n, p) = x.dim();
        if n == 0 || p == 0 {
            return Err(Error::InvalidData("need at least one row and one column".into()));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        if names.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: names.len(),
            });
        }
        if let Some(i) = y.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidData(format!(
                "response at row {i} is not a positive finite number"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("covariates must be finite".into()));
        }
        Ok(Self { y, x, names })
    }

    /// Dataset with generated column names `x1..xp`.
    pub fn from_parts(y: Vec<f64>, x: Array2<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(y, x, names)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let p = self.p();
        let mut x = Array2::zeros((idx.len(), p));
        let mut y = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&self.x.row(i));
            y.push(self.y[i]);
        }
        Self::new(y, x, self.names.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ThresholdSpec {
    /// Constant threshold at the `tau`-th empirical quantile of `y`.
    MarginalQuantile(f64),
    /// One externally supplied threshold per row (e.g. a conditional quantile).
    External(Vec<f64>),
}

impl ThresholdSpec {
    pub fn tau(&self) -> Option<f64> {
        match self {
            ThresholdSpec::MarginalQuantile(t) => Some(*t),
            ThresholdSpec::External(_) => None,
        }
    }
}

/// Per-row threshold values `w_n(x_i)`.
pub fn realize_threshold(data: &Dataset, spec: &ThresholdSpec) -> Result<Vec<f64>> {
    match spec {
        ThresholdSpec::MarginalQuantile(tau) => {
            if !(*tau > 0.0 && *tau < 1.0) {
                return Err(Error::InvalidTau(*tau));
            }
            let q = empirical_quantile(data.y(), *tau)?;
            Ok(vec![q; data.n()])
        }
        ThresholdSpec::External(values) => {
            if values.len() != data.n() {
                return Err(Error::DimensionMismatch {
                    expected: data.n(),
                    got: values.len(),
                });
            }
            if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidData("thresholds must be positive".into()));
            }
            Ok(values.clone())
        }
    }
}

/// Rows with `y_i > w_i` and their log relative excesses `log(y_i / w_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceSet {
    pub indices: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub log_excess: Vec<f64>,
}

impl ExceedanceSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn mean_log_excess(&self) -> f64 {
        self.log_excess.iter().sum::<f64>() / self.len() as f64
    }
}

pub fn extract_exceedances(data: &Dataset, thresholds: &[f64]) -> Result<ExceedanceSet> {
    if thresholds.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            got: thresholds.len(),
        });
    }
    let mut set = ExceedanceSet {
        indices: Vec::new(),
        thresholds: Vec::new(),
        log_excess: Vec::new(),
    };
    for (i, (&y, &w)) in data.y().iter().zip(thresholds).enumerate() {
        if !(w > 0.0) {
            return Err(Error::InvalidData(format!("threshold at row {i} is not positive")));
        }
        if y > w {
            let l = (y / w).ln();
            // y > w can still round to a zero log-ratio
            if l > 0.0 {
                set.indices.push(i);
                set.thresholds.push(w);
                set.log_excess.push(l);
            }
        }
    }
    if set.is_empty() {
        return Err(Error::NoExceedances);
    }
    Ok(set)
}

/// Symmetric interval `[-r, r]`, `r = max_i ‖x_i‖₂`, containing every
/// projection `x_iᵀθ` with `‖θ‖ = 1`.
pub fn index_interval(data: &Dataset) -> (f64, f64) {
    let r = data
        .x()
        .rows()
        .into_iter()
        .map(|row| row.dot(&row).sqrt())
        .fold(0.0, f64::max);
    if r < DEGENERATE_NORM {
        (-1.0, 1.0)
    } else {
        (-r, r)
    }
}

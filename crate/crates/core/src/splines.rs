//! B-spline bases on `[a, b]`, derivative coefficients and the integrated
//! squared-derivative roughness penalty.
//!
//! Indexing is zero-based. With extended knot vector `t_0 ≤ … ≤ t_{K+d}` and
//! degree `d`, basis function `j` (for `0 ≤ j < K`) is supported on
//! `[t_j, t_{j+d+1}]`, the fitting interval is `[t_d, t_K]`, and at most
//! `d + 1` functions are nonzero at any point.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::gauss_legendre;

/// Largest ratio of interior knot gaps accepted by [`SplineBasis::clamped`].
pub const MAX_MESH_RATIO: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    degree: usize,
    knots: Vec<f64>,
}

/// Nonzero block of a basis evaluation: functions `start..start + values.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisRow {
    pub start: usize,
    pub values: Vec<f64>,
    /// The evaluation point lay outside `[a, b]` and was moved to the boundary.
    pub clamped: bool,
}

impl BasisRow {
    pub fn dot(&self, coefs: &[f64]) -> f64 {
        self.values.iter().zip(&coefs[self.start..]).map(|(v, c)| v * c).sum()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        out[self.start..self.start + self.values.len()].copy_from_slice(&self.values);
        out
    }
}

/// Equidistant clamped basis with `k0` interior knots on `[a, b]`.
pub fn make_basis(a: f64, b: f64, k0: usize, degree: usize) -> Result<SplineBasis> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidInterval { a, b });
    }
    if k0 < 2 {
        return Err(Error::TooFewKnots(k0));
    }
    if degree == 0 {
        return Err(Error::InvalidKnots("degree must be at least 1".into()));
    }
    let step = (b - a) / (k0 + 1) as f64;
    let interior: Vec<f64> = (1..=k0).map(|j| a + j as f64 * step).collect();
    SplineBasis::clamped(a, b, &interior, degree)
}

impl SplineBasis {
    /// Equidistant clamped basis of dimension `dim` (so `dim − degree − 1`
    /// interior knots).
    pub fn with_dim(a: f64, b: f64, dim: usize, degree: usize) -> Result<Self> {
        if dim < degree + 3 {
            return Err(Error::TooFewKnots(dim.saturating_sub(degree + 1)));
        }
        make_basis(a, b, dim - degree - 1, degree)
    }

    /// Clamped basis: both endpoints repeated `degree + 1` times.
    pub fn clamped(a: f64, b: f64, interior: &[f64], degree: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidInterval { a, b });
        }
        let mut prev = a;
        for &k in interior {
            if !(k > prev && k < b) {
                return Err(Error::InvalidKnots(
                    "interior knots must be strictly increasing inside (a, b)".into(),
                ));
            }
            prev = k;
        }
        let mut gaps: Vec<f64> = Vec::with_capacity(interior.len() + 1);
        let mut last = a;
        for &k in interior.iter().chain(std::iter::once(&b)) {
            gaps.push(k - last);
            last = k;
        }
        let ratio = gaps.iter().cloned().fold(0.0, f64::max) / gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        if ratio > MAX_MESH_RATIO {
            return Err(Error::InvalidKnots(format!(
                "mesh ratio {ratio:.3} exceeds {MAX_MESH_RATIO}"
            )));
        }
        let mut knots = vec![a; degree + 1];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(b, degree + 1));
        Ok(Self { degree, knots })
    }

    /// Basis from a full extended knot vector; the fitting interval is
    /// `[knots[degree], knots[len − degree − 1]]`.
    pub fn from_knots(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if knots.len() < 2 * degree + 2 {
            return Err(Error::InvalidKnots(format!(
                "need at least {} knots for degree {degree}",
                2 * degree + 2
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be finite and nondecreasing".into()));
        }
        let basis = Self { degree, knots };
        let (a, b) = basis.interval();
        if !(a < b) {
            return Err(Error::InvalidInterval { a, b });
        }
        Ok(basis)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn dim(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.dim()])
    }

    /// Knots strictly inside `(a, b)`.
    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.degree + 1..self.dim()]
    }

    /// Index `μ` of the knot span `[t_μ, t_{μ+1})` containing `x ∈ [a, b]`.
    fn span(&self, x: f64) -> usize {
        let d = self.degree;
        let k = self.dim();
        let count = self.knots.partition_point(|&t| t <= x);
        let mut mu = count.saturating_sub(1).clamp(d, k - 1);
        while mu > d && self.knots[mu] >= self.knots[mu + 1] {
            mu -= 1;
        }
        mu
    }

    /// Nonzero basis values at `x` (Cox–de Boor, with `0/0 = 0`).
    pub fn eval_row(&self, x: f64) -> BasisRow {
        let (a, b) = self.interval();
        let clamped = !(x >= a && x <= b);
        let x = if x.is_nan() { a } else { x.clamp(a, b) };
        let d = self.degree;
        let t = &self.knots;
        let mu = self.span(x);
        let mut values = vec![0.0; d + 1];
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        values[0] = 1.0;
        for j in 1..=d {
            left[j] = x - t[mu + 1 - j];
            right[j] = t[mu + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { values[r] / denom };
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        BasisRow {
            start: mu - d,
            values,
            clamped,
        }
    }

    /// Dense basis vector `B(x)` of length `dim()`.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        self.eval_row(x).to_dense(self.dim())
    }

    /// Spline value `B(x)ᵀ coefs`.
    pub fn value(&self, coefs: &[f64], x: f64) -> f64 {
        self.eval_row(x).dot(coefs)
    }

    /// Coefficients of the `order`-th derivative in the basis of degree
    /// `degree − order` on the same knots with `order` knots dropped from each end.
    pub fn deriv_coeffs(&self, coefs: &[f64], order: usize) -> Result<(SplineBasis, Vec<f64>)> {
        if order > self.degree {
            return Err(Error::OrderExceedsDegree {
                order,
                degree: self.degree,
            });
        }
        if coefs.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: coefs.len(),
            });
        }
        let mut knots = self.knots.clone();
        let mut c = coefs.to_vec();
        let mut p = self.degree;
        for _ in 0..order {
            let next: Vec<f64> = (0..c.len() - 1)
                .map(|j| {
                    let h = knots[j + p + 1] - knots[j + 1];
                    if h == 0.0 {
                        0.0
                    } else {
                        p as f64 * (c[j + 1] - c[j]) / h
                    }
                })
                .collect();
            knots = knots[1..knots.len() - 1].to_vec();
            c = next;
            p -= 1;
        }
        Ok((SplineBasis { degree: p, knots }, c))
    }

    /// `order`-th derivative of `B(x)ᵀ coefs`.
    pub fn derivative(&self, coefs: &[f64], x: f64, order: usize) -> Result<f64> {
        let (lower, c) = self.deriv_coeffs(coefs, order)?;
        Ok(lower.value(&c, x))
    }

    /// The `(K − order) × K` matrix mapping coefficients to derivative coefficients.
    pub fn derivative_matrix(&self, order: usize) -> Result<Array2<f64>> {
        let k = self.dim();
        let mut out = Array2::zeros((k - order, k));
        let mut unit = vec![0.0; k];
        for col in 0..k {
            unit[col] = 1.0;
            let (_, c) = self.deriv_coeffs(&unit, order)?;
            for (row, v) in c.into_iter().enumerate() {
                out[[row, col]] = v;
            }
            unit[col] = 0.0;
        }
        Ok(out)
    }

    /// Gram matrix `∫_a^b B_i(x) B_j(x) dx`, exact via per-span Gauss–Legendre.
    pub fn gram(&self) -> Array2<f64> {
        let k = self.dim();
        let d = self.degree;
        let (a, b) = self.interval();
        let rule = gauss_legendre(d + 1);
        let mut gram = Array2::zeros((k, k));
        for mu in d..k {
            let lo = self.knots[mu];
            let hi = self.knots[mu + 1];
            if !(hi > lo) || lo < a || hi > b {
                continue;
            }
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (&node, &w) in rule.nodes.iter().zip(&rule.weights) {
                let row = self.eval_row(mid + half * node);
                let scale = w * half;
                for (p, &vp) in row.values.iter().enumerate() {
                    for (q, &vq) in row.values.iter().enumerate() {
                        gram[[row.start + p, row.start + q]] += scale * vp * vq;
                    }
                }
            }
        }
        gram
    }
}

/// Roughness penalty `Δ` with `bᵀΔb = ∫_a^b (s^{(m)}(x))² dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub order: usize,
    pub matrix: Array2<f64>,
    derivative: Array2<f64>,
    gram: Array2<f64>,
}

impl PenaltyMatrix {
    /// `bᵀΔb`, evaluated as `(Db)ᵀR(Db)`. Expanding `Δ` directly loses about
    /// `‖Δ‖·ε` absolutely for near-linear `b`, enough to stall a line search.
    pub fn quadratic_form(&self, coefs: &[f64]) -> f64 {
        let c = self.derivative.dot(&ArrayView1::from(coefs));
        c.dot(&self.gram.dot(&c))
    }

    /// `Δb` as `Dᵀ(R(Db))`.
    pub fn apply(&self, coefs: &[f64]) -> Array1<f64> {
        let c = self.derivative.dot(&ArrayView1::from(coefs));
        self.derivative.t().dot(&self.gram.dot(&c))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `Δ = Dᵀ R D` with `D` the derivative-coefficient map and `R` the Gram
/// matrix of the degree `d − m` basis.
pub fn penalty_matrix(basis: &SplineBasis, order: usize) -> Result<PenaltyMatrix> {
    if order == 0 || order > basis.degree() {
        return Err(Error::OrderExceedsDegree {
            order,
            degree: basis.degree(),
        });
    }
    let dmat = basis.derivative_matrix(order)?;
    let (lower, _) = basis.deriv_coeffs(&vec![0.0; basis.dim()], order)?;
    let gram = lower.gram();
    let mut matrix = dmat.t().dot(&gram.dot(&dmat));
    let k = matrix.nrows();
    for i in 0..k {
        for j in 0..i {
            let s = 0.5 * (matrix[[i, j]] + matrix[[j, i]]);
            matrix[[i, j]] = s;
            matrix[[j, i]] = s;
        }
    }
    Ok(PenaltyMatrix {
        order,
        matrix,
        derivative: dmat,
        gram,
    })
}

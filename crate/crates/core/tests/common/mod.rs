#![allow(dead_code)]

use ndarray::Array2;
use sievi::numerics::RandomStream;
use sievi::pot::Dataset;

/// Cox–de Boor recursion straight from the definition, half-open spans.
pub fn naive_bspline(knots: &[f64], j: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        return if knots[j] <= x && x < knots[j + 1] { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let left = knots[j + p] - knots[j];
    if left > 0.0 {
        v += (x - knots[j]) / left * naive_bspline(knots, j, p - 1, x);
    }
    let right = knots[j + p + 1] - knots[j + 1];
    if right > 0.0 {
        v += (knots[j + p + 1] - x) / right * naive_bspline(knots, j + 1, p - 1, x);
    }
    v
}

/// `m`-th derivative of `B_{j,p}` by differentiating the recursion.
pub fn naive_bspline_deriv(knots: &[f64], j: usize, p: usize, m: usize, x: f64) -> f64 {
    if m == 0 {
        return naive_bspline(knots, j, p, x);
    }
    if p == 0 {
        return 0.0;
    }
    let pf = p as f64;
    let mut v = 0.0;
    let left = knots[j + p] - knots[j];
    if left > 0.0 {
        v += pf / left * naive_bspline_deriv(knots, j, p - 1, m - 1, x);
    }
    let right = knots[j + p + 1] - knots[j + 1];
    if right > 0.0 {
        v -= pf / right * naive_bspline_deriv(knots, j + 1, p - 1, m - 1, x);
    }
    v
}

pub fn naive_spline_deriv(knots: &[f64], degree: usize, coefs: &[f64], m: usize, x: f64) -> f64 {
    // only B_j with t_j ≤ x < t_{j+d+1} can be nonzero
    coefs
        .iter()
        .enumerate()
        .filter(|(j, _)| knots[*j] <= x && x < knots[j + degree + 1])
        .map(|(j, c)| c * naive_bspline_deriv(knots, j, degree, m, x))
        .sum()
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, rel: f64, depth: usize) -> f64 {
    let mid = 0.5 * (a + b);
    let left = simpson(f, a, mid);
    let right = simpson(f, mid, b);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * rel * (left.abs() + right.abs()) {
        return left + right + err / 15.0;
    }
    adaptive(f, a, mid, left, rel, depth - 1) + adaptive(f, mid, b, right, rel, depth - 1)
}

/// Adaptive Simpson with Richardson correction, relative tolerance.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    adaptive(f, a, b, simpson(f, a, b), rel, 16)
}

/// Interior knots with gap ratio at most 3.
pub fn random_interior(a: f64, b: f64, count: usize, rng: &mut RandomStream) -> Vec<f64> {
    let gaps: Vec<f64> = (0..=count).map(|_| rng.uniform_in(1.0, 3.0)).collect();
    let total: f64 = gaps.iter().sum();
    let mut acc = a;
    gaps[..count]
        .iter()
        .map(|g| {
            acc += g / total * (b - a);
            acc
        })
        .collect()
}

/// Exact Pareto responses `U^{−γ}` with uniform covariates on `[−1, 1]`.
pub fn pareto_dataset(n: usize, p: usize, gamma: f64, rng: &mut RandomStream) -> Dataset {
    let mut x = Array2::zeros((n, p));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..p {
            x[[i, j]] = rng.uniform_in(-1.0, 1.0);
        }
        y.push(rng.open_uniform().powf(-gamma));
    }
    Dataset::from_parts(y, x).unwrap()
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

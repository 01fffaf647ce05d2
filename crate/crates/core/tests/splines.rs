mod common;

use common::{integrate, naive_bspline, naive_spline_deriv, random_interior};
use ndarray::Array2;
use proptest::prelude::*;
use sievi::numerics::RandomStream;
use sievi::splines::{penalty_matrix, SplineBasis};

fn random_basis(rng: &mut RandomStream) -> SplineBasis {
    let degree = 1 + rng.below(5) as usize;
    let count = 2 + rng.below(20) as usize;
    let a = rng.uniform_in(-3.0, 0.0);
    let b = a + rng.uniform_in(0.5, 4.0);
    let interior = random_interior(a, b, count, rng);
    SplineBasis::clamped(a, b, &interior, degree).unwrap()
}

fn greville(basis: &SplineBasis) -> Vec<f64> {
    let t = basis.knots();
    let d = basis.degree();
    (0..basis.dim())
        .map(|j| t[j + 1..=j + d].iter().sum::<f64>() / d as f64)
        .collect()
}

#[test]
fn partition_of_unity_and_nonnegativity() {
    let mut rng = RandomStream::new(11);
    for _ in 0..20 {
        let basis = random_basis(&mut rng);
        let (a, b) = basis.interval();
        for _ in 0..1000 {
            let x = rng.uniform_in(a, b);
            let v = basis.eval(x);
            assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(v.iter().all(|&e| e >= -1e-15));
        }
        assert!((basis.eval(b).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn evaluation_matches_naive_recursion_with_local_support() {
    let mut rng = RandomStream::new(12);
    for _ in 0..10 {
        let basis = random_basis(&mut rng);
        let (a, b) = basis.interval();
        let d = basis.degree();
        for _ in 0..200 {
            let x = rng.uniform_in(a, b);
            let row = basis.eval_row(x);
            assert_eq!(row.values.len(), d + 1);
            let dense = row.to_dense(basis.dim());
            for (j, &v) in dense.iter().enumerate() {
                let naive = naive_bspline(basis.knots(), j, d, x);
                assert!((v - naive).abs() <= 1e-12, "j={j} x={x}: {v} vs {naive}");
                if j < row.start || j > row.start + d {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }
}

#[test]
fn derivative_matches_central_differences() {
    let mut rng = RandomStream::new(13);
    for _ in 0..10 {
        let basis = random_basis(&mut rng);
        let coefs: Vec<f64> = (0..basis.dim()).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let (a, b) = basis.interval();
        for _ in 0..50 {
            let x = rng.uniform_in(a + 0.01, b - 0.01);
            if basis.knots().iter().any(|k| (k - x).abs() < 1e-4) {
                continue;
            }
            let h = 1e-6;
            let fd = (basis.value(&coefs, x + h) - basis.value(&coefs, x - h)) / (2.0 * h);
            let exact = basis.derivative(&coefs, x, 1).unwrap();
            assert!((fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()), "{fd} vs {exact}");
        }
    }
}

#[test]
fn identity_is_reproduced_with_unit_derivative() {
    let basis = SplineBasis::with_dim(-1.0, 2.0, 12, 3).unwrap();
    let coefs = greville(&basis);
    for i in 0..10 {
        let x = -1.0 + 3.0 * (i as f64 + 0.5) / 10.0;
        assert!((basis.value(&coefs, x) - x).abs() < 1e-12);
        assert!((basis.derivative(&coefs, x, 1).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn penalty_matches_quadrature_of_squared_derivative() {
    let mut rng = RandomStream::new(14);
    for _ in 0..20 {
        let basis = random_basis(&mut rng);
        let d = basis.degree();
        let m = 1 + rng.below(d as u64) as usize;
        let pen = penalty_matrix(&basis, m).unwrap();
        let coefs: Vec<f64> = (0..basis.dim()).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let knots = basis.knots().to_vec();
        let mut breaks: Vec<f64> = knots.clone();
        breaks.dedup();
        let mut oracle = 0.0;
        for w in breaks.windows(2) {
            // evaluate inside the open span to stay off the half-open edges
            let (lo, hi) = (w[0], w[1]);
            let f = |x: f64| {
                let x = x.clamp(lo + 1e-13 * (hi - lo), hi - 1e-13 * (hi - lo));
                naive_spline_deriv(&knots, d, &coefs, m, x).powi(2)
            };
            oracle += integrate(&f, lo, hi, 1e-11);
        }
        let got = pen.quadratic_form(&coefs);
        assert!(
            (got - oracle).abs() <= 1e-8 * oracle.abs().max(1e-300),
            "d={d} m={m}: {got} vs {oracle}"
        );
    }
}

/// Uniform knots extended past both ends: the `m`-th derivative is
/// `h^{−m} Σ (Δ^m b)_i N_i` with `N_i` the degree `d − m` B-splines.
fn difference_oracle(k: usize, d: usize, m: usize, h: f64) -> Array2<f64> {
    let q = d - m;
    assert!(q <= 1);
    let rows = k - m;
    let mut diff = Array2::zeros((rows, k));
    for i in 0..rows {
        let mut binom = 1.0;
        for j in 0..=m {
            let sign = if (m - j).is_multiple_of(2) { 1.0 } else { -1.0 };
            diff[[i, i + j]] = sign * binom;
            binom = binom * (m - j) as f64 / (j + 1) as f64;
        }
    }
    // span s = [t_s, t_{s+1}] lies in the interval iff d ≤ s < k
    let inside = |s: usize| s >= d && s < k;
    let mut gram = Array2::zeros((rows, rows));
    for i in 0..rows {
        if q == 0 {
            if inside(i + m) {
                gram[[i, i]] = h;
            }
        } else {
            let first = i + m;
            let halves = inside(first) as u8 + inside(first + 1) as u8;
            gram[[i, i]] = halves as f64 * h / 3.0;
            if i + 1 < rows && inside(first + 1) {
                gram[[i, i + 1]] = h / 6.0;
                gram[[i + 1, i]] = h / 6.0;
            }
        }
    }
    diff.t().dot(&gram.dot(&diff)) / h.powi(2 * m as i32)
}

#[test]
fn equidistant_penalty_matches_difference_construction() {
    let mut rng = RandomStream::new(15);
    for &(d, m) in &[(1usize, 1usize), (2, 1), (3, 2), (3, 3)] {
        for &k in &[8usize, 20, 40] {
            let h = 1.0 / k as f64;
            let knots: Vec<f64> = (0..=k + d).map(|j| (j as f64 - d as f64) * h).collect();
            let basis = SplineBasis::from_knots(knots, d).unwrap();
            let pen = penalty_matrix(&basis, m).unwrap();
            let oracle = difference_oracle(k, d, m, h);
            for _ in 0..20 {
                let b: Vec<f64> = (0..k).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                let bv = ndarray::Array1::from(b.clone());
                let want = bv.dot(&oracle.dot(&bv));
                let got = pen.quadratic_form(&b);
                assert!(
                    (got - want).abs() <= 1e-8 * want.abs(),
                    "d={d} m={m} k={k}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn penalty_annihilates_low_degree_polynomials() {
    let basis = SplineBasis::with_dim(-1.0, 1.0, 20, 3).unwrap();
    let g = greville(&basis);
    for m in 1..=3 {
        let pen = penalty_matrix(&basis, m).unwrap();
        for degree in 0..m {
            // Greville abscissae reproduce constants and linear functions
            if degree > 1 {
                continue;
            }
            let b: Vec<f64> = g.iter().map(|x| 0.3 + 1.7 * x * degree as f64).collect();
            let norm2: f64 = b.iter().map(|v| v * v).sum();
            assert!(pen.quadratic_form(&b).abs() <= 1e-10 * norm2);
        }
    }
}

#[test]
fn penalty_is_symmetric() {
    let basis = SplineBasis::with_dim(-2.0, 1.0, 40, 3).unwrap();
    let pen = penalty_matrix(&basis, 2).unwrap();
    let scale = pen.matrix.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in 0..40 {
        for j in 0..40 {
            assert!((pen.matrix[[i, j]] - pen.matrix[[j, i]]).abs() <= 1e-12 * scale);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn penalty_is_positive_semidefinite(seed in any::<u64>(), m in 1usize..=3) {
        let mut rng = RandomStream::new(seed);
        let basis = SplineBasis::with_dim(-1.0, 1.0, 6 + rng.below(35) as usize, 3).unwrap();
        let pen = penalty_matrix(&basis, m).unwrap();
        let b: Vec<f64> = (0..basis.dim()).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        prop_assert!(pen.quadratic_form(&b) >= 0.0);
        let bv = ndarray::Array1::from(b);
        let expanded = bv.dot(&pen.matrix.dot(&bv));
        let scale = pen.matrix.iter().fold(0.0f64, |a, v| a.max(v.abs())) * bv.dot(&bv);
        prop_assert!(expanded >= -1e-12 * scale);
    }

    #[test]
    fn values_stay_within_coefficient_hull(seed in any::<u64>(), x in -1.0f64..1.0) {
        let mut rng = RandomStream::new(seed);
        let degree = 1 + rng.below(4) as usize;
        let basis = SplineBasis::with_dim(-1.0, 1.0, degree + 3 + rng.below(30) as usize, degree).unwrap();
        let b: Vec<f64> = (0..basis.dim()).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
        let v = basis.value(&b, x);
        let lo = b.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }
}

mod common;

use common::*;
use layerforge::ridge::{self, AlphaGrid};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn problem(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, f64) {
    let mut r = rng(seed);
    let n = r.random_range(5..=200);
    let p = r.random_range(1..=50);
    let grid = AlphaGrid::default();
    let alpha = grid.values()[r.random_range(0..grid.len())];
    let x: Vec<Vec<f64>> = (0..n).map(|_| normals(&mut r, p)).collect();
    let w = normals(&mut r, p);
    let y = x
        .iter()
        .map(|row| 1.5 + row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + r.random::<f64>())
        .collect();
    (x, y, alpha)
}

#[test]
fn matches_explicit_normal_equations() {
    for seed in 0..100 {
        let (x, y, alpha) = problem(seed);
        let m = ridge::fit(&rows_to_matrix(&x), &y, alpha, false).unwrap();
        let o = ridge_oracle(&x, &y, alpha);
        assert!(rel_err(&m.weights, &o.weights) < 1e-6, "seed {seed}");
        let yhat = m.predict(&rows_to_matrix(&x)).unwrap();
        assert!(rel_err(&yhat, &o.predict(&x)) < 1e-6, "seed {seed}");
        assert!((m.intercept - o.intercept).abs() <= 1e-6 * o.intercept.abs().max(1.0));
    }
}

#[test]
fn standardized_fit_matches_oracle_on_scaled_columns() {
    let (x, y, alpha) = problem(7);
    let p = x[0].len();
    let n = x.len() as f64;
    let scaled: Vec<Vec<f64>> = {
        let means: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let sds: Vec<f64> = (0..p)
            .map(|j| (x.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        x.iter()
            .map(|r| (0..p).map(|j| (r[j] - means[j]) / sds[j]).collect())
            .collect()
    };
    let m = ridge::fit(&rows_to_matrix(&x), &y, alpha, true).unwrap();
    let o = ridge_oracle(&scaled, &y, alpha);
    assert!(rel_err(&m.weights, &o.weights) < 1e-6);
    let yhat = m.predict(&rows_to_matrix(&x)).unwrap();
    assert!(rel_err(&yhat, &o.predict(&scaled)) < 1e-6);
}

#[test]
fn huge_alpha_predicts_the_mean() {
    let mut r = rng(11);
    let x: Vec<Vec<f64>> = (0..100).map(|_| normals(&mut r, 20)).collect();
    let y: Vec<f64> = normals(&mut r, 100).iter().map(|v| 3.0 + v).collect();
    let mean = y.iter().sum::<f64>() / 100.0;
    let m = ridge::fit(&rows_to_matrix(&x), &y, 1e9, false).unwrap();
    for v in m.predict(&rows_to_matrix(&x)).unwrap() {
        assert!((v - mean).abs() <= 1e-3 * mean.abs());
    }
}

#[test]
fn saved_model_predicts_identically() {
    let (x, y, alpha) = problem(3);
    let xm = rows_to_matrix(&x);
    let m = ridge::fit(&xm, &y, alpha, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rdg");
    m.save(&path).unwrap();
    let back = ridge::RidgeModel::load(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.predict(&xm).unwrap(), m.predict(&xm).unwrap());
}

fn small_problem() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (4usize..30, 1usize..6).prop_flat_map(|(n, p)| {
        (
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, p), n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

fn norm(w: &[f64]) -> f64 {
    w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn larger_alpha_never_grows_weights((x, y) in small_problem(), a in 1e-3f64..1e3, k in 1.5f64..100.0) {
        let xm = rows_to_matrix(&x);
        let lo = ridge::fit(&xm, &y, a, false).unwrap();
        let hi = ridge::fit(&xm, &y, a * k, false).unwrap();
        prop_assert!(norm(&hi.weights) <= norm(&lo.weights) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn column_permutation_permutes_weights((x, y) in small_problem(), a in 1e-2f64..1e3) {
        let p = x[0].len();
        let perm: Vec<usize> = (0..p).rev().collect();
        let xp: Vec<Vec<f64>> = x.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
        let m = ridge::fit(&rows_to_matrix(&x), &y, a, false).unwrap();
        let mp = ridge::fit(&rows_to_matrix(&xp), &y, a, false).unwrap();
        let scale = norm(&m.weights).max(1.0);
        for (i, &j) in perm.iter().enumerate() {
            prop_assert!((mp.weights[i] - m.weights[j]).abs() <= 1e-8 * scale);
        }
        let a1 = m.predict(&rows_to_matrix(&x)).unwrap();
        let a2 = mp.predict(&rows_to_matrix(&xp)).unwrap();
        for (u, v) in a1.iter().zip(&a2) {
            prop_assert!((u - v).abs() <= 1e-8 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn shifting_y_shifts_only_the_intercept((x, y) in small_problem(), a in 1e-2f64..1e3, c in -50.0f64..50.0) {
        let xm = rows_to_matrix(&x);
        let m = ridge::fit(&xm, &y, a, false).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| v + c).collect();
        let ms = ridge::fit(&xm, &ys, a, false).unwrap();
        let scale = norm(&m.weights).max(1.0);
        for (u, v) in m.weights.iter().zip(&ms.weights) {
            prop_assert!((u - v).abs() <= 1e-8 * scale);
        }
        prop_assert!((ms.intercept - m.intercept - c).abs() <= 1e-7 * (1.0 + c.abs() + m.intercept.abs()));
    }

    #[test]
    fn mean_row_predicts_y_mean((x, y) in small_problem(), a in 1e-2f64..1e3) {
        let n = x.len() as f64;
        let p = x[0].len();
        let mean_row = DMatrix::from_fn(1, p, |_, j| x.iter().map(|r| r[j]).sum::<f64>() / n);
        let m = ridge::fit(&rows_to_matrix(&x), &y, a, false).unwrap();
        let ym = y.iter().sum::<f64>() / n;
        prop_assert!((m.predict(&mean_row).unwrap()[0] - ym).abs() <= 1e-9 * (1.0 + ym.abs()));
    }
}

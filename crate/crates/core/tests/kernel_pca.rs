mod common;

use common::*;
use dualspat::kpca::{fit_kpca, load_kpca, save_kpca, transform, KernelWidth, KpcaParams};
use nalgebra::DMatrix;
use rand::Rng;

fn samples(seed: u64, n: usize, d: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Gaussian-kernel scores of `queries` computed from an eigendecomposition
/// of the centred anchor kernel, `n_q x k`, with the sign of each component
/// fixed by its first anchor score.
fn oracle_scores(anchors: &[f64], queries: &[f64], d: usize, width: f64, k: usize) -> DMatrix<f64> {
    let n = anchors.len() / d;
    let q = queries.len() / d;
    let kern = |a: &[f64], b: &[f64]| {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        (-s / (2.0 * width * width)).exp()
    };
    let km = DMatrix::from_fn(n, n, |i, j| kern(&anchors[i * d..][..d], &anchors[j * d..][..d]));
    let one = DMatrix::from_element(n, n, 1.0 / n as f64);
    let centered = &km - &one * &km - &km * &one + &one * &km * &one;
    let eig = centered.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let kq = DMatrix::from_fn(q, n, |i, j| kern(&queries[i * d..][..d], &anchors[j * d..][..d]));
    let one_q = DMatrix::from_element(q, n, 1.0 / n as f64);
    let kq_c = &kq - &one_q * &km - &kq * &one + &one_q * &km * &one;
    let mut out = DMatrix::zeros(q, k);
    for (c, &col) in order.iter().take(k).enumerate() {
        let lambda = eig.eigenvalues[col];
        let mut v = eig.eigenvectors.column(col).into_owned();
        if v.iter().find(|x| x.abs() > 1e-10).is_some_and(|&x| x < 0.0) {
            v = -v;
        }
        let scores = &kq_c * &v / lambda.sqrt();
        out.set_column(c, &scores);
    }
    out
}

fn max_gap_up_to_sign(lib: &[f64], oracle: &DMatrix<f64>) -> f64 {
    let k = oracle.ncols();
    let mut worst: f64 = 0.0;
    for c in 0..k {
        let col: Vec<f64> = (0..oracle.nrows()).map(|i| lib[i * k + c]).collect();
        let plus = col.iter().enumerate().map(|(i, v)| (v - oracle[(i, c)]).abs()).fold(0.0, f64::max);
        let minus = col.iter().enumerate().map(|(i, v)| (v + oracle[(i, c)]).abs()).fold(0.0, f64::max);
        worst = worst.max(plus.min(minus));
    }
    worst
}

#[test]
fn gaussian_kpca_matches_direct_eigendecomposition() {
    let (n, d, k) = (12, 3, 4);
    let x = samples(1, n, d);
    let params = KpcaParams {
        kernel_width: KernelWidth::Value(0.8),
        ..KpcaParams::default()
    };
    let model = fit_kpca(&x, d, k, &params, 0).unwrap();
    let queries = samples(2, 5, d);
    let lib = transform(&model, &queries).unwrap();
    let gap = max_gap_up_to_sign(&lib, &oracle_scores(&x, &queries, d, 0.8, k));
    assert!(gap <= 1e-8, "{gap:e}");
}

#[test]
fn duplicated_anchors_leave_projections_unchanged() {
    let (n, d, k) = (10, 2, 3);
    let x = samples(3, n, d);
    let doubled: Vec<f64> = x.iter().chain(&x).copied().collect();
    let params = KpcaParams::default();
    let single = fit_kpca(&x, d, k, &params, 0).unwrap();
    let double = fit_kpca(&doubled, d, k, &params, 0).unwrap();
    assert_eq!(single.kernel_width, double.kernel_width);

    let from_double = transform(&double, &x).unwrap();
    let oracle = oracle_scores(&doubled, &x, d, double.kernel_width, k);
    assert!(max_gap_up_to_sign(&from_double, &oracle) <= 1e-6);

    let from_single = transform(&single, &x).unwrap();
    let single_oracle = DMatrix::from_row_slice(n, k, &from_single);
    let gap = max_gap_up_to_sign(&from_double, &single_oracle);
    assert!(gap <= 1e-6, "{gap:e}");
}

#[test]
fn rank_one_data_has_one_dominant_component() {
    // Points on a line; a very wide kernel behaves like the linear one.
    let x: Vec<f64> = (0..8).flat_map(|i| [i as f64 / 7.0, 2.0 * i as f64 / 7.0]).collect();
    let range = 2.0;
    let params = KpcaParams {
        kernel_width: KernelWidth::Value(1e3 * range),
        ..KpcaParams::default()
    };
    let model = fit_kpca(&x, 2, 3, &params, 0).unwrap();
    let ev = model.eigenvalues();
    let share = ev[0] / ev.iter().sum::<f64>();
    assert!(share >= 0.99, "{share}");
}

#[test]
fn fit_scores_are_centred() {
    let x = samples(4, 30, 4);
    let model = fit_kpca(&x, 4, 5, &KpcaParams::default(), 0).unwrap();
    for c in 0..5 {
        let mean: f64 = (0..30).map(|i| model.fit_scores()[i * 5 + c]).sum::<f64>() / 30.0;
        assert!(mean.abs() <= 1e-8, "component {c}: {mean:e}");
    }
    assert!(model.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn empty_query_gives_empty_output() {
    let x = samples(5, 6, 2);
    let model = fit_kpca(&x, 2, 2, &KpcaParams::default(), 0).unwrap();
    assert!(transform(&model, &[]).unwrap().is_empty());
    assert!(transform(&model, &[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn saved_model_projects_like_the_original_in_f32() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kpca.hdr");
    let x = samples(6, 20, 3);
    let model = fit_kpca(&x, 3, 3, &KpcaParams::default(), 0).unwrap();
    save_kpca(&model, &path).unwrap();
    let loaded = load_kpca::<f64>(&path).unwrap();
    let a = transform(&model, &x).unwrap();
    let b = transform(&loaded, &x).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() <= 1e-4, "{u} vs {v}");
    }
}

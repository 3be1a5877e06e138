use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::blocks::{Activation, DenseBlock};
use crate::diffcore::{ParamStore, Tensor};
use crate::dynamics::{DepthConfig, IntegratorKind, Schedule, Wiring};
use crate::models::{ModelConfig, TabularModel};
use crate::training::LearningCurve;

fn native(e: f64) -> f64 {
    0.3 + 2.0 * (-e / 12.0).exp()
}

fn planted(factor: f64, noise: f64, seed: u64) -> WarpFit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut jitter = |v: f64| v + noise * normal.sample(&mut rng);
    let n_native: Vec<f64> = (1..=160).map(|e| jitter(native(e as f64))).collect();
    let s: Vec<f64> = (1..=20).map(|e| jitter(native(factor * e as f64))).collect();
    let native_curve = LearningCurve::from_values("rmse", n_native.clone(), n_native);
    let score_curve = LearningCurve::from_values("rmse", s.clone(), s);
    time_warp_fit(&native_curve, &score_curve).unwrap()
}

#[test]
fn warp_recovers_planted_factor() {
    for c in [1.5, 2.0, 4.0, 8.0] {
        let fit = planted(c, 0.0, 0);
        assert!((fit.factor / c - 1.0).abs() <= 0.05, "{c}: {}", fit.factor);
    }
    let identity = planted(1.0, 0.0, 0);
    assert_eq!(identity.factor, 1.0);
    assert!(identity.residual < 1e-24);
}

#[test]
fn warp_grid_layout() {
    let grid = warp_grid();
    assert_eq!(grid.len(), 64);
    assert_eq!(grid[0], 1.0);
    assert!((grid[63] - 16.0).abs() < 1e-12);
    assert!(grid.windows(2).all(|w| w[1] > w[0]));
    assert!(grid[0] <= 1.5 && grid[63] >= 9.7);
}

#[test]
fn warp_preconditions() {
    let short = LearningCurve::from_values("rmse", vec![1.0; 5], vec![1.0; 5]);
    let long = LearningCurve::from_values("rmse", vec![1.0; 20], vec![1.0; 20]);
    assert!(time_warp_fit(&short, &long).is_err());
    let other = LearningCurve::from_values("mse", vec![1.0; 20], vec![1.0; 20]);
    assert!(time_warp_fit(&long, &other).is_err());
    let axis: Vec<f64> = (100..120).map(f64::from).collect();
    let early: Vec<f64> = (1..=20).map(|e| e as f64 * 0.001).collect();
    let err = time_warp_fit_series(&axis, &[1.0; 20], &early, &[1.0; 20]).unwrap_err();
    assert!(err.to_string().contains("overlap"));
}

#[test]
fn dense_block_count() {
    let mut store = ParamStore::new();
    DenseBlock::new(&mut store, "b", 128, Activation::Relu, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(store.count(), 128 * 128 + 128);
}

fn tabular_report(wiring: Wiring, k: usize, schedule: Schedule) -> ParamReport {
    let mut store = ParamStore::new();
    let depth = DepthConfig::new(wiring, k, IntegratorKind::Euler, schedule).unwrap();
    let cfg = ModelConfig {
        width: 16,
        ..ModelConfig::default()
    };
    let model = TabularModel::new(&mut store, 5, &cfg, depth, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let report = count_params(&store, &model);
    assert_eq!(report.total, store.count());
    assert_eq!(report.total, report.components.values().sum::<usize>());
    report
}

#[test]
fn counts_follow_sharing() {
    let block = 16 * 16 + 16;
    let one = tabular_report(Wiring::Base, 1, Schedule::InverseK);
    for k in 2..=7 {
        let score = tabular_report(Wiring::Score, k, Schedule::InverseK);
        let stacked = tabular_report(Wiring::Base, k, Schedule::InverseK);
        assert_eq!(score.component("blocks"), block);
        assert_eq!(score, one);
        assert_eq!(stacked.component("blocks"), k * block);
        assert_eq!(stacked.component("head"), score.component("head"));
        let learnable = tabular_report(Wiring::Score, k, Schedule::Learnable { alpha_init: 0.0 });
        assert_eq!(learnable.total, one.total + 1);
    }
    let cmp = ParamComparison::new(tabular_report(Wiring::Score, 4, Schedule::InverseK), tabular_report(Wiring::Skip05, 4, Schedule::InverseK));
    assert!(cmp.ratio > 1.0);
}

#[test]
fn dirichlet_examples() {
    let same = Tensor::from_rows(&vec![vec![1.0, -2.0]; 4]).unwrap();
    assert_eq!(dirichlet_energy(&same, &[(0, 1), (2, 3)]).unwrap().value, 0.0);
    let two = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
    assert_eq!(dirichlet_energy(&two, &[(0, 1)]).unwrap().value, 1.0);
    let empty = dirichlet_energy(&two, &[]).unwrap();
    assert!(empty.no_edges && empty.value == 0.0);
    assert!(dirichlet_energy(&two, &[(0, 2)]).is_err());
}

#[test]
fn dirichlet_permutation_and_duplicates() {
    let h = Tensor::matrix(4, 2, vec![0.0, 1.0, 2.0, -1.0, 0.5, 0.5, 3.0, 0.0]).unwrap();
    let edges = [(0, 1), (1, 2), (2, 3), (3, 0)];
    let e = dirichlet_energy(&h, &edges).unwrap().value;
    let perm = [2, 0, 3, 1];
    let mut inv = [0; 4];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let rows: Vec<Vec<f64>> = perm.iter().map(|&p| h.row(p).to_vec()).collect();
    let ph = Tensor::from_rows(&rows).unwrap();
    let pedges: Vec<_> = edges.iter().map(|&(u, v)| (inv[u], inv[v])).collect();
    assert!((dirichlet_energy(&ph, &pedges).unwrap().value - e).abs() < 1e-12);

    let gap = |u: usize, v: usize| h.row(u).iter().zip(h.row(v)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut dup = edges.to_vec();
    dup.push((1, 2));
    let want = (e * 4.0 + gap(1, 2)) / 5.0;
    assert!((dirichlet_energy(&h, &dup).unwrap().value - want).abs() < 1e-12);
}

#[test]
fn contraction_examples() {
    let id = contraction_estimate(|x| x.to_vec(), 5, 200, 0).unwrap();
    assert!((id - 1.0).abs() < 1e-12);
    let half = contraction_estimate(|x| x.iter().map(|v| 0.5 * v).collect(), 5, 200, 0).unwrap();
    assert!((half - 0.5).abs() < 1e-12);
    assert!(contraction_estimate(|x| x.to_vec(), 5, 99, 0).is_err());
}

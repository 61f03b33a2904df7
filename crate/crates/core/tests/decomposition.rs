mod common;

use common::{random_dataset, random_vec, rng};
use nalgebra::DMatrix;
use proptest::prelude::*;
use prunekit::decomposition::{
    achieved_ratio, decompose_network, decompose_train, rank_for_remain_rate, splice_factors, svd_oracle,
    DecompTrainConfig, DecomposeOptions, FactorPair,
};
use prunekit::{DenseNet, Matrix};
use rand::Rng;

fn random_matrix(seed: u64, m: usize, n: usize) -> Matrix {
    let mut r = rng(seed);
    Matrix::new(m, n, random_vec(&mut r, m * n, 1.0)).unwrap()
}

/// Best rank-`r` Frobenius error from nalgebra's singular values.
fn eckart_young(m: &Matrix, r: usize) -> f64 {
    let dm = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let mut sv: Vec<f64> = dm.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv[r.min(sv.len())..].iter().map(|s| s * s).sum::<f64>().sqrt()
}

#[test]
fn svd_oracle_agrees_with_nalgebra() {
    for (seed, (m, n, r)) in [(6, 5, 2), (20, 30, 4), (64, 64, 8), (40, 12, 11)].into_iter().enumerate() {
        let w = random_matrix(seed as u64, m, n);
        let ours = svd_oracle(&w, r).unwrap();
        let best = eckart_young(&w, r);
        assert!((ours.error - best).abs() <= 1e-8 * best.max(1.0), "{m}x{n} r{r}: {} vs {best}", ours.error);
        assert!((ours.factors.residual(&w).unwrap() - ours.error).abs() < 1e-8);
        let dm = DMatrix::from_row_slice(m, n, w.data());
        let mut sv: Vec<f64> = dm.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(ours.singular_values.len(), r);
        for (a, b) in ours.singular_values.iter().zip(&sv) {
            assert!((a - b).abs() < 1e-8 * b.max(1.0));
        }
    }
}

#[test]
fn trained_factors_are_near_optimal() {
    let mut r = rng(99);
    for case in 0..10u64 {
        let m = r.random_range(4..=64);
        let n = r.random_range(4..=64);
        let rank = r.random_range(1..=m.min(n) / 2);
        let w = random_matrix(1000 + case, m, n);
        let trained = decompose_train(&w, rank, &DecompTrainConfig { seed: case, ..DecompTrainConfig::default() }).unwrap();
        let best = eckart_young(&w, rank);
        // A rank-r factorisation can never beat the truncated SVD.
        assert!(trained.error >= best - 1e-9);
        assert!(trained.error <= 1.10 * best, "case {case} {m}x{n} r{rank}: {} vs {best}", trained.error);
    }
}

#[test]
fn error_is_monotone_in_rank() {
    let w = random_matrix(7, 24, 18);
    let errs: Vec<f64> = (1..=18).map(|r| svd_oracle(&w, r).unwrap().error).collect();
    for pair in errs.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-10);
    }
    assert!(errs[17] < 1e-8);
}

#[test]
fn splice_preserves_function_for_exact_factors() {
    let net = DenseNet::mlp(&[6, 8, 5, 3], 21).unwrap();
    let mut r = rng(21);
    // Build a layer of exact rank 2 and factor it losslessly.
    let a = Matrix::new(5, 2, random_vec(&mut r, 10, 1.0)).unwrap();
    let b = Matrix::new(2, 8, random_vec(&mut r, 16, 1.0)).unwrap();
    let mut low = net.clone();
    low.layers_mut()[1].weights = a.matmul(&b).unwrap();
    let spliced = splice_factors(&low, 1, &FactorPair::new(a, b, 1).unwrap()).unwrap();
    assert_eq!(spliced.layers().len(), 4);
    for _ in 0..50 {
        let x = random_vec(&mut r, 6, 2.0);
        let y0 = low.predict(&x).unwrap();
        let y1 = spliced.predict(&x).unwrap();
        for (u, v) in y0.iter().zip(&y1) {
            assert!((u - v).abs() <= 1e-9);
        }
    }
}

#[test]
fn network_report_accounts_parameters() {
    let net = DenseNet::mlp(&[10, 16, 12, 3], 4).unwrap();
    let cfg = DecompTrainConfig { epochs: 200, ..DecompTrainConfig::default() };
    let (out, report) = decompose_network(&net, 0.2, &cfg, DecomposeOptions::default()).unwrap();
    assert_eq!(report.layers.len(), 2);
    assert_eq!(out.layers().len(), 5);
    let replaced: usize = report.layers.iter().map(|l| l.params_before - l.params_after).sum();
    assert_eq!(report.params_after, report.params_before - replaced);
    assert_eq!(report.params_after, out.param_count());
    for l in &report.layers {
        assert_eq!(l.r, rank_for_remain_rate(l.m, l.n, 0.2).unwrap());
        assert!(l.frob_error >= l.oracle_error - 1e-9);
    }
    let data = random_dataset(4, 10, 3, 20);
    let tune = prunekit::TrainConfig { epochs: 2, ..Default::default() };
    let opts = DecomposeOptions { include_output: true, fine_tune: Some((&tune, &data)) };
    let (out, report) = decompose_network(&net, 0.2, &cfg, opts).unwrap();
    assert_eq!(report.layers.len(), 3);
    assert_eq!(out.layers().len(), 6);
    assert!(report.fine_tune.is_some());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn rank_rule_accounting(m in 1usize..600, n in 1usize..600, rate in 0.001f64..1.0) {
        let r = rank_for_remain_rate(m, n, rate).unwrap();
        prop_assert!(r >= 1 && r <= m.min(n));
        let ratio = achieved_ratio(m, n, r);
        prop_assert!((ratio - (r * (m + n)) as f64 / (m * n) as f64).abs() < 1e-15);
        // Floor rule: the achieved ratio stays at or below the request unless rank 1 or the cap forces it.
        let uncapped = (rate * (m * n) as f64 / (m + n) as f64 + 1e-9).floor() as usize;
        if uncapped >= 1 && uncapped <= m.min(n) {
            prop_assert_eq!(r, uncapped);
            prop_assert!(ratio <= rate + 1e-9);
            prop_assert!(achieved_ratio(m, n, r + 1) > rate - 1e-9);
        }
    }

    #[test]
    fn oracle_dominates_trained(seed in any::<u64>(), m in 2usize..12, n in 2usize..12) {
        let w = random_matrix(seed, m, n);
        let r = 1 + (seed as usize) % m.min(n);
        let cfg = DecompTrainConfig { epochs: 50, seed, ..DecompTrainConfig::default() };
        let trained = decompose_train(&w, r, &cfg).unwrap();
        let oracle = svd_oracle(&w, r).unwrap();
        prop_assert!(oracle.error <= trained.error + 1e-9);
        prop_assert!((trained.factors.residual(&w).unwrap() - trained.error).abs() < 1e-9);
    }
}

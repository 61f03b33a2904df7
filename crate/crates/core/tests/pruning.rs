mod common;

use common::{random_dataset, random_vec, rng, spearman};
use proptest::prelude::*;
use prunekit::linalg::Matrix;
use prunekit::nn::{cross_entropy, train_sgd, DenseNet, FrameDataset, TrainConfig};
use prunekit::pruning::{
    apply_pruning, csr_forward, dictionary_revise, gauss_newton_diagonal, prune_retrain_loop, saliency_magnitude,
    saliency_obd, saliency_obs, select_for_pruning, to_csr, Criterion, DeletionRule, LayerHessian, PruneRunConfig,
    RevisionMode, SaliencyMap, Schedule, SelectionScope, WeightIndex,
};
use prunekit::PruneMask;
use rand::Rng;

fn random_map(seed: u64, shapes: &[(usize, usize)]) -> SaliencyMap {
    let mut r = rng(seed);
    SaliencyMap {
        criterion: Criterion::Magnitude,
        scores: shapes
            .iter()
            .map(|&(a, b)| Matrix::new(a, b, (0..a * b).map(|_| r.random_range(0.0..1.0)).collect()).unwrap())
            .collect(),
    }
}

fn random_mask(seed: u64, shapes: &[(usize, usize)], density: f64) -> PruneMask {
    let mut r = rng(seed);
    let keep = shapes
        .iter()
        .map(|&(a, b)| (0..a * b).map(|_| r.random_bool(density)).collect())
        .collect();
    PruneMask::from_keep(shapes, keep, 0).unwrap()
}

fn rule_strategy() -> impl Strategy<Value = DeletionRule> {
    prop_oneof![
        (0.01f64..0.99).prop_map(DeletionRule::ProportionOfRemaining),
        (1usize..20).prop_map(DeletionRule::FixedCount),
        (0.0f64..1.0).prop_map(DeletionRule::Threshold),
        ((0.0f64..1.0), (0.01f64..1.0)).prop_map(|(t, f)| DeletionRule::ThresholdCapped {
            threshold: t,
            max_fraction: f
        }),
    ]
}

/// Expected selection size for one pool, straight from the rule definitions.
fn expected_size(rule: &DeletionRule, kept_scores: &[f64]) -> usize {
    let n = kept_scores.len();
    match *rule {
        DeletionRule::ProportionOfRemaining(p) => (p * n as f64).floor() as usize,
        DeletionRule::FixedCount(k) => k.min(n),
        DeletionRule::Threshold(t) => kept_scores.iter().filter(|&&s| s < t).count(),
        DeletionRule::ThresholdCapped { threshold, max_fraction } => kept_scores
            .iter()
            .filter(|&&s| s < threshold)
            .count()
            .min((max_fraction * n as f64).floor() as usize),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn selection_size_and_membership(seed in any::<u64>(), rule in rule_strategy(), density in 0.0f64..1.0, global in any::<bool>()) {
        let shapes = [(4, 5), (3, 4), (2, 3)];
        let sal = random_map(seed, &shapes);
        let mask = random_mask(seed ^ 1, &shapes, density);
        let scope = if global { SelectionScope::Global } else { SelectionScope::PerLayer };
        let sel = select_for_pruning(&sal, &mask, &rule, scope).unwrap();
        for idx in &sel {
            prop_assert!(mask.layer(idx.layer).is_kept(idx.row, idx.col));
        }
        let kept = |k: usize| -> Vec<f64> {
            sal.scores[k].data().iter().enumerate()
                .filter(|(f, _)| mask.layer(k).is_kept_flat(*f)).map(|(_, &s)| s).collect()
        };
        if global {
            let all: Vec<f64> = (0..shapes.len()).flat_map(kept).collect();
            prop_assert_eq!(sel.len(), expected_size(&rule, &all));
        } else {
            for k in 0..shapes.len() {
                let count = sel.iter().filter(|i| i.layer == k).count();
                prop_assert_eq!(count, expected_size(&rule, &kept(k)));
            }
        }
        // Every selected entry scores no higher than any unselected kept entry of its pool.
        for k in 0..shapes.len() {
            let chosen: Vec<f64> = sel.iter().filter(|i| i.layer == k).map(|i| sal.scores[k].get(i.row, i.col)).collect();
            if let Some(max_chosen) = chosen.iter().copied().reduce(f64::max) {
                if !global {
                    let rest_min = sal.scores[k].data().iter().enumerate()
                        .filter(|(f, _)| mask.layer(k).is_kept_flat(*f))
                        .filter(|(f, _)| !sel.contains(&WeightIndex { layer: k, row: f / shapes[k].1, col: f % shapes[k].1 }))
                        .map(|(_, &s)| s).fold(f64::INFINITY, f64::min);
                    prop_assert!(max_chosen <= rest_min);
                }
            }
        }
    }

    #[test]
    fn magnitude_selection_is_scale_equivariant(seed in any::<u64>(), c in 0.01f64..100.0, layer in 0usize..2) {
        let net = DenseNet::mlp(&[5, 6, 3], seed).unwrap();
        let mut scaled = net.clone();
        scaled.layers_mut()[layer].weights.data_mut().iter_mut().for_each(|w| *w *= c);
        let mask = PruneMask::full(&net);
        let rule = DeletionRule::ProportionOfRemaining(0.4);
        let a = select_for_pruning(&saliency_magnitude(&net), &mask, &rule, SelectionScope::PerLayer).unwrap();
        let b = select_for_pruning(&saliency_magnitude(&scaled), &mask, &rule, SelectionScope::PerLayer).unwrap();
        let mut a = a; a.sort();
        let mut b = b; b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn magnitude_order_matches_sort_oracle(seed in any::<u64>()) {
        let mut r = rng(seed);
        let w = Matrix::new(4, 4, random_vec(&mut r, 16, 3.0)).unwrap();
        let net = DenseNet::new(4, vec![prunekit::Layer::new(w.clone(), vec![0.0; 4], prunekit::Activation::Identity).unwrap()]).unwrap();
        let sel = select_for_pruning(&saliency_magnitude(&net), &PruneMask::full(&net), &DeletionRule::FixedCount(16), SelectionScope::PerLayer).unwrap();
        let mut oracle: Vec<usize> = (0..16).collect();
        oracle.sort_by(|&a, &b| w.data()[a].abs().total_cmp(&w.data()[b].abs()).then(a.cmp(&b)));
        let got: Vec<usize> = sel.iter().map(|i| i.row * 4 + i.col).collect();
        prop_assert_eq!(got, oracle);
    }

    #[test]
    fn apply_pruning_counts(seed in any::<u64>(), density in 0.0f64..1.0) {
        let mut net = DenseNet::mlp(&[4, 5, 2], seed).unwrap();
        let mut mask = PruneMask::full(&net);
        let mut r = rng(seed);
        let mut sel = Vec::new();
        for (k, (a, b)) in net.shapes().into_iter().enumerate() {
            for f in 0..a * b {
                if r.random_bool(density) {
                    sel.push(WeightIndex { layer: k, row: f / b, col: f % b });
                }
            }
        }
        let before = mask.remain_count();
        let removed = apply_pruning(&mut net, &mut mask, &sel).unwrap();
        prop_assert_eq!(removed, sel.len());
        prop_assert_eq!(mask.remain_count(), before - sel.len());
        for idx in &sel {
            prop_assert_eq!(net.layers()[idx.layer].weights.get(idx.row, idx.col), 0.0);
        }
    }

    #[test]
    fn literal_revision_direction(seed in any::<u64>()) {
        let mut net = DenseNet::mlp(&[4, 5, 2], seed).unwrap();
        let data = random_dataset(seed, 4, 2, 10);
        let sal = prunekit::pruning::saliency_dictionary(&net, &data).unwrap();
        let mut mask = PruneMask::full(&net);
        let sel = select_for_pruning(&sal, &mask, &DeletionRule::ProportionOfRemaining(0.3), SelectionScope::PerLayer).unwrap();
        apply_pruning(&mut net, &mut mask, &sel).unwrap();
        let before = net.clone();
        dictionary_revise(&mut net, &mask, &sal, RevisionMode::Literal).unwrap();
        for (k, (old, new)) in before.layers().iter().zip(net.layers()).enumerate() {
            for i in 0..old.weights.rows() {
                let lost_input = (0..old.weights.cols()).any(|j| !mask.layer(k).is_kept(i, j));
                for j in 0..old.weights.cols() {
                    let (o, n) = (old.weights.get(i, j), new.weights.get(i, j));
                    if !lost_input || !mask.layer(k).is_kept(i, j) {
                        prop_assert_eq!(o, n);
                    } else {
                        // Literal revision adds sign(w)·w·r with r ≥ 0, which never lowers a weight.
                        prop_assert!(n >= o);
                    }
                }
            }
        }
    }

    #[test]
    fn obs_quadratic_oracle(seed in any::<u64>(), n in 2usize..7) {
        // Random SPD H = GᵀG + I and optimum w*; E(w) = ½ (w − w*)ᵀ H (w − w*).
        let mut r = rng(seed);
        let g = Matrix::new(n, n, random_vec(&mut r, n * n, 1.0)).unwrap();
        let mut h = g.transpose().matmul(&g).unwrap();
        for i in 0..n { h.set(i, i, h.get(i, i) + 1.0); }
        let w_star = random_vec(&mut r, n, 2.0);
        let energy = |w: &[f64]| {
            let d: Vec<f64> = w.iter().zip(&w_star).map(|(a, b)| a - b).collect();
            let hd = h.matvec(&d).unwrap();
            0.5 * d.iter().zip(&hd).map(|(a, b)| a * b).sum::<f64>()
        };
        let q = r.random_range(0..n);
        let mut hess = LayerHessian::new(0, (0..n).collect(), h.clone(), 0.0).unwrap();
        let mut w = w_star.clone();
        let predicted = hess.prune_position(&mut w, None, q);
        prop_assert_eq!(w[q], 0.0);
        prop_assert!((predicted - energy(&w)).abs() < 1e-8, "{} vs {}", predicted, energy(&w));
    }

    #[test]
    fn obs_equals_obd_on_diagonal_hessians(diag in prop::collection::vec(0.1f64..10.0, 1..8), seed in any::<u64>()) {
        let mut r = rng(seed);
        let w = random_vec(&mut r, diag.len(), 3.0);
        let hess = LayerHessian::new(0, (0..diag.len()).collect(), Matrix::from_diag(&diag), 0.0).unwrap();
        let obs = hess.saliencies(&w);
        let obd = prunekit::pruning::obd_saliencies(&w, &diag);
        for (a, b) in obs.iter().zip(&obd) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
}

#[test]
fn csr_matches_masked_dense_at_five_percent() {
    let mut net = DenseNet::mlp(&[20, 32, 32, 4], 11).unwrap();
    let mask = random_mask(12, &net.shapes(), 0.05);
    mask.apply_to(&mut net).unwrap();
    let sparse = to_csr(&net, &mask).unwrap();
    assert_eq!(sparse.stored_count(), mask.remain_count());
    let mut r = rng(13);
    for _ in 0..100 {
        let x = random_vec(&mut r, 20, 3.0);
        let dense = net.predict(&x).unwrap();
        let sp = csr_forward(&sparse, &x).unwrap();
        for (a, b) in dense.iter().zip(&sp) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

fn noisy_two_class(seed: u64, frames: usize) -> FrameDataset {
    let mut r = rng(seed);
    let rows: Vec<(Vec<f64>, usize)> = (0..frames)
        .map(|i| {
            let c = i % 2;
            let s = if c == 0 { -0.7 } else { 0.7 };
            (vec![s + r.random_range(-1.0..1.0), -s + r.random_range(-1.0..1.0)], c)
        })
        .collect();
    FrameDataset::from_frames(2, 2, &rows).unwrap()
}

#[test]
fn obd_ranks_like_deletion_oracle() {
    let data = noisy_two_class(5, 300);
    let mut net = DenseNet::mlp(&[2, 4, 2], 2).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.1,
        epochs: 300,
        batch_size: 300,
        seed: 0,
        lr_decay: 0.995,
    };
    train_sgd(&mut net, &data, &cfg, None).unwrap();
    let (sal, hess) = saliency_obd(&net, &data).unwrap();
    assert!(hess.diag.iter().all(|m| m.data().iter().all(|&h| h >= 0.0)));
    let base = cross_entropy(&net, &data).unwrap();
    let mut predicted = Vec::new();
    let mut measured = Vec::new();
    for k in 0..net.layers().len() {
        for f in 0..net.layers()[k].weights.len() {
            let mut probe = net.clone();
            probe.layers_mut()[k].weights.data_mut()[f] = 0.0;
            measured.push(cross_entropy(&probe, &data).unwrap() - base);
            predicted.push(sal.scores[k].data()[f]);
        }
    }
    let rho = spearman(&predicted, &measured);
    assert!(rho >= 0.8, "spearman {rho}");
}

#[test]
fn gauss_newton_diagonal_matches_obs_hessian_diagonal() {
    let net = DenseNet::mlp(&[3, 4, 2], 4).unwrap();
    let data = random_dataset(4, 3, 2, 25);
    let diag = gauss_newton_diagonal(&net, &data, None).unwrap();
    for layer in 0..2 {
        let (_, hess) = saliency_obs(&net, &data, layer, 1e-4, None).unwrap();
        let d = &diag.diag[layer];
        let mean = d.data().iter().sum::<f64>() / d.len() as f64;
        for (t, &flat) in hess.active().iter().enumerate() {
            let undamped = hess.hessian().get(t, t) - 1e-4 * mean;
            assert!((undamped - d.data()[flat]).abs() < 1e-12);
        }
    }
}

#[test]
fn mask_is_monotone_across_a_run() {
    let data = random_dataset(8, 4, 3, 60);
    let net = DenseNet::mlp(&[4, 8, 3], 8).unwrap();
    let mut masks = Vec::new();
    for target in [0.8, 0.6, 0.4, 0.2] {
        let mut cfg = PruneRunConfig::new(
            Criterion::Magnitude,
            Schedule {
                rule: DeletionRule::ProportionOfRemaining(0.3),
                iterations_between_prunes: 1,
            },
            target,
        );
        cfg.retrain.seed = 1;
        masks.push(prune_retrain_loop(net.clone(), &data, &cfg).unwrap().mask);
    }
    // Runs share their prefix, so each later mask is a subset of the earlier one.
    for pair in masks.windows(2) {
        for (a, b) in pair[0].layers().iter().zip(pair[1].layers()) {
            for (ka, kb) in a.keep().iter().zip(b.keep()) {
                assert!(*ka || !*kb);
            }
        }
    }
}

#[test]
fn obs_loop_keeps_masked_weights_zero() {
    let data = random_dataset(3, 3, 2, 40);
    let net = DenseNet::mlp(&[3, 5, 2], 3).unwrap();
    let mut cfg = PruneRunConfig::new(
        Criterion::Obs,
        Schedule {
            rule: DeletionRule::ProportionOfRemaining(0.5),
            iterations_between_prunes: 1,
        },
        0.2,
    );
    cfg.hessian_frames = Some(20);
    let run = prune_retrain_loop(net, &data, &cfg).unwrap();
    for (k, layer) in run.net.layers().iter().enumerate() {
        for (f, &w) in layer.weights.data().iter().enumerate() {
            if !run.mask.layer(k).is_kept_flat(f) {
                assert_eq!(w, 0.0);
            }
        }
    }
    assert!(run.mask.remain_rate() <= 0.2);
}

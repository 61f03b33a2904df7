mod common;

use common::{random_dataset, random_vec, rng};
use proptest::prelude::*;
use prunekit::nn::{
    cross_entropy, frame_accuracy, loss_gradient, mlp_param_count, softmax, train_sgd, width_for_param_budget,
    Activation, DenseNet, FrameDataset, Layer, TrainConfig,
};
use prunekit::{Matrix, PruneMask};
use rand::Rng;

fn blob_data(seed: u64, frames: usize) -> FrameDataset {
    let mut r = rng(seed);
    let rows: Vec<(Vec<f64>, usize)> = (0..frames)
        .map(|i| {
            let c = i % 2;
            let centre = if c == 0 { -2.0 } else { 2.0 };
            let x = vec![centre + r.random_range(-1.0..1.0), centre + r.random_range(-1.0..1.0)];
            (x, c)
        })
        .collect();
    FrameDataset::from_frames(2, 2, &rows).unwrap()
}

/// Plain logistic regression by full-batch gradient descent.
fn logistic_oracle_accuracy(data: &FrameDataset) -> f64 {
    let (mut w, mut b) = ([0.0f64; 2], 0.0f64);
    for _ in 0..2000 {
        let (mut gw, mut gb) = ([0.0; 2], 0.0);
        for (x, y) in data.iter() {
            let z = w[0] * x[0] + w[1] * x[1] + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let e = p - y as f64;
            gw[0] += e * x[0];
            gw[1] += e * x[1];
            gb += e;
        }
        let n = data.len() as f64;
        w[0] -= 0.1 * gw[0] / n;
        w[1] -= 0.1 * gw[1] / n;
        b -= 0.1 * gb / n;
    }
    let correct = data
        .iter()
        .filter(|(x, y)| ((w[0] * x[0] + w[1] * x[1] + b > 0.0) as usize) == *y)
        .count();
    correct as f64 / data.len() as f64
}

#[test]
fn blob_training_matches_logistic_oracle() {
    let data = blob_data(3, 400);
    let oracle = logistic_oracle_accuracy(&data);
    assert!(oracle >= 0.99, "oracle {oracle}");
    let mut net = DenseNet::mlp(&[2, 8, 2], 1).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.1,
        epochs: 30,
        ..TrainConfig::default()
    };
    let report = train_sgd(&mut net, &data, &cfg, None).unwrap();
    assert!(report.final_loss <= report.initial_loss);
    let acc = frame_accuracy(&net, &data).unwrap();
    assert!(acc >= 0.99, "net accuracy {acc}");
}

#[test]
fn zero_epochs_leave_network_unchanged() {
    let data = blob_data(0, 20);
    let net0 = DenseNet::mlp(&[2, 3, 2], 0).unwrap();
    let mut net = net0.clone();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let report = train_sgd(&mut net, &data, &cfg, None).unwrap();
    assert_eq!(net, net0);
    assert_eq!(report.final_loss, report.initial_loss);
    assert!(report.epoch_losses.is_empty());
}

#[test]
fn uniform_posteriors_give_ln3() {
    let layer = Layer::new(Matrix::zeros(3, 2), vec![0.0; 3], Activation::Softmax).unwrap();
    let net = DenseNet::new(2, vec![layer]).unwrap();
    let data = random_dataset(1, 2, 3, 10);
    let ce = cross_entropy(&net, &data).unwrap();
    assert!((ce - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn perfect_predictor_has_near_zero_loss() {
    // Logits scaled so the true class wins overwhelmingly.
    let layer = Layer::new(Matrix::identity(2), vec![0.0; 2], Activation::Softmax).unwrap();
    let mut net = DenseNet::new(2, vec![layer]).unwrap();
    net.layers_mut()[0].weights = Matrix::from_rows(&[vec![1000.0, 0.0], vec![0.0, 1000.0]]).unwrap();
    let data = FrameDataset::from_frames(2, 2, &[(vec![1.0, 0.0], 0), (vec![0.0, 1.0], 1)]).unwrap();
    assert!(cross_entropy(&net, &data).unwrap() < 1e-12);
    assert_eq!(frame_accuracy(&net, &data).unwrap(), 1.0);
}

#[test]
fn full_scale_parameter_counts() {
    let big = DenseNet::mlp(&[858, 512, 512, 512, 512, 3], 0).unwrap();
    let by_hand = 858 * 512 + 512 + 3 * (512 * 512 + 512) + 512 * 3 + 3;
    assert_eq!(by_hand, 1_229_315);
    assert_eq!(big.param_count(), by_hand);
    assert_eq!(mlp_param_count(858, 3, 512, 4), by_hand);
    // 4-byte reals: about 4.7 MiB.
    let mib = by_hand as f64 * 4.0 / (1024.0 * 1024.0);
    assert!((mib - 4.7).abs() < 0.05, "{mib}");
    assert_eq!(mlp_param_count(858, 3, 512, 3), 966_659);
}

#[test]
fn width_search_rounds_down() {
    assert_eq!(width_for_param_budget(40, 3, 3, 740), Some(10));
    assert!(mlp_param_count(40, 3, 10, 3) <= 740);
    assert!(mlp_param_count(40, 3, 11, 3) > 740);
    assert_eq!(width_for_param_budget(40, 3, 3, 10), None);
}

fn small_net_strategy() -> impl Strategy<Value = (Vec<usize>, u64, bool)> {
    (
        prop::collection::vec(1usize..=8, 1..=3),
        any::<u64>(),
        any::<bool>(),
    )
        .prop_map(|(hidden, seed, sigmoid)| {
            let mut dims = vec![3];
            dims.extend(&hidden[..hidden.len() - 1]);
            dims.push(hidden[hidden.len() - 1].max(2));
            (dims, seed, sigmoid)
        })
}

fn min_abs_hidden_pre(net: &DenseNet, data: &FrameDataset) -> f64 {
    let mut m = f64::INFINITY;
    for (x, _) in data.iter() {
        let t = net.forward(x).unwrap();
        for pre in &t.pre_activations[..t.pre_activations.len() - 1] {
            for v in pre {
                m = m.min(v.abs());
            }
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let mut out = vec![0.0; logits.len()];
        softmax(&logits, &mut out);
        prop_assert!(out.iter().all(|&p| p >= 0.0));
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_central_differences((dims, seed, sigmoid) in small_net_strategy()) {
        let hidden = if sigmoid { Activation::Sigmoid } else { Activation::Relu };
        let mut net = DenseNet::init(&dims, hidden, Activation::Softmax, seed).unwrap();
        let mut r = rng(seed ^ 0x5eed);
        for layer in net.layers_mut() {
            layer.bias = random_vec(&mut r, layer.bias.len(), 0.5);
        }
        let data = random_dataset(seed.wrapping_add(7), dims[0], *dims.last().unwrap(), 6);
        // ReLU kinks make finite differences meaningless within a step of zero.
        prop_assume!(sigmoid || min_abs_hidden_pre(&net, &data) > 1e-3);
        let (_, grads) = loss_gradient(&net, &data).unwrap();
        let h = 1e-4;
        for k in 0..net.layers().len() {
            let n_w = net.layers()[k].weights.len();
            for idx in 0..n_w + net.layers()[k].bias.len() {
                let bump = |net: &mut DenseNet, delta: f64| {
                    let l = &mut net.layers_mut()[k];
                    if idx < n_w { l.weights.data_mut()[idx] += delta } else { l.bias[idx - n_w] += delta }
                };
                let mut plus = net.clone();
                bump(&mut plus, h);
                let mut minus = net.clone();
                bump(&mut minus, -h);
                let numeric = (cross_entropy(&plus, &data).unwrap() - cross_entropy(&minus, &data).unwrap()) / (2.0 * h);
                let analytic = if idx < n_w { grads.weights[k].data()[idx] } else { grads.bias[k][idx - n_w] };
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-7);
                prop_assert!(rel < 1e-4 || (numeric - analytic).abs() < 1e-9,
                    "layer {} idx {}: numeric {} analytic {}", k, idx, numeric, analytic);
            }
        }
    }

    #[test]
    fn masked_training_keeps_pruned_weights_zero(seed in any::<u64>(), density in 0.1f64..0.9) {
        let mut net = DenseNet::mlp(&[3, 6, 2], seed).unwrap();
        let mut r = rng(seed);
        let keep: Vec<Vec<bool>> = net.shapes().iter()
            .map(|&(a, b)| (0..a * b).map(|_| r.random_bool(density)).collect())
            .collect();
        let mask = PruneMask::from_keep(&net.shapes(), keep, 1).unwrap();
        let data = random_dataset(seed, 3, 2, 30);
        let cfg = TrainConfig { epochs: 3, batch_size: 4, seed, ..TrainConfig::default() };
        train_sgd(&mut net, &data, &cfg, Some(&mask)).unwrap();
        for (k, layer) in net.layers().iter().enumerate() {
            for (f, &w) in layer.weights.data().iter().enumerate() {
                if !mask.layer(k).is_kept_flat(f) {
                    prop_assert_eq!(w, 0.0);
                }
            }
        }
    }

    #[test]
    fn training_never_ends_above_initial_loss(seed in any::<u64>(), lr in 0.01f64..3.0) {
        let mut net = DenseNet::mlp(&[3, 5, 3], seed).unwrap();
        let data = random_dataset(seed, 3, 3, 24);
        let cfg = TrainConfig { learning_rate: lr, epochs: 4, batch_size: 5, seed, lr_decay: 1.0 };
        match train_sgd(&mut net, &data, &cfg, None) {
            Ok(report) => {
                prop_assert!(report.final_loss <= report.initial_loss);
                prop_assert!((cross_entropy(&net, &data).unwrap() - report.final_loss).abs() < 1e-12);
            }
            Err(prunekit::Error::NonFinite(_)) => {}
            Err(e) => prop_assert!(false, "{}", e),
        }
    }

    #[test]
    fn forward_matches_by_hand_matvec(seed in any::<u64>()) {
        let net = DenseNet::init(&[4, 3, 2], Activation::Relu, Activation::Identity, seed).unwrap();
        let mut r = rng(seed);
        let x = random_vec(&mut r, 4, 2.0);
        let l0 = &net.layers()[0];
        let l1 = &net.layers()[1];
        let hidden: Vec<f64> = (0..3)
            .map(|i| ((0..4).map(|j| l0.weights.get(i, j) * x[j]).sum::<f64>() + l0.bias[i]).max(0.0))
            .collect();
        let out: Vec<f64> = (0..2)
            .map(|i| (0..3).map(|j| l1.weights.get(i, j) * hidden[j]).sum::<f64>() + l1.bias[i])
            .collect();
        let got = net.predict(&x).unwrap();
        for (a, b) in got.iter().zip(&out) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

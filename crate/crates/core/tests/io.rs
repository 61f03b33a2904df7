mod common;

use common::{random_dataset, random_vec, rng};
use proptest::prelude::*;
use prunekit::io::{
    parse_features, parse_labels, parse_model, write_features, write_labels, write_model, write_roc_csv,
};
use prunekit::kws::{RocCurve, RocPoint};
use prunekit::{DenseNet, Error, PruneMask};
use rand::Rng;

fn to_string(f: impl FnOnce(&mut Vec<u8>)) -> String {
    let mut buf = Vec::new();
    f(&mut buf);
    String::from_utf8(buf).unwrap()
}

fn model_text(net: &DenseNet, mask: Option<&PruneMask>) -> String {
    to_string(|b| write_model(b, net, mask).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn model_round_trip_is_bit_identical(seed in any::<u64>(), hidden in prop::collection::vec(1usize..9, 1..4), density in 0.0f64..1.0, with_mask in any::<bool>()) {
        let mut dims = vec![5];
        dims.extend(&hidden);
        dims.push(3);
        let mut net = DenseNet::mlp(&dims, seed).unwrap();
        let mut r = rng(seed);
        for layer in net.layers_mut() {
            // Exercise extreme magnitudes too.
            layer.bias = random_vec(&mut r, layer.bias.len(), 1.0).into_iter().map(|v| v * 10f64.powi(r.random_range(-300..300))).collect();
        }
        let keep: Vec<Vec<bool>> = net.shapes().iter().map(|&(a, b)| (0..a * b).map(|_| r.random_bool(density)).collect()).collect();
        let mask = PruneMask::from_keep(&net.shapes(), keep, seed as usize % 7).unwrap();
        let mask = with_mask.then_some(mask);
        let text = model_text(&net, mask.as_ref());
        let (back, back_mask) = parse_model(&text).unwrap();
        prop_assert_eq!(&back, &net);
        for (a, b) in back.layers().iter().zip(net.layers()) {
            for (x, y) in a.weights.data().iter().zip(b.weights.data()).chain(a.bias.iter().zip(&b.bias)) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        prop_assert_eq!(&back_mask, &mask);
        if let (Some(m), Some(bm)) = (&mask, &back_mask) {
            let counted: usize = m.layers().iter().map(|l| l.keep().iter().filter(|&&k| k).count()).sum();
            prop_assert_eq!(bm.remain_count(), counted);
        }
        prop_assert_eq!(model_text(&back, back_mask.as_ref()), text);
    }

    #[test]
    fn features_round_trip(seed in any::<u64>(), dim in 1usize..7, classes in 2usize..5, frames in 0usize..30) {
        let data = random_dataset(seed, dim, classes, frames);
        let text = to_string(|b| write_features(b, &data).unwrap());
        let back = parse_features(&text).unwrap();
        prop_assert_eq!(&back, &data);
    }

    #[test]
    fn labels_round_trip(rows in prop::collection::vec((0usize..10, 0usize..100_000), 0..40)) {
        let text = to_string(|b| write_labels(b, &rows).unwrap());
        prop_assert_eq!(parse_labels(&text).unwrap(), rows);
    }
}

#[test]
fn truncated_model_names_line_and_offset() {
    let net = DenseNet::mlp(&[3, 4, 2], 1).unwrap();
    let text = model_text(&net, None);
    let cut = &text[..text.len() / 2];
    match parse_model(cut) {
        Err(Error::Parse { line, offset, .. }) => {
            assert!(line >= 1);
            assert!(offset <= cut.len());
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn bad_token_reports_its_byte_offset() {
    let text = "feature_dim,2\nnum_classes,2\n0,1.0,2.0\n1,3.0,oops\n";
    match parse_features(text) {
        Err(Error::Parse { line, offset, .. }) => {
            assert_eq!(line, 4);
            assert_eq!(offset, text.find("oops").unwrap());
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn label_out_of_range_is_rejected() {
    let text = "feature_dim,1\nnum_classes,2\n5,1.0\n";
    assert!(matches!(parse_features(text), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn roc_csv_layout() {
    let roc = RocCurve {
        points: vec![RocPoint { threshold: 0.5, ta_rate: 1.0, fa_per_hour: 0.0 }],
    };
    let text = to_string(|b| write_roc_csv(b, &roc).unwrap());
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("threshold,ta_rate,fa_per_hour"));
    assert_eq!(lines.next().map(|l| l.split(',').count()), Some(3));
    assert_eq!(lines.next(), None);
}

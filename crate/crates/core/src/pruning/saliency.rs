use super::{Criterion, SaliencyMap};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::nn::{DenseNet, FrameDataset, Workspace};

/// `score = |w|` for every weight.
pub fn saliency_magnitude(net: &DenseNet) -> SaliencyMap {
    let scores = net
        .layers()
        .iter()
        .map(|l| {
            let (r, c) = l.weights.shape();
            let data = l.weights.data().iter().map(|w| w.abs()).collect();
            Matrix::new(r, c, data).expect("shape preserved")
        })
        .collect();
    SaliencyMap {
        criterion: Criterion::Magnitude,
        scores,
    }
}

/// Affine-transformation value: for the edge from node `j` of the previous
/// layer into node `i`, the sum over frames of `|w_ij · a_j|`, where `a_j` is
/// the post-activation of node `j` (the raw input for the first layer).
pub fn saliency_affine(net: &DenseNet, data: &FrameDataset) -> Result<SaliencyMap> {
    importance_sums(net, data, Criterion::Affine)
}

/// Dictionary importance. Same statistic as [`saliency_affine`]; the tag makes
/// the prune loop run [`super::dictionary_revise`] after deleting weights.
pub fn saliency_dictionary(net: &DenseNet, data: &FrameDataset) -> Result<SaliencyMap> {
    importance_sums(net, data, Criterion::Dictionary)
}

fn importance_sums(net: &DenseNet, data: &FrameDataset, criterion: Criterion) -> Result<SaliencyMap> {
    data.check_compatible(net)?;
    // Σ_k |w_ij a_j(k)| = |w_ij| Σ_k |a_j(k)|, so only per-input sums are needed.
    let mut input_abs: Vec<Vec<f64>> = net.layers().iter().map(|l| vec![0.0; l.in_dim()]).collect();
    let mut ws = Workspace::new(net);
    for (x, _) in data.iter() {
        ws.forward(net, x);
        for (k, sums) in input_abs.iter_mut().enumerate() {
            for (s, a) in sums.iter_mut().zip(ws.layer_input(k, x)) {
                *s += a.abs();
            }
        }
    }
    let scores = net
        .layers()
        .iter()
        .zip(&input_abs)
        .map(|(l, sums)| {
            let (rows, cols) = l.weights.shape();
            let mut m = Matrix::zeros(rows, cols);
            for i in 0..rows {
                for (s, (w, a)) in m.row_mut(i).iter_mut().zip(l.weights.row(i).iter().zip(sums)) {
                    *s = w.abs() * a;
                }
            }
            m
        })
        .collect();
    Ok(SaliencyMap { criterion, scores })
}

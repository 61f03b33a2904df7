//! Second-order saliencies.
//!
//! Both criteria use the Gauss–Newton approximation of the loss Hessian. For
//! a softmax output with cross-entropy loss it equals the expected outer
//! product of per-frame gradients with the label drawn from the model's own
//! posterior:
//!
//! ```text
//! H ≈ (1/N) Σ_frames Σ_c p_c · g_c g_cᵀ,   g_c = ∇ℓ(frame, label = c)
//! ```
//!
//! which is positive semidefinite by construction. With ReLU hidden units
//! (piecewise linear) it coincides with the exact Hessian away from kinks.
//!
//! OBD keeps the diagonal and scores `h_qq · w_q² / 2`. OBS keeps the full
//! Hessian of one layer, damped by `λI`, and scores `w_q² / (2 [H⁻¹]_qq)`;
//! deleting `q` comes with the compensating update `δw = −(w_q / [H⁻¹]_qq) H⁻¹ e_q`.

use super::{Criterion, SaliencyMap};
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, Matrix};
use crate::mask::PruneMask;
use crate::nn::{Activation, DenseNet, FrameDataset, Workspace};

/// Largest layer (in weights) accepted for a full OBS Hessian.
pub const OBS_MAX_WEIGHTS: usize = 4096;

/// Per-weight diagonal Hessian estimates, one matrix per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalHessian {
    pub diag: Vec<Matrix>,
}

/// `h · w² / 2` elementwise.
pub fn obd_saliencies(weights: &[f64], diag: &[f64]) -> Vec<f64> {
    weights.iter().zip(diag).map(|(w, h)| h * w * w / 2.0).collect()
}

fn frame_indices(n: usize, max_frames: Option<usize>) -> Vec<usize> {
    match max_frames {
        Some(m) if m > 0 && m < n => (0..m).map(|i| i * n / m).collect(),
        _ => (0..n).collect(),
    }
}

fn check_softmax(net: &DenseNet) -> Result<()> {
    match net.layers().last().map(|l| l.activation) {
        Some(Activation::Softmax) => Ok(()),
        _ => Err(Error::InvalidConfig(
            "second-order criteria need a softmax output layer".into(),
        )),
    }
}

/// Visits every (frame, class) pair with the backpropagated deltas for that
/// pseudo-label and its weight `p_c / N_frames`.
fn for_each_pseudo_label(
    net: &DenseNet,
    data: &FrameDataset,
    max_frames: Option<usize>,
    mut visit: impl FnMut(&Workspace, &[f64], f64),
) -> Result<()> {
    data.check_compatible(net)?;
    check_softmax(net)?;
    let indices = frame_indices(data.len(), max_frames);
    let scale = 1.0 / indices.len() as f64;
    let last = net.layers().len() - 1;
    let mut ws = Workspace::new(net);
    let mut posterior = vec![0.0; net.output_dim()];
    for i in indices {
        let x = data.features(i);
        ws.forward(net, x);
        posterior.copy_from_slice(ws.output());
        for (c, &p) in posterior.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let delta = ws.delta_mut(last);
            delta.copy_from_slice(&posterior);
            delta[c] -= 1.0;
            ws.backward(net);
            visit(&ws, x, p * scale);
        }
    }
    Ok(())
}

/// Gauss–Newton diagonal of the mean cross-entropy Hessian for every weight.
/// `max_frames` subsamples evenly spaced frames.
pub fn gauss_newton_diagonal(
    net: &DenseNet,
    data: &FrameDataset,
    max_frames: Option<usize>,
) -> Result<DiagonalHessian> {
    let mut diag: Vec<Matrix> = net
        .layers()
        .iter()
        .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
        .collect();
    let mut sq_input: Vec<Vec<f64>> = net.layers().iter().map(|l| vec![0.0; l.in_dim()]).collect();
    for_each_pseudo_label(net, data, max_frames, |ws, x, weight| {
        for (k, h) in diag.iter_mut().enumerate() {
            for (s, a) in sq_input[k].iter_mut().zip(ws.layer_input(k, x)) {
                *s = a * a;
            }
            for (i, &d) in ws.delta(k).iter().enumerate() {
                let d2 = weight * d * d;
                if d2 == 0.0 {
                    continue;
                }
                for (hv, &a2) in h.row_mut(i).iter_mut().zip(&sq_input[k]) {
                    *hv += d2 * a2;
                }
            }
        }
    })?;
    Ok(DiagonalHessian { diag })
}

/// OBD saliency `h_qq · w_q² / 2` for every weight.
pub fn saliency_obd(net: &DenseNet, data: &FrameDataset) -> Result<(SaliencyMap, DiagonalHessian)> {
    saliency_obd_sampled(net, data, None)
}

pub(crate) fn saliency_obd_sampled(
    net: &DenseNet,
    data: &FrameDataset,
    max_frames: Option<usize>,
) -> Result<(SaliencyMap, DiagonalHessian)> {
    let hess = gauss_newton_diagonal(net, data, max_frames)?;
    let scores = net
        .layers()
        .iter()
        .zip(&hess.diag)
        .map(|(l, h)| {
            let (r, c) = l.weights.shape();
            Matrix::new(r, c, obd_saliencies(l.weights.data(), h.data()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        SaliencyMap {
            criterion: Criterion::Obd,
            scores,
        },
        hess,
    ))
}

/// Damped Hessian over the surviving weights of one layer, and its inverse.
///
/// Weights are addressed by their row-major position in the layer; `active`
/// lists the positions the Hessian covers (all kept weights when built).
/// Deleting a weight removes it from `active` and downdates the inverse, which
/// equals inverting the Hessian restricted to the remaining weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerHessian {
    layer: usize,
    active: Vec<usize>,
    hessian: Matrix,
    inverse: Matrix,
    damping: f64,
}

impl LayerHessian {
    /// Adds `damping · I` to `hessian` (indexed by `active`) and inverts it.
    pub fn new(layer: usize, active: Vec<usize>, mut hessian: Matrix, damping: f64) -> Result<Self> {
        let n = active.len();
        if hessian.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "Hessian {:?} for {n} active weights",
                hessian.shape()
            )));
        }
        if !(damping >= 0.0 && damping.is_finite()) {
            return Err(Error::InvalidConfig(format!("damping must be >= 0, got {damping}")));
        }
        for t in 0..n {
            hessian.set(t, t, hessian.get(t, t) + damping);
        }
        let inverse = spd_inverse(&hessian)?;
        Ok(Self {
            layer,
            active,
            hessian,
            inverse,
            damping,
        })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// The damped Hessian.
    pub fn hessian(&self) -> &Matrix {
        &self.hessian
    }

    pub fn inverse(&self) -> &Matrix {
        &self.inverse
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn position_of(&self, flat: usize) -> Option<usize> {
        self.active.iter().position(|&a| a == flat)
    }

    /// `w_q² / (2 [H⁻¹]_qq)` for every active weight, in `active` order.
    pub fn saliencies(&self, layer_weights: &[f64]) -> Vec<f64> {
        self.active
            .iter()
            .enumerate()
            .map(|(t, &flat)| {
                let w = layer_weights[flat];
                w * w / (2.0 * self.inverse.get(t, t))
            })
            .collect()
    }

    /// Compensating update `−(w_q / [H⁻¹]_qq) H⁻¹ e_q` over the active weights
    /// for deleting the weight at active position `pos`.
    pub fn update(&self, layer_weights: &[f64], pos: usize) -> Vec<f64> {
        let w = layer_weights[self.active[pos]];
        let factor = -w / self.inverse.get(pos, pos);
        (0..self.active.len())
            .map(|t| factor * self.inverse.get(t, pos))
            .collect()
    }

    /// Deletes the weight at active position `pos`: applies the compensating
    /// update, sets the weight to exactly zero and shrinks the Hessian.
    /// Components landing on entries with `keep[flat] == false` are dropped.
    /// Returns the predicted loss increase.
    pub fn prune_position(&mut self, layer_weights: &mut [f64], keep: Option<&[bool]>, pos: usize) -> f64 {
        let predicted = self.saliencies_at(layer_weights, pos);
        let delta = self.update(layer_weights, pos);
        for (&flat, d) in self.active.iter().zip(&delta) {
            if keep.is_none_or(|k| k[flat]) {
                layer_weights[flat] += d;
            }
        }
        layer_weights[self.active[pos]] = 0.0;
        self.remove(pos);
        predicted
    }

    fn saliencies_at(&self, layer_weights: &[f64], pos: usize) -> f64 {
        let w = layer_weights[self.active[pos]];
        w * w / (2.0 * self.inverse.get(pos, pos))
    }

    fn remove(&mut self, pos: usize) {
        let n = self.active.len();
        let pivot = self.inverse.get(pos, pos);
        let col: Vec<f64> = (0..n).map(|t| self.inverse.get(t, pos)).collect();
        let keep: Vec<usize> = (0..n).filter(|&t| t != pos).collect();
        let mut inv = Matrix::zeros(n - 1, n - 1);
        let mut hes = Matrix::zeros(n - 1, n - 1);
        for (a, &s) in keep.iter().enumerate() {
            for (b, &t) in keep.iter().enumerate() {
                inv.set(a, b, self.inverse.get(s, t) - col[s] * col[t] / pivot);
                hes.set(a, b, self.hessian.get(s, t));
            }
        }
        self.inverse = inv;
        self.hessian = hes;
        self.active.remove(pos);
    }
}

/// OBS saliency for one layer.
///
/// Builds the Gauss–Newton Hessian over the layer's kept weights (all weights
/// without a mask), damps it by `λ = relative_damping × mean diagonal` and
/// inverts it. Returns a layer-shaped score matrix (pruned entries score 0)
/// and the Hessian for subsequent [`obs_apply_update`] calls.
pub fn saliency_obs(
    net: &DenseNet,
    data: &FrameDataset,
    layer: usize,
    relative_damping: f64,
    mask: Option<&PruneMask>,
) -> Result<(Matrix, LayerHessian)> {
    saliency_obs_sampled(net, data, layer, relative_damping, mask, None)
}

pub(crate) fn saliency_obs_sampled(
    net: &DenseNet,
    data: &FrameDataset,
    layer: usize,
    relative_damping: f64,
    mask: Option<&PruneMask>,
    max_frames: Option<usize>,
) -> Result<(Matrix, LayerHessian)> {
    let target = net.layers().get(layer).ok_or_else(|| {
        Error::InvalidConfig(format!("layer {layer} does not exist"))
    })?;
    let (rows, cols) = target.weights.shape();
    if rows * cols > OBS_MAX_WEIGHTS {
        return Err(Error::LayerTooLarge {
            layer,
            weights: rows * cols,
            limit: OBS_MAX_WEIGHTS,
        });
    }
    if !(relative_damping > 0.0 && relative_damping.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "OBS damping must be positive, got {relative_damping}"
        )));
    }
    if let Some(m) = mask {
        m.check_shape(net)?;
    }
    let active: Vec<usize> = (0..rows * cols)
        .filter(|&f| mask.is_none_or(|m| m.layer(layer).is_kept_flat(f)))
        .collect();
    let n = active.len();
    let mut h = Matrix::zeros(n, n);
    let mut v = vec![0.0; n];
    for_each_pseudo_label(net, data, max_frames, |ws, x, weight| {
        let input = ws.layer_input(layer, x);
        let delta = ws.delta(layer);
        for (t, &flat) in active.iter().enumerate() {
            v[t] = delta[flat / cols] * input[flat % cols];
        }
        for t in 0..n {
            let s = weight * v[t];
            if s == 0.0 {
                continue;
            }
            let row = &mut h.row_mut(t)[t..];
            for (hv, &vu) in row.iter_mut().zip(&v[t..]) {
                *hv += s * vu;
            }
        }
    })?;
    for t in 0..n {
        for u in 0..t {
            h.set(t, u, h.get(u, t));
        }
    }
    let mean_diag = if n == 0 {
        0.0
    } else {
        (0..n).map(|t| h.get(t, t)).sum::<f64>() / n as f64
    };
    let hess = LayerHessian::new(layer, active, h, relative_damping * mean_diag)?;
    let mut scores = Matrix::zeros(rows, cols);
    for (&flat, s) in hess.active().iter().zip(hess.saliencies(target.weights.data())) {
        scores.data_mut()[flat] = s;
    }
    Ok((scores, hess))
}

/// Deletes weight `(row, col)` of the Hessian's layer with the OBS
/// compensating update applied to the other surviving weights of that layer.
/// Returns the predicted loss increase.
pub fn obs_apply_update(
    net: &mut DenseNet,
    mask: &mut PruneMask,
    hess: &mut LayerHessian,
    row: usize,
    col: usize,
) -> Result<f64> {
    mask.check_shape(net)?;
    let layer = hess.layer();
    let cols = net.layers()[layer].weights.cols();
    let flat = row * cols + col;
    let pos = hess.position_of(flat).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "weight ({row}, {col}) of layer {layer} is not covered by the Hessian"
        ))
    })?;
    let keep = mask.layer(layer).keep().to_vec();
    let predicted = hess.prune_position(net.layers_mut()[layer].weights.data_mut(), Some(&keep), pos);
    mask.prune(layer, row, col);
    Ok(predicted)
}

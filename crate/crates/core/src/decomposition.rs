//! Low-rank layer compression.
//!
//! An `m×n` weight matrix `M` is replaced by factors `A` (`m×r`) and `B`
//! (`r×n`) spliced into the network as a linear bottleneck. The rank is chosen
//! from a remain rate so that `r(m + n) ≤ rate · mn`. Factors are trained as a
//! two-layer linear network that maps the one-hot vector `e_j` to column `j`
//! of `M`, whose summed squared error over all columns is `‖M − AB‖_F²`.
//! A truncated SVD gives the optimal error for reference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize_columns, spd_inverse, symmetric_eigen, Matrix};
use crate::nn::{train_sgd, Activation, DenseNet, FrameDataset, Layer, TrainConfig, TrainReport};

/// Largest rank with `r(m + n) ≤ rate · mn`, at least 1 and at most `min(m, n)`.
pub fn rank_for_remain_rate(m: usize, n: usize, rate: f64) -> Result<usize> {
    if m == 0 || n == 0 {
        return Err(Error::DimensionMismatch(format!("empty {m}x{n} matrix")));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidConfig(format!("remain rate must lie in (0, 1], got {rate}")));
    }
    let budget = rate * (m * n) as f64 / (m + n) as f64;
    let r = (budget + 1e-9).floor() as usize;
    Ok(r.max(1).min(m.min(n)))
}

/// `r(m + n) / (mn)`: weight fraction kept by a rank-`r` factorization.
pub fn achieved_ratio(m: usize, n: usize, r: usize) -> f64 {
    (r * (m + n)) as f64 / (m * n) as f64
}

/// `left · right` approximates the weights of layer `layer`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub left: Matrix,
    pub right: Matrix,
    pub layer: usize,
}

impl FactorPair {
    pub fn new(left: Matrix, right: Matrix, layer: usize) -> Result<Self> {
        if left.cols() != right.rows() {
            return Err(Error::DimensionMismatch(format!(
                "factors {:?} and {:?} do not chain",
                left.shape(),
                right.shape()
            )));
        }
        if left.cols() > left.rows().min(right.cols()) {
            return Err(Error::DimensionMismatch(format!(
                "rank {} exceeds min({}, {})",
                left.cols(),
                left.rows(),
                right.cols()
            )));
        }
        Ok(Self { left, right, layer })
    }

    pub fn rank(&self) -> usize {
        self.left.cols()
    }

    pub fn product(&self) -> Matrix {
        self.left.matmul(&self.right).expect("inner dimensions checked")
    }

    /// `‖M − left · right‖_F`.
    pub fn residual(&self, m: &Matrix) -> Result<f64> {
        Ok(m.sub(&self.product())?.frobenius_norm())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompTrainConfig {
    /// Step size of the preconditioned gradient updates, in (0, 1].
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Stop when the relative Frobenius error improves by less than this in one epoch.
    pub tolerance: f64,
}

impl Default for DecompTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 2000,
            seed: 0,
            tolerance: 1e-10,
        }
    }
}

impl DecompTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decomposition learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("decomposition epochs must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "decomposition tolerance must be >= 0, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedFactors {
    pub factors: FactorPair,
    /// `‖M − AB‖_F` of the returned factors.
    pub error: f64,
    pub epochs_run: usize,
    /// False when the epoch budget ran out before the tolerance was met.
    pub converged: bool,
}

fn gram_inverse(g: &Matrix) -> Result<Matrix> {
    let r = g.rows();
    let trace: f64 = (0..r).map(|i| g.get(i, i)).sum();
    let ridge = 1e-12 * trace.max(f64::MIN_POSITIVE) / r as f64;
    let mut damped = g.clone();
    for i in 0..r {
        damped.set(i, i, g.get(i, i) + ridge);
    }
    spd_inverse(&damped)
}

fn add_scaled(target: &mut Matrix, delta: &Matrix, scale: f64) {
    for (t, d) in target.data_mut().iter_mut().zip(delta.data()) {
        *t += scale * d;
    }
}

/// Trains rank-`r` factors of `m` on the column-reconstruction loss.
///
/// Each epoch takes one full-batch gradient step on `A` and then on `B`,
/// preconditioned by the inverse Gram matrix of the other factor:
///
/// ```text
/// A ← A − η (AB − M) Bᵀ (B Bᵀ)⁻¹
/// B ← B − η (AᵀA)⁻¹ Aᵀ (AB − M)
/// ```
///
/// Factors start as Gaussians with variance `s/r`, `s` the mean absolute entry of `M`.
pub fn decompose_train(m: &Matrix, r: usize, cfg: &DecompTrainConfig) -> Result<TrainedFactors> {
    cfg.validate()?;
    let (rows, cols) = m.shape();
    if r == 0 || r > rows.min(cols) {
        return Err(Error::InvalidConfig(format!(
            "rank {r} outside [1, {}] for a {rows}x{cols} matrix",
            rows.min(cols)
        )));
    }
    let norm = m.frobenius_norm();
    if norm == 0.0 {
        return Ok(TrainedFactors {
            factors: FactorPair::new(Matrix::zeros(rows, r), Matrix::zeros(r, cols), 0)?,
            error: 0.0,
            epochs_run: 0,
            converged: true,
        });
    }
    let scale = m.data().iter().map(|v| v.abs()).sum::<f64>() / m.len() as f64;
    let normal = Normal::new(0.0, (scale / r as f64).sqrt())
        .map_err(|e| Error::InvalidConfig(format!("factor init: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| normal.sample(rng)).collect() };
    let mut a = Matrix::new(rows, r, draw(rows * r, &mut rng))?;
    let mut b = Matrix::new(r, cols, draw(r * cols, &mut rng))?;

    let residual = |a: &Matrix, b: &Matrix| -> Matrix { a.matmul(b).expect("chained").sub(m).expect("same shape") };
    let mut error = residual(&a, &b).frobenius_norm();
    let mut converged = false;
    let mut epochs_run = 0;
    for _ in 0..cfg.epochs {
        epochs_run += 1;
        let res = residual(&a, &b);
        let grad_a = res.matmul(&b.transpose())?;
        let bbt = b.matmul(&b.transpose())?;
        add_scaled(&mut a, &grad_a.matmul(&gram_inverse(&bbt)?)?, -cfg.learning_rate);

        let res = residual(&a, &b);
        let at = a.transpose();
        let grad_b = at.matmul(&res)?;
        let ata = at.matmul(&a)?;
        add_scaled(&mut b, &gram_inverse(&ata)?.matmul(&grad_b)?, -cfg.learning_rate);

        let next = residual(&a, &b).frobenius_norm();
        if !next.is_finite() {
            return Err(Error::NonFinite("factor training diverged".into()));
        }
        let improvement = (error - next) / norm;
        error = next;
        if improvement.abs() <= cfg.tolerance || error / norm <= cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(TrainedFactors {
        factors: FactorPair::new(a, b, 0)?,
        error,
        epochs_run,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `A = U_r Σ_r`, `B = V_rᵀ`.
    pub factors: FactorPair,
    /// Leading singular values, non-increasing; as many as the iteration block holds.
    pub singular_values: Vec<f64>,
    /// `‖M − AB‖_F`.
    pub error: f64,
}

/// Rank-`r` truncated SVD by orthogonal iteration on `MᵀM` with a block of
/// `min(n, 2r + 8)` vectors, finished by a Rayleigh–Ritz step.
pub fn svd_oracle(m: &Matrix, r: usize) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    if r == 0 || r > rows.min(cols) {
        return Err(Error::InvalidConfig(format!(
            "rank {r} outside [1, {}] for a {rows}x{cols} matrix",
            rows.min(cols)
        )));
    }
    let k = cols.min(2 * r + 8);
    let mt = m.transpose();
    let mut q = Matrix::zeros(cols, k);
    // Deterministic start: canonical vectors plus a spread pattern on every coordinate.
    for j in 0..k {
        for i in 0..cols {
            let v = if i == j { 1.0 } else { 0.0 } + 1e-3 * (((i * 7 + j * 13) % 17) as f64 - 8.0) / 8.0;
            q.set(i, j, v);
        }
    }
    orthonormalize_columns(&mut q);
    let mut ritz_prev: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let (values, vectors) = loop {
        iterations += 1;
        let mq = m.matmul(&q)?;
        let t = mq.transpose().matmul(&mq)?;
        let (vals, vecs) = symmetric_eigen(&t)?;
        q = q.matmul(&vecs)?;
        let top = vals[0].abs().max(f64::MIN_POSITIVE);
        let settled = k == cols
            || (!ritz_prev.is_empty()
                && vals[..r]
                    .iter()
                    .zip(&ritz_prev)
                    .all(|(a, b)| (a - b).abs() <= 1e-14 * top));
        if settled || iterations >= 5000 {
            break (vals, q.clone());
        }
        ritz_prev = vals[..r].to_vec();
        q = mt.matmul(&m.matmul(&q)?)?;
        orthonormalize_columns(&mut q);
    };
    let v_r = vectors.leading_columns(r);
    let left = m.matmul(&v_r)?;
    let right = v_r.transpose();
    let factors = FactorPair::new(left, right, 0)?;
    let error = factors.residual(m)?;
    Ok(SvdResult {
        factors,
        singular_values: values[..r].iter().map(|v| v.max(0.0).sqrt()).collect(),
        error,
    })
}

/// Replaces layer `layer_index` with a bottleneck: `right` with identity
/// activation and zero bias, then `left` with the original bias and activation.
pub fn splice_factors(net: &DenseNet, layer_index: usize, factors: &FactorPair) -> Result<DenseNet> {
    let original = net
        .layers()
        .get(layer_index)
        .ok_or_else(|| Error::InvalidConfig(format!("layer {layer_index} does not exist")))?;
    if factors.left.rows() != original.out_dim() || factors.right.cols() != original.in_dim() {
        return Err(Error::DimensionMismatch(format!(
            "factors {:?}·{:?} for a {}x{} layer",
            factors.left.shape(),
            factors.right.shape(),
            original.out_dim(),
            original.in_dim()
        )));
    }
    let mut layers = Vec::with_capacity(net.layers().len() + 1);
    for (k, layer) in net.layers().iter().enumerate() {
        if k == layer_index {
            layers.push(Layer::new(
                factors.right.clone(),
                vec![0.0; factors.rank()],
                Activation::Identity,
            )?);
            layers.push(Layer::new(factors.left.clone(), layer.bias.clone(), layer.activation)?);
        } else {
            layers.push(layer.clone());
        }
    }
    DenseNet::new(net.input_dim(), layers)
}

/// One replaced layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDecomposition {
    /// Index in the original network.
    pub layer: usize,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub frob_error: f64,
    pub oracle_error: f64,
    /// `mn + m`.
    pub params_before: usize,
    /// `rn + r + mr + m`; the bottleneck's zero bias is counted.
    pub params_after: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub rate: f64,
    pub layers: Vec<LayerDecomposition>,
    pub params_before: usize,
    pub params_after: usize,
    pub fine_tune: Option<TrainReport>,
}

impl DecompositionReport {
    pub fn param_ratio(&self) -> f64 {
        self.params_after as f64 / self.params_before as f64
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DecomposeOptions<'a> {
    /// Also factor the final layer.
    pub include_output: bool,
    /// Task-loss training of the whole spliced network afterwards.
    pub fine_tune: Option<(&'a TrainConfig, &'a FrameDataset)>,
}

/// Factors every eligible layer at `rate`. Layer `k` trains with seed `cfg.seed + k`.
pub fn decompose_network(
    net: &DenseNet,
    rate: f64,
    cfg: &DecompTrainConfig,
    opts: DecomposeOptions<'_>,
) -> Result<(DenseNet, DecompositionReport)> {
    cfg.validate()?;
    let n_layers = net.layers().len();
    let eligible = if opts.include_output { n_layers } else { n_layers - 1 };
    let mut out = net.clone();
    let mut layers = Vec::new();
    // Splice from the back so earlier indices stay valid.
    for k in (0..eligible).rev() {
        let w = &net.layers()[k].weights;
        let (m, n) = w.shape();
        let r = rank_for_remain_rate(m, n, rate)?;
        let layer_cfg = DecompTrainConfig {
            seed: cfg.seed.wrapping_add(k as u64),
            ..cfg.clone()
        };
        let trained = decompose_train(w, r, &layer_cfg)?;
        let oracle = svd_oracle(w, r)?;
        let factors = FactorPair {
            layer: k,
            ..trained.factors
        };
        out = splice_factors(&out, k, &factors)?;
        layers.push(LayerDecomposition {
            layer: k,
            m,
            n,
            r,
            frob_error: trained.error,
            oracle_error: oracle.error,
            params_before: m * n + m,
            params_after: r * n + r + m * r + m,
            converged: trained.converged,
        });
    }
    layers.reverse();
    let fine_tune = match opts.fine_tune {
        Some((train_cfg, data)) => Some(train_sgd(&mut out, data, train_cfg, None)?),
        None => None,
    };
    Ok((
        out.clone(),
        DecompositionReport {
            rate,
            layers,
            params_before: net.param_count(),
            params_after: out.param_count(),
            fine_tune,
        },
    ))
}

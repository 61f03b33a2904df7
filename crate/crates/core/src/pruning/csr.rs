use crate::error::{Error, Result};
use crate::mask::PruneMask;
use crate::nn::{Activation, DenseNet};

/// One layer in compressed sparse row form. Only mask-kept weights are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrLayer {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl CsrLayer {
    pub fn stored_count(&self) -> usize {
        self.values.len()
    }

    fn affine_into(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            let acc: f64 = self.col_idx[span.clone()]
                .iter()
                .zip(&self.values[span])
                .map(|(&c, &w)| w * x[c])
                .sum();
            *o = acc + self.bias[r];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseNet {
    pub input_dim: usize,
    pub layers: Vec<CsrLayer>,
}

impl SparseNet {
    /// Stored weight values across all layers.
    pub fn stored_count(&self) -> usize {
        self.layers.iter().map(CsrLayer::stored_count).sum()
    }

    /// Stored weights plus biases.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.stored_count() + l.bias.len()).sum()
    }
}

/// Packs the mask-kept weights of `net` into CSR layers.
pub fn to_csr(net: &DenseNet, mask: &PruneMask) -> Result<SparseNet> {
    mask.check_shape(net)?;
    let layers = net
        .layers()
        .iter()
        .zip(mask.layers())
        .map(|(layer, lm)| {
            let (rows, cols) = layer.weights.shape();
            let mut row_ptr = Vec::with_capacity(rows + 1);
            let mut col_idx = Vec::with_capacity(lm.remain_count());
            let mut values = Vec::with_capacity(lm.remain_count());
            row_ptr.push(0);
            for r in 0..rows {
                for (c, &w) in layer.weights.row(r).iter().enumerate() {
                    if lm.is_kept(r, c) {
                        col_idx.push(c);
                        values.push(w);
                    }
                }
                row_ptr.push(values.len());
            }
            CsrLayer {
                rows,
                cols,
                row_ptr,
                col_idx,
                values,
                bias: layer.bias.clone(),
                activation: layer.activation,
            }
        })
        .collect();
    Ok(SparseNet {
        input_dim: net.input_dim(),
        layers,
    })
}

/// Network output computed from the CSR layers.
pub fn csr_forward(net: &SparseNet, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != net.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "input of length {} for a network expecting {}",
            x.len(),
            net.input_dim
        )));
    }
    let mut current = x.to_vec();
    for layer in &net.layers {
        let mut pre = vec![0.0; layer.rows];
        layer.affine_into(&current, &mut pre);
        let mut post = vec![0.0; layer.rows];
        layer.activation.apply(&pre, &mut post);
        current = post;
    }
    Ok(current)
}

//! Per-layer binary pruning masks.

use crate::error::{Error, Result};
use crate::nn::DenseNet;

/// Binary keep/prune mask over every weight matrix of a [`DenseNet`].
///
/// Entries only ever go from kept to pruned: [`PruneMask::prune`] is the only
/// mutator, so an entry never returns to kept across generations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    layers: Vec<LayerMask>,
    generation: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
    remain: usize,
}

impl LayerMask {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    #[inline]
    pub fn is_kept(&self, r: usize, c: usize) -> bool {
        self.keep[r * self.cols + c]
    }

    #[inline]
    pub fn is_kept_flat(&self, idx: usize) -> bool {
        self.keep[idx]
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn remain_count(&self) -> usize {
        self.remain
    }

    pub fn remain_rate(&self) -> f64 {
        if self.keep.is_empty() {
            1.0
        } else {
            self.remain as f64 / self.keep.len() as f64
        }
    }
}

impl PruneMask {
    /// All-ones mask shaped like `net`.
    pub fn full(net: &DenseNet) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| {
                let (rows, cols) = l.weights.shape();
                LayerMask {
                    rows,
                    cols,
                    keep: vec![true; rows * cols],
                    remain: rows * cols,
                }
            })
            .collect();
        Self {
            layers,
            generation: 0,
        }
    }

    /// Rebuilds a mask from explicit keep flags per layer.
    pub fn from_keep(shapes: &[(usize, usize)], keep: Vec<Vec<bool>>, generation: usize) -> Result<Self> {
        if shapes.len() != keep.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} layer shapes but {} keep vectors",
                shapes.len(),
                keep.len()
            )));
        }
        let layers = shapes
            .iter()
            .zip(keep)
            .map(|(&(rows, cols), keep)| {
                if keep.len() != rows * cols {
                    return Err(Error::DimensionMismatch(format!(
                        "{} mask entries for a {rows}x{cols} layer",
                        keep.len()
                    )));
                }
                let remain = keep.iter().filter(|&&k| k).count();
                Ok(LayerMask {
                    rows,
                    cols,
                    keep,
                    remain,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, generation })
    }

    pub fn layers(&self) -> &[LayerMask] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> &LayerMask {
        &self.layers[k]
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn bump_generation(&mut self) {
        self.generation += 1;
    }

    /// Marks `(layer, row, col)` as pruned. Returns whether the entry was kept before.
    pub fn prune(&mut self, layer: usize, r: usize, c: usize) -> bool {
        let lm = &mut self.layers[layer];
        let idx = r * lm.cols + c;
        if lm.keep[idx] {
            lm.keep[idx] = false;
            lm.remain -= 1;
            true
        } else {
            false
        }
    }

    pub fn remain_count(&self) -> usize {
        self.layers.iter().map(|l| l.remain).sum()
    }

    pub fn total_count(&self) -> usize {
        self.layers.iter().map(LayerMask::len).sum()
    }

    /// Kept fraction over all weight matrices.
    pub fn remain_rate(&self) -> f64 {
        let total = self.total_count();
        if total == 0 {
            1.0
        } else {
            self.remain_count() as f64 / total as f64
        }
    }

    /// Checks the mask matches the weight shapes of `net`.
    pub fn check_shape(&self, net: &DenseNet) -> Result<()> {
        if self.layers.len() != net.layers().len() {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} layers, network has {}",
                self.layers.len(),
                net.layers().len()
            )));
        }
        for (k, (m, l)) in self.layers.iter().zip(net.layers()).enumerate() {
            if (m.rows, m.cols) != l.weights.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {k}: mask {}x{} vs weights {:?}",
                    m.rows,
                    m.cols,
                    l.weights.shape()
                )));
            }
        }
        Ok(())
    }

    /// Zeroes every pruned weight of `net`.
    pub fn apply_to(&self, net: &mut DenseNet) -> Result<()> {
        self.check_shape(net)?;
        for (m, l) in self.layers.iter().zip(net.layers_mut()) {
            for (w, &k) in l.weights.data_mut().iter_mut().zip(&m.keep) {
                if !k {
                    *w = 0.0;
                }
            }
        }
        Ok(())
    }
}

//! Sparsification toolkit for small feedforward acoustic-style networks.
//!
//! - [`nn`]: dense networks, cross-entropy SGD, frame accuracy.
//! - [`pruning`]: five saliency criteria, deletion schedules, the prune–retrain loop, CSR inference.
//! - [`decomposition`]: low-rank layer factorization with a truncated-SVD reference.
//! - [`kws`]: keyword FST, posterior smoothing, decoding, TA/FA ROC sweeps.
//! - [`data`]: synthetic frame datasets and keyword streams.
//! - [`io`]: text formats for datasets, models, masks and reports.

pub mod data;
pub mod decomposition;
pub mod error;
pub mod io;
pub mod kws;
pub mod linalg;
pub mod mask;
pub mod nn;
pub mod pruning;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use mask::PruneMask;
pub use nn::{Activation, DenseNet, FrameDataset, Layer, TrainConfig, TrainReport};

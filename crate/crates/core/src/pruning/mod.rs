//! Weight pruning: saliency criteria, deletion schedules, mask updates,
//! dictionary revision, second-order (OBD/OBS) pruning, the iterative
//! prune–retrain loop and exact sparse inference.
//!
//! Layout of a weight matrix follows [`crate::nn::Layer`]: row `i` is the
//! receiving node, column `j` the sending node of the previous layer.

mod csr;
mod dictionary;
mod looping;
mod saliency;
mod second_order;
mod select;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use csr::{csr_forward, to_csr, CsrLayer, SparseNet};
pub use dictionary::{dictionary_revise, RevisionMode};
pub use looping::{prune_retrain_loop, GenerationRecord, PruneRun, PruneRunConfig, RunStatus};
pub use saliency::{saliency_affine, saliency_dictionary, saliency_magnitude};
pub use second_order::{
    gauss_newton_diagonal, obd_saliencies, obs_apply_update, saliency_obd, saliency_obs,
    DiagonalHessian, LayerHessian, OBS_MAX_WEIGHTS,
};
pub use select::{
    apply_pruning, select_for_pruning, DeletionRule, Schedule, SelectionScope, WeightIndex,
};

/// Which statistic ranks weights for deletion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    /// |w|.
    Magnitude,
    /// Frame-summed |w · input activation|.
    Affine,
    /// Same statistic as [`Criterion::Affine`], followed by a revision of the kept weights.
    Dictionary,
    /// Diagonal second-order saliency.
    Obd,
    /// Full layer-Hessian saliency with compensating updates.
    Obs,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::Magnitude,
        Criterion::Affine,
        Criterion::Dictionary,
        Criterion::Obd,
        Criterion::Obs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Magnitude => "magnitude",
            Criterion::Affine => "affine",
            Criterion::Dictionary => "dictionary",
            Criterion::Obd => "obd",
            Criterion::Obs => "obs",
        }
    }

    /// Short label used in reports: NS, WS and DS for the first-order criteria.
    pub fn label(self) -> &'static str {
        match self {
            Criterion::Magnitude => "NS",
            Criterion::Affine => "WS",
            Criterion::Dictionary => "DS",
            Criterion::Obd => "OBD",
            Criterion::Obs => "OBS",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Criterion::ALL
            .into_iter()
            .find(|c| c.name() == lower || c.label().eq_ignore_ascii_case(&lower))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown pruning criterion `{s}`")))
    }
}

/// Per-weight importance scores, one matrix per layer, shaped like the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub criterion: Criterion,
    pub scores: Vec<Matrix>,
}

impl SaliencyMap {
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.scores.iter().map(Matrix::shape).collect()
    }
}

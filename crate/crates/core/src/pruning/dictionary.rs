use std::fmt;
use std::str::FromStr;

use super::SaliencyMap;
use crate::error::{Error, Result};
use crate::mask::PruneMask;
use crate::nn::DenseNet;

/// How the dictionary revision scales kept weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RevisionMode {
    /// `w ← w + sign(w)·w·r`: positive weights grow, negative weights shrink toward zero.
    #[default]
    Literal,
    /// `w ← w·(1 + r)`: magnitude grows for both signs.
    Multiplicative,
}

impl FromStr for RevisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(RevisionMode::Literal),
            "multiplicative" => Ok(RevisionMode::Multiplicative),
            _ => Err(Error::InvalidConfig(format!("unknown revision mode `{s}`"))),
        }
    }
}

impl fmt::Display for RevisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RevisionMode::Literal => "literal",
            RevisionMode::Multiplicative => "multiplicative",
        })
    }
}

/// Redistributes the importance of each node's most important pruned input
/// onto its kept inputs.
///
/// For every receiving node with at least one pruned and at least one kept
/// incoming weight, `I_re` is the largest importance among the pruned inputs
/// and each kept weight with importance `I > 0` is scaled by the ratio
/// `r = I_re / (N_kept · I)`. Kept weights with zero importance, pruned
/// weights and nodes without pruned inputs are left alone.
///
/// `saliency` must be the dictionary importance measured before pruning.
/// Returns the number of weights whose value changed.
pub fn dictionary_revise(
    net: &mut DenseNet,
    mask: &PruneMask,
    saliency: &SaliencyMap,
    mode: RevisionMode,
) -> Result<usize> {
    mask.check_shape(net)?;
    if saliency.shapes() != net.shapes() {
        return Err(Error::DimensionMismatch("saliency shape differs from network".into()));
    }
    let mut changed = 0;
    for (k, layer) in net.layers_mut().iter_mut().enumerate() {
        let lm = mask.layer(k);
        let scores = &saliency.scores[k];
        for i in 0..layer.weights.rows() {
            let importance = scores.row(i);
            let mut kept = 0usize;
            let mut revise_from = None::<f64>;
            for (j, &imp) in importance.iter().enumerate() {
                if lm.is_kept(i, j) {
                    kept += 1;
                } else {
                    revise_from = Some(revise_from.map_or(imp, |m: f64| m.max(imp)));
                }
            }
            let Some(i_re) = revise_from else { continue };
            if kept == 0 {
                continue;
            }
            let row = layer.weights.row_mut(i);
            for (j, w) in row.iter_mut().enumerate() {
                let imp = importance[j];
                if !lm.is_kept(i, j) || imp <= 0.0 {
                    continue;
                }
                let ratio = i_re / (kept as f64 * imp);
                let old = *w;
                *w = match mode {
                    RevisionMode::Literal => old + sign(old) * old * ratio,
                    RevisionMode::Multiplicative => old * (1.0 + ratio),
                };
                if *w != old {
                    changed += 1;
                }
            }
        }
    }
    Ok(changed)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

use std::fmt;
use std::str::FromStr;

use super::SaliencyMap;
use crate::error::{Error, Result};
use crate::mask::PruneMask;
use crate::nn::DenseNet;

/// Position of one weight: layer, receiving row, sending column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WeightIndex {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
}

/// How many currently kept weights one pruning step deletes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeletionRule {
    /// Delete `⌊p · remaining⌋` of the lowest-scoring kept weights.
    ProportionOfRemaining(f64),
    /// Delete `min(k, remaining)` weights.
    FixedCount(usize),
    /// Delete every kept weight scoring strictly below `t`.
    Threshold(f64),
    /// As [`DeletionRule::Threshold`], truncated to `⌊max_fraction · remaining⌋` lowest scores.
    ThresholdCapped { threshold: f64, max_fraction: f64 },
}

impl DeletionRule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DeletionRule::ProportionOfRemaining(p) => p > 0.0 && p < 1.0,
            DeletionRule::FixedCount(k) => k >= 1,
            DeletionRule::Threshold(t) => t >= 0.0 && t.is_finite(),
            DeletionRule::ThresholdCapped {
                threshold,
                max_fraction,
            } => threshold >= 0.0 && threshold.is_finite() && max_fraction > 0.0 && max_fraction <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("deletion rule out of range: {self}")))
        }
    }

    /// Number of entries to take from a pool of `remaining` kept weights,
    /// `below` of which score under the threshold (ignored by count rules).
    fn quota(&self, remaining: usize, below: usize) -> usize {
        match *self {
            DeletionRule::ProportionOfRemaining(p) => (p * remaining as f64).floor() as usize,
            DeletionRule::FixedCount(k) => k.min(remaining),
            DeletionRule::Threshold(_) => below,
            DeletionRule::ThresholdCapped { max_fraction, .. } => {
                below.min((max_fraction * remaining as f64).floor() as usize)
            }
        }
    }

    fn threshold(&self) -> Option<f64> {
        match *self {
            DeletionRule::Threshold(t) => Some(t),
            DeletionRule::ThresholdCapped { threshold, .. } => Some(threshold),
            _ => None,
        }
    }
}

/// Text form `proportion:0.5`, `count:10`, `threshold:0.01`, `capped:0.01:0.2`.
impl fmt::Display for DeletionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DeletionRule::ProportionOfRemaining(p) => write!(f, "proportion:{p}"),
            DeletionRule::FixedCount(k) => write!(f, "count:{k}"),
            DeletionRule::Threshold(t) => write!(f, "threshold:{t}"),
            DeletionRule::ThresholdCapped {
                threshold,
                max_fraction,
            } => write!(f, "capped:{threshold}:{max_fraction}"),
        }
    }
}

impl FromStr for DeletionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("cannot parse deletion rule `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts.get(i).and_then(|v| v.trim().parse().ok()).ok_or_else(bad)
        };
        let rule = match (parts[0].trim(), parts.len()) {
            ("proportion", 2) => DeletionRule::ProportionOfRemaining(num(1)?),
            ("count", 2) => DeletionRule::FixedCount(parts[1].trim().parse().map_err(|_| bad())?),
            ("threshold", 2) => DeletionRule::Threshold(num(1)?),
            ("capped", 3) => DeletionRule::ThresholdCapped {
                threshold: num(1)?,
                max_fraction: num(2)?,
            },
            _ => return Err(bad()),
        };
        rule.validate()?;
        Ok(rule)
    }
}

/// Deletion rule plus the number of retraining epochs between pruning steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub rule: DeletionRule,
    pub iterations_between_prunes: usize,
}

/// Whether a rule applies to each weight matrix separately or to the network as a whole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionScope {
    #[default]
    PerLayer,
    Global,
}

impl FromStr for SelectionScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_layer" | "per-layer" | "layer" => Ok(SelectionScope::PerLayer),
            "global" => Ok(SelectionScope::Global),
            _ => Err(Error::InvalidConfig(format!("unknown selection scope `{s}`"))),
        }
    }
}

impl fmt::Display for SelectionScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionScope::PerLayer => "per_layer",
            SelectionScope::Global => "global",
        })
    }
}

/// Picks kept weights to delete.
///
/// Only kept entries are candidates. Candidates are ranked by ascending score,
/// ties broken by `(layer, row, col)`. The returned indices are in that rank order.
pub fn select_for_pruning(
    saliency: &SaliencyMap,
    mask: &PruneMask,
    rule: &DeletionRule,
    scope: SelectionScope,
) -> Result<Vec<WeightIndex>> {
    select_bounded(saliency, mask, rule, scope, None)
}

/// Selection with an optional upper bound per pool (per layer, or one global bound).
pub(crate) fn select_bounded(
    saliency: &SaliencyMap,
    mask: &PruneMask,
    rule: &DeletionRule,
    scope: SelectionScope,
    bounds: Option<&[usize]>,
) -> Result<Vec<WeightIndex>> {
    rule.validate()?;
    if saliency.shapes() != mask.layers().iter().map(|m| (m.rows(), m.cols())).collect::<Vec<_>>() {
        return Err(Error::DimensionMismatch("saliency and mask shapes differ".into()));
    }
    let pools: Vec<Vec<usize>> = match scope {
        SelectionScope::PerLayer => (0..mask.layers().len()).map(|k| vec![k]).collect(),
        SelectionScope::Global => vec![(0..mask.layers().len()).collect()],
    };
    let threshold = rule.threshold();
    let mut selected = Vec::new();
    for (p, layers) in pools.iter().enumerate() {
        let mut candidates: Vec<(f64, WeightIndex)> = Vec::new();
        for &k in layers {
            let lm = mask.layer(k);
            let scores = saliency.scores[k].data();
            for (flat, &s) in scores.iter().enumerate() {
                if lm.is_kept_flat(flat) {
                    candidates.push((
                        s,
                        WeightIndex {
                            layer: k,
                            row: flat / lm.cols(),
                            col: flat % lm.cols(),
                        },
                    ));
                }
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let below = threshold.map_or(0, |t| candidates.iter().take_while(|c| c.0 < t).count());
        let mut quota = rule.quota(candidates.len(), below);
        if let Some(b) = bounds {
            quota = quota.min(b[p]);
        }
        selected.extend(candidates.into_iter().take(quota).map(|c| c.1));
    }
    Ok(selected)
}

/// Deletes `selection` from `mask` and zeroes the matching weights of `net`.
/// Returns the number of entries newly pruned.
pub fn apply_pruning(net: &mut DenseNet, mask: &mut PruneMask, selection: &[WeightIndex]) -> Result<usize> {
    mask.check_shape(net)?;
    for idx in selection {
        let lm = mask.layers().get(idx.layer).ok_or_else(|| {
            Error::DimensionMismatch(format!("selection refers to missing layer {}", idx.layer))
        })?;
        if idx.row >= lm.rows() || idx.col >= lm.cols() {
            return Err(Error::DimensionMismatch(format!(
                "selection ({}, {}) outside layer {} of shape {}x{}",
                idx.row,
                idx.col,
                idx.layer,
                lm.rows(),
                lm.cols()
            )));
        }
    }
    let mut pruned = 0;
    for idx in selection {
        if mask.prune(idx.layer, idx.row, idx.col) {
            pruned += 1;
        }
        net.layers_mut()[idx.layer].weights.set(idx.row, idx.col, 0.0);
    }
    mask.bump_generation();
    Ok(pruned)
}

use std::fmt;

use super::dictionary::{dictionary_revise, RevisionMode};
use super::saliency::{saliency_affine, saliency_dictionary, saliency_magnitude};
use super::second_order::{obs_apply_update, saliency_obd_sampled, saliency_obs_sampled, LayerHessian};
use super::select::{apply_pruning, select_bounded, DeletionRule, Schedule, SelectionScope};
use super::{Criterion, SaliencyMap};
use crate::error::{Error, Result};
use crate::mask::PruneMask;
use crate::nn::{cross_entropy, frame_accuracy, train_sgd, DenseNet, FrameDataset, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PruneRunConfig {
    pub criterion: Criterion,
    pub schedule: Schedule,
    /// Stop once the overall fraction of kept weights is at or below this.
    pub target_remain_rate: f64,
    /// Base retraining settings. `epochs` is replaced by
    /// `schedule.iterations_between_prunes` and the seed is offset by the generation.
    pub retrain: TrainConfig,
    /// Retraining learning rate is `retrain.learning_rate × post_prune_lr_boost`.
    pub post_prune_lr_boost: f64,
    pub scope: SelectionScope,
    pub revision_mode: RevisionMode,
    /// OBS damping relative to the mean Hessian diagonal.
    pub obs_damping: f64,
    /// Evenly spaced frame subsample for OBD/OBS Hessians; `None` uses every frame.
    pub hessian_frames: Option<usize>,
    pub max_generations: usize,
}

impl PruneRunConfig {
    pub fn new(criterion: Criterion, schedule: Schedule, target_remain_rate: f64) -> Self {
        Self {
            criterion,
            schedule,
            target_remain_rate,
            retrain: TrainConfig::default(),
            post_prune_lr_boost: 2.0,
            scope: SelectionScope::PerLayer,
            revision_mode: RevisionMode::Literal,
            obs_damping: 1e-4,
            hessian_frames: None,
            max_generations: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_remain_rate > 0.0 && self.target_remain_rate < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target_remain_rate must lie in (0, 1), got {}",
                self.target_remain_rate
            )));
        }
        if !(self.post_prune_lr_boost >= 1.0 && self.post_prune_lr_boost.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "post_prune_lr_boost must be >= 1, got {}",
                self.post_prune_lr_boost
            )));
        }
        if !(self.obs_damping > 0.0 && self.obs_damping.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "obs_damping must be positive, got {}",
                self.obs_damping
            )));
        }
        self.schedule.rule.validate()?;
        self.retrain.validate()
    }
}

/// State after one generation. Generation 0 is the unpruned input network.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub remain_rate: f64,
    pub loss: f64,
    pub frame_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Reached,
    /// The generation bound ran out before the remain rate reached the target.
    TargetNotReached,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Reached => "reached",
            RunStatus::TargetNotReached => "target not reached",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneRun {
    pub net: DenseNet,
    pub mask: PruneMask,
    pub history: Vec<GenerationRecord>,
    pub status: RunStatus,
}

impl PruneRun {
    /// Number of pruning generations performed.
    pub fn generations(&self) -> usize {
        self.history.len() - 1
    }
}

fn record(generation: usize, net: &DenseNet, mask: &PruneMask, data: &FrameDataset) -> Result<GenerationRecord> {
    Ok(GenerationRecord {
        generation,
        remain_rate: mask.remain_rate(),
        loss: cross_entropy(net, data)?,
        frame_acc: frame_accuracy(net, data)?,
    })
}

/// Iterative prune and retrain.
///
/// Each generation scores the kept weights, deletes a batch chosen by the
/// schedule, applies the criterion's post-step (dictionary revision or OBS
/// compensating updates) and retrains with the mask fixed. Deletions never
/// take a pool (layer, or the whole net in global scope) below
/// `⌊target × size⌋` kept weights. A proportional rule whose quota rounds to
/// zero before the floor is reached deletes one weight instead.
pub fn prune_retrain_loop(net: DenseNet, data: &FrameDataset, cfg: &PruneRunConfig) -> Result<PruneRun> {
    cfg.validate()?;
    data.check_compatible(&net)?;
    let mut net = net;
    let mut mask = PruneMask::full(&net);
    let floors: Vec<usize> = match cfg.scope {
        SelectionScope::PerLayer => mask
            .layers()
            .iter()
            .map(|l| (cfg.target_remain_rate * l.len() as f64).floor() as usize)
            .collect(),
        SelectionScope::Global => vec![(cfg.target_remain_rate * mask.total_count() as f64).floor() as usize],
    };
    let mut history = vec![record(0, &net, &mask, data)?];
    let retrain = TrainConfig {
        learning_rate: cfg.retrain.learning_rate * cfg.post_prune_lr_boost,
        epochs: cfg.schedule.iterations_between_prunes,
        ..cfg.retrain.clone()
    };

    let mut status = RunStatus::TargetNotReached;
    for generation in 1..=cfg.max_generations + 1 {
        let room = headroom(&mask, cfg.scope, &floors);
        if mask.remain_rate() <= cfg.target_remain_rate || room.iter().all(|&r| r == 0) {
            status = RunStatus::Reached;
            break;
        }
        if generation > cfg.max_generations {
            break;
        }

        let (saliency, mut hessians) = score(&net, data, &mask, cfg)?;
        let mut selection = select_bounded(&saliency, &mask, &cfg.schedule.rule, cfg.scope, Some(&room))?;
        if selection.is_empty() && matches!(cfg.schedule.rule, DeletionRule::ProportionOfRemaining(_)) {
            selection = select_bounded(&saliency, &mask, &DeletionRule::FixedCount(1), cfg.scope, Some(&room))?;
        }

        match cfg.criterion {
            Criterion::Obs => {
                for hess in hessians.iter_mut() {
                    let layer = hess.layer();
                    for idx in selection.iter().filter(|i| i.layer == layer) {
                        obs_apply_update(&mut net, &mut mask, hess, idx.row, idx.col)?;
                    }
                }
                mask.bump_generation();
            }
            _ => {
                apply_pruning(&mut net, &mut mask, &selection)?;
                if cfg.criterion == Criterion::Dictionary {
                    dictionary_revise(&mut net, &mask, &saliency, cfg.revision_mode)?;
                }
            }
        }

        let cfg_gen = TrainConfig {
            seed: cfg.retrain.seed.wrapping_add(generation as u64),
            ..retrain.clone()
        };
        train_sgd(&mut net, data, &cfg_gen, Some(&mask))?;
        history.push(record(generation, &net, &mask, data)?);
    }

    Ok(PruneRun {
        net,
        mask,
        history,
        status,
    })
}

fn headroom(mask: &PruneMask, scope: SelectionScope, floors: &[usize]) -> Vec<usize> {
    match scope {
        SelectionScope::PerLayer => mask
            .layers()
            .iter()
            .zip(floors)
            .map(|(l, &f)| l.remain_count().saturating_sub(f))
            .collect(),
        SelectionScope::Global => vec![mask.remain_count().saturating_sub(floors[0])],
    }
}

fn score(
    net: &DenseNet,
    data: &FrameDataset,
    mask: &PruneMask,
    cfg: &PruneRunConfig,
) -> Result<(SaliencyMap, Vec<LayerHessian>)> {
    Ok(match cfg.criterion {
        Criterion::Magnitude => (saliency_magnitude(net), Vec::new()),
        Criterion::Affine => (saliency_affine(net, data)?, Vec::new()),
        Criterion::Dictionary => (saliency_dictionary(net, data)?, Vec::new()),
        Criterion::Obd => (saliency_obd_sampled(net, data, cfg.hessian_frames)?.0, Vec::new()),
        Criterion::Obs => {
            let mut scores = Vec::new();
            let mut hessians = Vec::new();
            for k in 0..net.layers().len() {
                let (s, h) = saliency_obs_sampled(net, data, k, cfg.obs_damping, Some(mask), cfg.hessian_frames)?;
                scores.push(s);
                hessians.push(h);
            }
            (
                SaliencyMap {
                    criterion: Criterion::Obs,
                    scores,
                },
                hessians,
            )
        }
    })
}

//! Keyword spotting over frame posteriors.
//!
//! Class 0 is filler; classes `1..=n` are the keyword's word units in order.
//! Decoding smooths the posteriors, turns them into a sequence of unit
//! segments, steps a chain transducer over the segments and reports a
//! candidate whenever the transducer emits 1. Each candidate carries a
//! confidence, so a threshold sweep only filters a fixed candidate list.

use crate::error::{Error, Result};
use crate::nn::{argmax, DenseNet, FrameDataset, Workspace};

/// Tolerance around a labelled keyword end within which a detection counts.
pub const TA_TOLERANCE_SECONDS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub input: usize,
    pub output: u8,
}

/// Chain acceptor with states `0..=n`; state `s` means the first `s` units have been seen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordFst {
    unit_count: usize,
    transitions: Vec<Transition>,
}

/// Builds the complete transducer for a keyword of `unit_count` units.
///
/// From state `s`: the next unit advances to `s + 1` (emitting 1 only into the
/// final state), the current unit loops, unit 1 restarts at state 1 and
/// anything else returns to the start.
pub fn build_keyword_fst(unit_count: usize) -> Result<KeywordFst> {
    if unit_count == 0 {
        return Err(Error::InvalidConfig("a keyword needs at least one unit".into()));
    }
    let n = unit_count;
    let mut transitions = Vec::with_capacity((n + 1) * (n + 1));
    for from in 0..=n {
        for input in 0..=n {
            let (to, output) = if input != 0 && input == from + 1 {
                (input, u8::from(input == n))
            } else if input != 0 && input == from {
                (from, 0)
            } else if input == 1 {
                (1, 0)
            } else {
                (0, 0)
            };
            transitions.push(Transition {
                from,
                to,
                input,
                output,
            });
        }
    }
    Ok(KeywordFst {
        unit_count,
        transitions,
    })
}

impl KeywordFst {
    pub fn unit_count(&self) -> usize {
        self.unit_count
    }

    pub fn num_states(&self) -> usize {
        self.unit_count + 1
    }

    /// Filler plus one class per unit.
    pub fn num_classes(&self) -> usize {
        self.unit_count + 1
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// `(next state, output)`.
    pub fn step(&self, state: usize, input: usize) -> (usize, u8) {
        let t = self.transitions[state * self.num_classes() + input];
        (t.to, t.output)
    }
}

/// Per-frame posterior vectors with a fixed frame period in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStream {
    num_classes: usize,
    frames: Vec<Vec<f64>>,
    frame_period: f64,
}

impl PosteriorStream {
    pub fn new(num_classes: usize, frames: Vec<Vec<f64>>, frame_period: f64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidConfig("posterior stream needs at least one class".into()));
        }
        if !(frame_period > 0.0 && frame_period.is_finite()) {
            return Err(Error::InvalidConfig(format!("frame period must be positive, got {frame_period}")));
        }
        for (t, f) in frames.iter().enumerate() {
            if f.len() != num_classes {
                return Err(Error::DimensionMismatch(format!(
                    "frame {t} has {} posteriors, expected {num_classes}",
                    f.len()
                )));
            }
            let sum: f64 = f.iter().sum();
            if f.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!("frame {t} is not a probability vector")));
            }
        }
        Ok(Self {
            num_classes,
            frames,
            frame_period,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_period(&self) -> f64 {
        self.frame_period
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames.len() as f64 * self.frame_period
    }
}

/// Network posteriors for every frame of `data`.
pub fn net_posteriors(net: &DenseNet, data: &FrameDataset, frame_period: f64) -> Result<PosteriorStream> {
    if data.feature_dim() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "{}-dim features for a {}-input network",
            data.feature_dim(),
            net.input_dim()
        )));
    }
    let mut ws = Workspace::new(net);
    let frames = (0..data.len())
        .map(|i| {
            ws.forward(net, data.features(i));
            ws.output().to_vec()
        })
        .collect();
    PosteriorStream::new(net.output_dim(), frames, frame_period)
}

/// One-hot posteriors from frame labels.
pub fn ground_truth_posteriors(labels: &[usize], num_classes: usize, frame_period: f64) -> Result<PosteriorStream> {
    let frames = labels
        .iter()
        .map(|&l| {
            if l >= num_classes {
                return Err(Error::DimensionMismatch(format!("label {l} with {num_classes} classes")));
            }
            let mut v = vec![0.0; num_classes];
            v[l] = 1.0;
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    PosteriorStream::new(num_classes, frames, frame_period)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    /// Trailing moving-average window, in frames.
    pub smoothing_window: usize,
    /// Minimum candidate confidence reported by [`decode`].
    pub threshold: f64,
    /// Shortest run of one winning class that counts as a unit, in frames.
    pub min_duration: usize,
    /// Candidates closer than this many frames to the previous kept one are dropped.
    pub lockout: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            smoothing_window: 10,
            threshold: 0.5,
            min_duration: 3,
            lockout: 50,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smoothing_window == 0 || self.min_duration == 0 {
            return Err(Error::InvalidConfig(
                "smoothing window and minimum duration must be at least 1 frame".into(),
            ));
        }
        if !self.threshold.is_finite() {
            return Err(Error::InvalidConfig("threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Moving average over the trailing `window` frames, truncated at the stream start.
pub fn smooth_posteriors(stream: &PosteriorStream, window: usize) -> Result<PosteriorStream> {
    if window == 0 {
        return Err(Error::InvalidConfig("smoothing window must be at least 1".into()));
    }
    let c = stream.num_classes;
    let out = (0..stream.len())
        .map(|t| {
            let span = &stream.frames[(t + 1).saturating_sub(window)..=t];
            let n = span.len() as f64;
            (0..c).map(|k| span.iter().map(|r| r[k]).sum::<f64>() / n).collect()
        })
        .collect();
    Ok(PosteriorStream {
        num_classes: c,
        frames: out,
        frame_period: stream.frame_period,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// Last frame of the keyword's final unit.
    pub frame: usize,
    pub confidence: f64,
}

struct Segment {
    class: usize,
    end: usize,
    level: f64,
}

/// Largest value `v` such that some `width` consecutive frames all have `p ≥ v`.
fn sustained_level(values: &[f64], width: usize) -> f64 {
    values
        .windows(width)
        .map(|w| w.iter().copied().fold(f64::INFINITY, f64::min))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn segments(smoothed: &PosteriorStream, min_duration: usize) -> Vec<Segment> {
    let winners: Vec<usize> = smoothed.frames.iter().map(|f| argmax(f)).collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start < winners.len() {
        let class = winners[start];
        let mut end = start;
        while end + 1 < winners.len() && winners[end + 1] == class {
            end += 1;
        }
        if end + 1 - start >= min_duration {
            let values: Vec<f64> = smoothed.frames[start..=end].iter().map(|f| f[class]).collect();
            out.push(Segment {
                class,
                end,
                level: sustained_level(&values, min_duration),
            });
        }
        start = end + 1;
    }
    out
}

/// Every keyword completion after lockout, regardless of confidence.
///
/// The frame-wise winning class of the smoothed posteriors forms runs; runs
/// shorter than `min_duration` are ignored and the rest step the transducer.
/// A completion's confidence is the smallest sustained posterior among the
/// unit segments on its path.
pub fn decode_candidates(fst: &KeywordFst, stream: &PosteriorStream, cfg: &DecodeConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    if stream.num_classes() != fst.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "stream has {} classes, keyword transducer expects {}",
            stream.num_classes(),
            fst.num_classes()
        )));
    }
    let smoothed = smooth_posteriors(stream, cfg.smoothing_window)?;
    let mut state = fst.start();
    // Sustained level of each unit matched so far on the current path.
    let mut path: Vec<f64> = Vec::new();
    let mut out: Vec<Detection> = Vec::new();
    for seg in segments(&smoothed, cfg.min_duration) {
        let (next, emit) = fst.step(state, seg.class);
        if next == 0 {
            path.clear();
        } else if next == state {
            let last = path.last_mut().expect("non-start state has a path");
            *last = last.max(seg.level);
        } else if next == state + 1 {
            path.push(seg.level);
        } else {
            path.clear();
            path.push(seg.level);
        }
        state = next;
        if emit == 1 {
            let confidence = path.iter().copied().fold(f64::INFINITY, f64::min);
            let locked = out.last().is_some_and(|d| seg.end - d.frame < cfg.lockout);
            if !locked {
                out.push(Detection {
                    frame: seg.end,
                    confidence,
                });
            }
        }
    }
    Ok(out)
}

/// Candidates with confidence at or above `cfg.threshold`.
pub fn decode(fst: &KeywordFst, stream: &PosteriorStream, cfg: &DecodeConfig) -> Result<Vec<Detection>> {
    Ok(decode_candidates(fst, stream, cfg)?
        .into_iter()
        .filter(|d| d.confidence >= cfg.threshold)
        .collect())
}

/// A test stream with the end frames of its embedded keywords.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStream {
    pub stream: PosteriorStream,
    pub keyword_ends: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub ta_rate: f64,
    pub fa_per_hour: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Ascending threshold order.
    pub points: Vec<RocPoint>,
}

/// `n` evenly spaced thresholds `i / (n + 1)`, `i = 1..=n`.
pub fn threshold_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
}

/// Size of the largest one-to-one matching between labels and detections
/// lying within `tolerance` frames of each other.
fn matched(labels: &[usize], detections: &[usize], tolerance: usize) -> usize {
    let mut labels = labels.to_vec();
    labels.sort_unstable();
    let mut det = detections.to_vec();
    det.sort_unstable();
    let mut j = 0;
    let mut hits = 0;
    for l in labels {
        while j < det.len() && det[j] + tolerance < l {
            j += 1;
        }
        if j < det.len() && det[j] <= l + tolerance {
            hits += 1;
            j += 1;
        }
    }
    hits
}

/// TA rate over the labelled test streams and false alarms per hour on the
/// keyword-free environment stream, for each threshold.
pub fn evaluate_roc(
    fst: &KeywordFst,
    tests: &[LabeledStream],
    environment: &PosteriorStream,
    cfg: &DecodeConfig,
    thresholds: &[f64],
) -> Result<RocCurve> {
    let test_candidates = tests
        .iter()
        .map(|t| decode_candidates(fst, &t.stream, cfg))
        .collect::<Result<Vec<_>>>()?;
    let env_candidates = decode_candidates(fst, environment, cfg)?;
    let total: usize = tests.iter().map(|t| t.keyword_ends.len()).sum();
    let hours = environment.duration_seconds() / 3600.0;
    let mut grid = thresholds.to_vec();
    grid.sort_by(f64::total_cmp);
    let points = grid
        .into_iter()
        .map(|threshold| {
            let mut hits = 0;
            for (t, cands) in tests.iter().zip(&test_candidates) {
                let tol = (TA_TOLERANCE_SECONDS / t.stream.frame_period()).round() as usize;
                let frames: Vec<usize> = cands
                    .iter()
                    .filter(|d| d.confidence >= threshold)
                    .map(|d| d.frame)
                    .collect();
                hits += matched(&t.keyword_ends, &frames, tol);
            }
            let fa = env_candidates.iter().filter(|d| d.confidence >= threshold).count();
            RocPoint {
                threshold,
                ta_rate: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
                fa_per_hour: if hours > 0.0 { fa as f64 / hours } else { 0.0 },
            }
        })
        .collect();
    Ok(RocCurve { points })
}

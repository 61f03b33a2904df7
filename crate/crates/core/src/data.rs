//! Synthetic stand-ins for speech feature corpora.
//!
//! Frames are drawn from class-conditional Gaussian mixtures: every class owns
//! `modes_per_class` mean vectors, nonzero only on the first
//! `informative_dims` coordinates, and a frame is its mode's mean plus
//! isotropic noise. Keyword streams reuse the same mixture with class 0 as
//! filler and classes `1..` as the keyword's units in order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::FrameDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Mixture components per class. With 1 and zero noise every frame of a class is identical.
    pub modes_per_class: usize,
    /// Leading coordinates that carry class information; the rest are pure noise.
    pub informative_dims: usize,
    /// Standard deviation of the mode mean coordinates.
    pub mean_scale: f64,
    /// Standard deviation of the per-frame noise.
    pub noise_scale: f64,
    pub frames: usize,
    /// Relative class frequencies; uniform when empty.
    pub class_priors: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            feature_dim: 40,
            num_classes: 3,
            modes_per_class: 16,
            informative_dims: 10,
            mean_scale: 1.0,
            noise_scale: 0.6,
            frames: 20_000,
            class_priors: Vec::new(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.feature_dim == 0 || self.num_classes == 0 || self.modes_per_class == 0 {
            return bad("feature_dim, num_classes and modes_per_class must be positive".into());
        }
        if self.informative_dims == 0 || self.informative_dims > self.feature_dim {
            return bad(format!(
                "informative_dims must lie in [1, {}], got {}",
                self.feature_dim, self.informative_dims
            ));
        }
        if !(self.mean_scale >= 0.0 && self.mean_scale.is_finite())
            || !(self.noise_scale >= 0.0 && self.noise_scale.is_finite())
        {
            return bad("mean_scale and noise_scale must be finite and >= 0".into());
        }
        if !self.class_priors.is_empty() {
            if self.class_priors.len() != self.num_classes {
                return bad(format!(
                    "{} class priors for {} classes",
                    self.class_priors.len(),
                    self.num_classes
                ));
            }
            if self.class_priors.iter().any(|&p| !(p >= 0.0 && p.is_finite()))
                || self.class_priors.iter().sum::<f64>() <= 0.0
            {
                return bad("class priors must be >= 0 with a positive sum".into());
            }
        }
        Ok(())
    }

    /// Exact per-class frame counts: floors of `prior × frames`, leftovers to
    /// the classes with the largest fractional parts (lowest index on ties).
    pub fn class_counts(&self) -> Vec<usize> {
        let priors = if self.class_priors.is_empty() {
            vec![1.0; self.num_classes]
        } else {
            self.class_priors.clone()
        };
        let total: f64 = priors.iter().sum();
        let exact: Vec<f64> = priors.iter().map(|p| p / total * self.frames as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut left = self.frames - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..self.num_classes).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        for &c in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[c] += 1;
            left -= 1;
        }
        counts
    }
}

/// The mixture behind a [`SyntheticSpec`]; draws frames of a requested class.
#[derive(Debug, Clone)]
pub struct FrameSampler {
    spec: SyntheticSpec,
    /// `means[class][mode]`.
    means: Vec<Vec<Vec<f64>>>,
    noise: Normal<f64>,
}

impl FrameSampler {
    /// Mode means are drawn from `spec.seed`; frame draws use the caller's RNG.
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let coord = Normal::new(0.0, spec.mean_scale).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let means = (0..spec.num_classes)
            .map(|_| {
                (0..spec.modes_per_class)
                    .map(|_| {
                        (0..spec.feature_dim)
                            .map(|d| if d < spec.informative_dims { coord.sample(&mut rng) } else { 0.0 })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let noise = Normal::new(0.0, spec.noise_scale).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(Self {
            spec: spec.clone(),
            means,
            noise,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn means(&self, class: usize) -> &[Vec<f64>] {
        &self.means[class]
    }

    pub fn sample<R: Rng>(&self, class: usize, rng: &mut R) -> Vec<f64> {
        let mode = rng.random_range(0..self.spec.modes_per_class);
        self.means[class][mode]
            .iter()
            .map(|m| m + self.noise.sample(rng))
            .collect()
    }
}

/// Frames with exact class counts from [`SyntheticSpec::class_counts`], in shuffled order.
pub fn gen_frame_dataset(spec: &SyntheticSpec) -> Result<FrameDataset> {
    let sampler = FrameSampler::new(spec)?;
    let mut labels: Vec<usize> = spec
        .class_counts()
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(labels.len() * spec.feature_dim);
    for &c in &labels {
        features.extend(sampler.sample(c, &mut rng));
    }
    FrameDataset::new(spec.feature_dim, spec.num_classes, features, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KwsStreamSpec {
    pub test_streams: usize,
    pub keywords_per_stream: usize,
    /// Frames spent in each unit of one keyword occurrence.
    pub unit_frames: usize,
    /// Filler frames before each keyword are drawn uniformly from this inclusive range.
    pub gap_frames: (usize, usize),
    pub environment_frames: usize,
    /// Single-unit bursts placed in the environment stream.
    pub environment_bursts: usize,
    pub burst_frames: usize,
    pub seed: u64,
}

impl Default for KwsStreamSpec {
    fn default() -> Self {
        Self {
            test_streams: 4,
            keywords_per_stream: 10,
            unit_frames: 20,
            gap_frames: (80, 160),
            environment_frames: 36_000,
            environment_bursts: 40,
            burst_frames: 20,
            seed: 0,
        }
    }
}

impl KwsStreamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.unit_frames == 0 || self.burst_frames == 0 {
            return Err(Error::InvalidConfig("unit and burst durations must be positive".into()));
        }
        if self.gap_frames.0 > self.gap_frames.1 {
            return Err(Error::InvalidConfig("gap range is reversed".into()));
        }
        let slot = self.environment_frames / self.environment_bursts.max(1);
        if self.environment_bursts > 0 && slot < 2 * self.burst_frames {
            return Err(Error::InvalidConfig(
                "environment stream too short for the requested bursts".into(),
            ));
        }
        Ok(())
    }
}

/// Feature frames with per-frame labels and the end frames of embedded keywords.
#[derive(Debug, Clone, PartialEq)]
pub struct KwsStream {
    pub data: FrameDataset,
    pub keyword_ends: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KwsData {
    pub tests: Vec<KwsStream>,
    pub environment: KwsStream,
}

fn render(sampler: &FrameSampler, labels: Vec<usize>, rng: &mut ChaCha8Rng) -> Result<FrameDataset> {
    let spec = sampler.spec();
    let mut features = Vec::with_capacity(labels.len() * spec.feature_dim);
    for &c in &labels {
        features.extend(sampler.sample(c, rng));
    }
    FrameDataset::new(spec.feature_dim, spec.num_classes, features, labels)
}

/// Test streams of filler with embedded keywords (units `1..num_classes` in
/// order), plus a keyword-free environment stream of filler with isolated
/// single-unit bursts, each burst centred in its own equal slot.
pub fn gen_kws_streams(frames: &SyntheticSpec, spec: &KwsStreamSpec) -> Result<KwsData> {
    spec.validate()?;
    if frames.num_classes < 2 {
        return Err(Error::InvalidConfig("keyword streams need filler plus at least one unit".into()));
    }
    let sampler = FrameSampler::new(frames)?;
    let units = frames.num_classes - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tests = Vec::with_capacity(spec.test_streams);
    for _ in 0..spec.test_streams {
        let mut labels = Vec::new();
        let mut ends = Vec::with_capacity(spec.keywords_per_stream);
        for _ in 0..spec.keywords_per_stream {
            let gap = rng.random_range(spec.gap_frames.0..=spec.gap_frames.1);
            labels.extend(std::iter::repeat_n(0, gap));
            for u in 1..=units {
                labels.extend(std::iter::repeat_n(u, spec.unit_frames));
            }
            ends.push(labels.len() - 1);
        }
        let tail = spec.gap_frames.1;
        labels.extend(std::iter::repeat_n(0, tail));
        tests.push(KwsStream {
            data: render(&sampler, labels, &mut rng)?,
            keyword_ends: ends,
        });
    }
    let mut labels = vec![0; spec.environment_frames];
    if let Some(slot) = spec.environment_frames.checked_div(spec.environment_bursts) {
        for b in 0..spec.environment_bursts {
            let unit = rng.random_range(1..=units);
            let start = b * slot + (slot - spec.burst_frames) / 2;
            labels[start..start + spec.burst_frames].fill(unit);
        }
    }
    let environment = KwsStream {
        data: render(&sampler, labels, &mut rng)?,
        keyword_ends: Vec::new(),
    };
    Ok(KwsData { tests, environment })
}

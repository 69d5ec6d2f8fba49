//! Synthetic datasets for desk-scale verification.
//!
//! Each video is a random segment layout (no immediate label repeats,
//! durations >= 5 frames) whose frames are drawn from class-conditional
//! unit-variance Gaussians with equal pairwise mean distance. The layouts
//! mimic transcript-annotated cooking videos: with `background` enabled a
//! video is SIL, a run of actions, SIL.

use super::{collapse, DataError, Dataset, FeatureSequence, LabelSequence, LabelVocab, VideoRecord};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MIN_SEGMENT_FRAMES: usize = 5;

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_videos: usize,
    /// Number of action classes, excluding the background class.
    pub classes: usize,
    /// Add a background (`SIL`) class that opens and closes every video.
    pub background: bool,
    /// Inclusive range of video lengths in frames.
    pub n_range: (usize, usize),
    /// Feature dimension.
    pub dim: usize,
    /// Pairwise Euclidean distance between class means.
    pub mean_separation: f64,
    /// Inclusive range of action segments per video (background segments,
    /// when enabled, come on top of this count).
    pub segs_range: (usize, usize),
}

impl SynthSpec {
    fn total_classes(&self) -> usize {
        self.classes + usize::from(self.background)
    }

    fn max_segments(&self) -> usize {
        self.segs_range.1 + if self.background { 2 } else { 0 }
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.num_videos == 0 {
            return Err(DataError::Infeasible("num_videos must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(DataError::Infeasible("classes must be >= 2".into()));
        }
        if self.dim == 0 {
            return Err(DataError::Infeasible("dim must be >= 1".into()));
        }
        if self.n_range.0 > self.n_range.1 || self.n_range.0 == 0 {
            return Err(DataError::Infeasible(format!(
                "empty n_range {:?}",
                self.n_range
            )));
        }
        if self.segs_range.0 > self.segs_range.1 || self.segs_range.0 == 0 {
            return Err(DataError::Infeasible(format!(
                "empty segs_range {:?}",
                self.segs_range
            )));
        }
        if self.dim < self.total_classes() {
            return Err(DataError::Infeasible(format!(
                "dim {} < {} classes: cannot place equidistant class means",
                self.dim,
                self.total_classes()
            )));
        }
        let worst = self.max_segments() * MIN_SEGMENT_FRAMES;
        if self.n_range.0 < worst {
            return Err(DataError::Infeasible(format!(
                "shortest video ({} frames) cannot hold {} segments of >= {} frames",
                self.n_range.0,
                self.max_segments(),
                MIN_SEGMENT_FRAMES
            )));
        }
        Ok(())
    }

    /// Class means: scaled unit basis vectors, so every pair of means is
    /// exactly `mean_separation` apart.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let scale = self.mean_separation / std::f64::consts::SQRT_2;
        (0..self.total_classes())
            .map(|c| {
                let mut m = vec![0.0; self.dim];
                m[c] = scale;
                m
            })
            .collect()
    }

    fn vocab(&self) -> LabelVocab {
        let mut names = Vec::with_capacity(self.total_classes());
        if self.background {
            names.push("SIL".to_string());
        }
        for a in 0..self.classes {
            names.push(format!("action_{a}"));
        }
        LabelVocab::new(names, self.background.then_some(0)).expect("names are unique")
    }
}

/// Draw uniformly from `0..count` excluding `avoid`, consuming exactly one
/// value from the stream.
fn draw_excluding(rng: &mut ChaCha8Rng, count: usize, avoid: usize) -> usize {
    let r = rng.gen_range(0..count - 1);
    if r >= avoid {
        r + 1
    } else {
        r
    }
}

fn draw_layout(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let actions = rng.gen_range(spec.segs_range.0..=spec.segs_range.1);
    let offset = usize::from(spec.background);
    let mut layout = Vec::with_capacity(actions + 2 * offset);
    if spec.background {
        layout.push(0);
    }
    let mut prev: Option<usize> = None;
    for _ in 0..actions {
        let a = match prev {
            Some(p) => draw_excluding(rng, spec.classes, p),
            None => rng.gen_range(0..spec.classes),
        };
        layout.push(offset + a);
        prev = Some(a);
    }
    if spec.background {
        layout.push(0);
    }
    layout
}

/// Split `n` frames over `segments.len()` segments, each >= 5 frames, the
/// surplus shared by Gamma(2) weights so durations vary without collapsing
/// most of the video into one segment.
fn draw_durations(n: usize, segments: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let extra = n - segments * MIN_SEGMENT_FRAMES;
    let weights: Vec<f64> = (0..segments)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln() - (1.0 - rng.gen::<f64>()).ln())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut durations: Vec<usize> = if total > 0.0 {
        weights
            .iter()
            .map(|w| MIN_SEGMENT_FRAMES + ((extra as f64) * w / total).floor() as usize)
            .collect()
    } else {
        vec![MIN_SEGMENT_FRAMES + extra / segments; segments]
    };
    let assigned: usize = durations.iter().sum();
    for i in 0..n - assigned {
        durations[i % segments] += 1;
    }
    durations
}

/// Generate a dataset. Deterministic: equal `(spec, seed)` produce equal
/// datasets.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = spec.class_means();
    let vocab = spec.vocab();
    let mut videos = Vec::with_capacity(spec.num_videos);
    for v in 0..spec.num_videos {
        let n = rng.gen_range(spec.n_range.0..=spec.n_range.1);
        let layout = draw_layout(spec, &mut rng);
        let durations = draw_durations(n, layout.len(), &mut rng);
        let mut gt = Vec::with_capacity(n);
        for (label, dur) in layout.iter().zip(&durations) {
            gt.extend(std::iter::repeat_n(*label, *dur));
        }
        debug_assert_eq!(gt.len(), n);
        let mut values = Array2::<f32>::zeros((n, spec.dim));
        for (t, &label) in gt.iter().enumerate() {
            let mean = &means[label];
            for j in 0..spec.dim {
                let noise: f64 = rng.sample(StandardNormal);
                values[[t, j]] = (mean[j] + noise) as f32;
            }
        }
        let transcript = collapse(&gt)?;
        debug_assert_eq!(transcript.labels(), layout.as_slice());
        videos.push(VideoRecord {
            id: format!("vid{v:03}"),
            features: FeatureSequence::new(values)?,
            transcript,
            ground_truth: Some(LabelSequence(gt)),
        });
    }
    Dataset::new(vocab, videos)
}

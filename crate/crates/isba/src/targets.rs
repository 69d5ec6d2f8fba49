//! Frame-level training targets from transcripts.
//!
//! A transcript of length n' is mapped onto n frames by giving each entry an
//! equal share (uniform expansion). The soft variant then replaces the frames
//! around each label change with a linear blend of the two adjacent labels,
//! so the network is free to choose either label near a boundary while the
//! ordering stays intact.

use crate::data::{DataError, LabelSequence, Transcript};
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("cannot expand a transcript of {transcript_len} entries onto {n} frames")]
    FrameCountTooSmall { n: usize, transcript_len: usize },
    #[error("beta must be in [0, 1], got {0}")]
    InvalidBeta(f64),
    #[error("label {label} exceeds class count {k}")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("row {row} sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("probability {value} at ({row}, {col}) outside [0, 1]")]
    ProbabilityOutOfRange { row: usize, col: usize, value: f64 },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Row-stochastic n-by-k matrix of per-frame class probabilities. Both
/// training targets and classifier outputs take this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelSequence {
    probs: Array2<f64>,
}

impl SoftLabelSequence {
    /// Validate row-stochasticity (sum 1 within 1e-6, entries in [0, 1]).
    pub fn new(probs: Array2<f64>) -> Result<Self, TargetError> {
        for (r, row) in probs.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for (c, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(TargetError::ProbabilityOutOfRange {
                        row: r,
                        col: c,
                        value: p,
                    });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(TargetError::NotStochastic { row: r, sum });
            }
        }
        Ok(Self { probs })
    }

    /// One-hot encoding of a hard label sequence.
    pub fn from_hard(labels: &LabelSequence, k: usize) -> Result<Self, TargetError> {
        let mut probs = Array2::zeros((labels.len(), k));
        for (t, &l) in labels.labels().iter().enumerate() {
            if l >= k {
                return Err(TargetError::LabelOutOfRange { label: l, k });
            }
            probs[[t, l]] = 1.0;
        }
        Ok(Self { probs })
    }

    pub fn n(&self) -> usize {
        self.probs.nrows()
    }

    pub fn k(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    /// Per-row argmax, ties broken toward the lowest class index.
    pub fn argmax_rows(&self) -> LabelSequence {
        let labels = self
            .probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0usize;
                let mut best_p = f64::NEG_INFINITY;
                for (c, &p) in row.iter().enumerate() {
                    if p > best_p {
                        best_p = p;
                        best = c;
                    }
                }
                best
            })
            .collect();
        LabelSequence(labels)
    }
}

/// Boundary-target policy: `beta` sets the soft-window width as a fraction
/// of the uniform segment length n/n', and `soft` selects blended windows
/// versus plain one-hot expansion (the ablation switch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySpec {
    pub beta: f64,
    pub soft: bool,
}

impl BoundarySpec {
    pub fn new(beta: f64) -> Result<Self, TargetError> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(TargetError::InvalidBeta(beta));
        }
        Ok(Self { beta, soft: true })
    }

    pub fn hard() -> Self {
        Self {
            soft: false,
            ..Self::default()
        }
    }
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self {
            beta: 0.5,
            soft: true,
        }
    }
}

/// Segment bounds of the uniform expansion: entry i (0-based) covers
/// `[bounds[i], bounds[i + 1])`.
fn segment_bounds(n: usize, n_prime: usize) -> Vec<usize> {
    (0..=n_prime)
        .map(|i| ((n as f64) * (i as f64) / (n_prime as f64)).round() as usize)
        .collect()
}

/// Expand a transcript onto `n` frames, each entry taking an equal share.
pub fn uniform_expand(transcript: &Transcript, n: usize) -> Result<LabelSequence, TargetError> {
    let n_prime = transcript.len();
    if n < n_prime {
        return Err(TargetError::FrameCountTooSmall {
            n,
            transcript_len: n_prime,
        });
    }
    let bounds = segment_bounds(n, n_prime);
    let mut labels = Vec::with_capacity(n);
    for (i, &label) in transcript.labels().iter().enumerate() {
        labels.extend(std::iter::repeat_n(label, bounds[i + 1] - bounds[i]));
    }
    debug_assert_eq!(labels.len(), n);
    Ok(LabelSequence(labels))
}

/// A soft window: frames `[start, end)` blend `left` into `right` around
/// boundary frame `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SoftWindow {
    pub start: usize,
    pub end: usize,
    pub left: usize,
    pub right: usize,
}

/// Compute the soft windows for every internal boundary with distinct
/// adjacent labels. Half-width is `max(1, round(beta * n/n'))`, clipped to
/// half the shorter adjacent segment so windows never overlap.
pub fn boundary_windows(
    transcript: &Transcript,
    n: usize,
    spec: BoundarySpec,
) -> Result<Vec<SoftWindow>, TargetError> {
    let n_prime = transcript.len();
    if n < n_prime {
        return Err(TargetError::FrameCountTooSmall {
            n,
            transcript_len: n_prime,
        });
    }
    let labels = transcript.labels();
    let bounds = segment_bounds(n, n_prime);
    let nominal = ((spec.beta * n as f64 / n_prime as f64).round() as usize).max(1);
    let mut windows = Vec::new();
    for i in 1..n_prime {
        let (left, right) = (labels[i - 1], labels[i]);
        if left == right {
            continue;
        }
        let len_left = bounds[i] - bounds[i - 1];
        let len_right = bounds[i + 1] - bounds[i];
        let w = nominal.min(len_left.min(len_right) / 2);
        if w == 0 {
            continue;
        }
        windows.push(SoftWindow {
            start: bounds[i] - w,
            end: bounds[i] + w,
            left,
            right,
        });
    }
    Ok(windows)
}

/// Uniform expansion with linear probability ramps across each boundary.
/// Within a window of half-width w at boundary b, frame t takes
/// `P(right) = (t - (b - w) + 0.5) / (2w)` and `P(left) = 1 - P(right)`,
/// so the 0.5 crossing lands exactly on the hard boundary.
pub fn soft_targets(
    transcript: &Transcript,
    n: usize,
    k: usize,
    spec: BoundarySpec,
) -> Result<SoftLabelSequence, TargetError> {
    let hard = uniform_expand(transcript, n)?;
    let mut soft = SoftLabelSequence::from_hard(&hard, k)?;
    for win in boundary_windows(transcript, n, spec)? {
        let width = (win.end - win.start) as f64;
        for t in win.start..win.end {
            let alpha = ((t - win.start) as f64 + 0.5) / width;
            let mut row = soft.probs.row_mut(t);
            row.fill(0.0);
            row[win.left] = 1.0 - alpha;
            row[win.right] = alpha;
        }
    }
    Ok(soft)
}

/// One-hot expansion without soft boundaries (the ablation arm).
pub fn hard_targets(
    transcript: &Transcript,
    n: usize,
    k: usize,
) -> Result<SoftLabelSequence, TargetError> {
    SoftLabelSequence::from_hard(&uniform_expand(transcript, n)?, k)
}

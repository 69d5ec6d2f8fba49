//! Evaluation metrics: frame accuracy (with and without background), the
//! per-segment Jaccard measures IoU and IoD, and the video-level
//! recognition loss used as the weak-training stop signal.
//!
//! Aggregation: accuracies are pooled over all frames of all videos;
//! Jaccard scores are averaged unweighted over segments within a video,
//! then unweighted over videos.

use crate::targets::SoftLabelSequence;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: prediction has {pred} frames, ground truth {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("empty label sequence")]
    Empty,
    #[error("occurrence vector has {y} entries but probabilities have {k} classes")]
    DimensionMismatch { k: usize, y: usize },
}

/// Fraction of frames where prediction equals ground truth.
pub fn frame_accuracy(pred: &[usize], gt: &[usize]) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if gt.is_empty() {
        return Err(MetricsError::Empty);
    }
    let correct = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / gt.len() as f64)
}

/// Frame accuracy restricted to frames whose ground truth is not the
/// background class. `None` when no such frame exists.
pub fn frame_accuracy_no_bg(
    pred: &[usize],
    gt: &[usize],
    bg: usize,
) -> Result<Option<f64>, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        if *g != bg {
            total += 1;
            correct += usize::from(p == g);
        }
    }
    Ok((total > 0).then(|| correct as f64 / total as f64))
}

/// Maximal same-label runs of `gt`, as `(start, end, label)` half-open.
fn gt_segments(gt: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut segs = Vec::new();
    let mut start = 0;
    for t in 1..=gt.len() {
        if t == gt.len() || gt[t] != gt[start] {
            segs.push((start, t, gt[start]));
            start = t;
        }
    }
    segs
}

/// Per-segment Jaccard measures, averaged unweighted over the non-background
/// ground-truth segments. For a segment of class c, the prediction set I is
/// every frame of the video predicted as c; IoU = |I n I*| / |I u I*| and
/// IoD = |I n I*| / |I| (0 when I is empty). `None` when the video has no
/// non-background segment.
pub fn jaccard(
    pred: &[usize],
    gt: &[usize],
    bg: Option<usize>,
) -> Result<Option<(f64, f64)>, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if gt.is_empty() {
        return Err(MetricsError::Empty);
    }
    let k = pred.iter().chain(gt).max().map_or(0, |m| m + 1);
    let mut pred_count = vec![0usize; k];
    for &p in pred {
        pred_count[p] += 1;
    }
    let mut iou_sum = 0.0;
    let mut iod_sum = 0.0;
    let mut segments = 0usize;
    for (start, end, label) in gt_segments(gt) {
        if Some(label) == bg {
            continue;
        }
        let inter = pred[start..end].iter().filter(|&&p| p == label).count();
        let detected = pred_count[label];
        let union = (end - start) + detected - inter;
        iou_sum += inter as f64 / union as f64;
        iod_sum += if detected == 0 {
            0.0
        } else {
            inter as f64 / detected as f64
        };
        segments += 1;
    }
    Ok((segments > 0).then(|| (iou_sum / segments as f64, iod_sum / segments as f64)))
}

const PROB_CLAMP: f64 = 1e-7;

/// Video-level recognition loss: binary cross-entropy between the
/// max-pooled class probabilities and the occurrence vector, averaged over
/// classes. Probabilities are clamped to [1e-7, 1 - 1e-7].
pub fn video_recognition_loss(
    probs: &SoftLabelSequence,
    occurrence: &[bool],
) -> Result<f64, MetricsError> {
    let k = probs.k();
    if occurrence.len() != k {
        return Err(MetricsError::DimensionMismatch {
            k,
            y: occurrence.len(),
        });
    }
    let mut loss = 0.0;
    for (c, &present) in occurrence.iter().enumerate() {
        let pooled = probs
            .probs()
            .column(c)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
            .clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= if present {
            pooled.ln()
        } else {
            (1.0 - pooled).ln()
        };
    }
    Ok(loss / k as f64)
}

/// The four metrics for one video or one collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub acc: f64,
    pub acc_no_bg: Option<f64>,
    pub iou: Option<f64>,
    pub iod: Option<f64>,
}

/// Aggregate report over a collection of videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    pub acc_no_bg: Option<f64>,
    pub iou: Option<f64>,
    pub iod: Option<f64>,
    pub per_video: Vec<MetricValues>,
}

impl MetricReport {
    /// Evaluate predictions against ground truth for a set of videos.
    pub fn compute(
        pairs: &[(&[usize], &[usize])],
        bg: Option<usize>,
    ) -> Result<Self, MetricsError> {
        if pairs.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut per_video = Vec::with_capacity(pairs.len());
        let mut correct = 0usize;
        let mut frames = 0usize;
        let mut fg_correct = 0usize;
        let mut fg_frames = 0usize;
        let mut iou_sum = 0.0;
        let mut iod_sum = 0.0;
        let mut jaccard_videos = 0usize;
        for (pred, gt) in pairs {
            let acc = frame_accuracy(pred, gt)?;
            let acc_no_bg = match bg {
                Some(b) => frame_accuracy_no_bg(pred, gt, b)?,
                None => None,
            };
            let j = jaccard(pred, gt, bg)?;
            correct += pred.iter().zip(*gt).filter(|(p, g)| p == g).count();
            frames += gt.len();
            if let Some(b) = bg {
                for (p, g) in pred.iter().zip(*gt) {
                    if *g != b {
                        fg_frames += 1;
                        fg_correct += usize::from(p == g);
                    }
                }
            }
            if let Some((iou, iod)) = j {
                iou_sum += iou;
                iod_sum += iod;
                jaccard_videos += 1;
            }
            per_video.push(MetricValues {
                acc,
                acc_no_bg,
                iou: j.map(|v| v.0),
                iod: j.map(|v| v.1),
            });
        }
        Ok(Self {
            acc: correct as f64 / frames as f64,
            acc_no_bg: (bg.is_some() && fg_frames > 0)
                .then(|| fg_correct as f64 / fg_frames as f64),
            iou: (jaccard_videos > 0).then(|| iou_sum / jaccard_videos as f64),
            iod: (jaccard_videos > 0).then(|| iod_sum / jaccard_videos as f64),
            per_video,
        })
    }
}

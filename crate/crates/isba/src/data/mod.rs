//! Sequence and label types, on-disk formats, and dataset assembly.
//!
//! The weak-supervision contract lives here: a video is a per-frame feature
//! matrix paired with an ordered action *transcript* (labels without
//! temporal extents). Ground-truth frame labels are optional and, when
//! present, must collapse to the transcript.

mod features;
mod manifest;
mod synth;
mod text;

pub use features::{load_features, write_features, FeatureSequence};
pub use manifest::{load_dataset, save_dataset};
pub use synth::{generate_synthetic, SynthSpec};
pub use text::{
    load_labels, load_transcript, load_vocab, save_labels, save_transcript, save_vocab,
};

use std::collections::HashMap;
use std::path::PathBuf;
use thiserror::Error;

/// Errors raised by loaders, writers, and the synthetic generator.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    Missing(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("unsupported format version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("truncated file {path}: needed {needed} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        found: usize,
    },
    #[error("trailing bytes in {path}: {extra} bytes past the payload")]
    TrailingBytes { path: PathBuf, extra: usize },
    #[error("non-finite value at frame {frame}, dim {dim} in {path}")]
    NonFinite {
        path: PathBuf,
        frame: usize,
        dim: usize,
    },
    #[error("invalid shape in {path}: n={n}, d={d} (both must be >= 1)")]
    InvalidShape { path: PathBuf, n: u32, d: u32 },
    #[error("unknown label {name:?} on line {line} of {path}")]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        name: String,
    },
    #[error("empty label file: {0}")]
    EmptyFile(PathBuf),
    #[error("duplicate label name {0:?} in vocabulary")]
    DuplicateLabel(String),
    #[error("background label {0:?} is not in the vocabulary")]
    UnknownBackground(String),
    #[error("empty vocabulary")]
    EmptyVocab,
    #[error("empty transcript")]
    EmptyTranscript,
    #[error("label index {index} out of range for {k} classes (video {id:?})")]
    LabelOutOfRange { id: String, index: usize, k: usize },
    #[error("video {0:?}: transcript is not the collapsed ground truth")]
    TranscriptMismatch(String),
    #[error("malformed manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },
    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),
}

/// Ordered label vocabulary with an optional background class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
    background: Option<usize>,
}

impl LabelVocab {
    /// Build a vocabulary from unique names; `background` selects the
    /// filler class excluded by background-aware metrics.
    pub fn new(names: Vec<String>, background: Option<usize>) -> Result<Self, DataError> {
        if names.is_empty() {
            return Err(DataError::EmptyVocab);
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(DataError::DuplicateLabel(name.clone()));
            }
        }
        if let Some(bg) = background {
            if bg >= names.len() {
                return Err(DataError::UnknownBackground(format!("index {bg}")));
            }
        }
        Ok(Self {
            names,
            index,
            background,
        })
    }

    /// Number of classes.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn background(&self) -> Option<usize> {
        self.background
    }
}

/// Ordered list of action labels for one video, without temporal extents.
/// Consecutive duplicates are permitted; refinement produces them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript(Vec<usize>);

impl Transcript {
    pub fn new(labels: Vec<usize>) -> Result<Self, DataError> {
        if labels.is_empty() {
            return Err(DataError::EmptyTranscript);
        }
        Ok(Self(labels))
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Hard per-frame label indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence(pub Vec<usize>);

impl LabelSequence {
    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Merge consecutive duplicate labels, preserving order.
///
/// This is the order oracle for transcript refinement: a refinement step is
/// valid iff the collapsed output equals the collapsed input.
pub fn collapse(labels: &[usize]) -> Result<Transcript, DataError> {
    if labels.is_empty() {
        return Err(DataError::EmptyTranscript);
    }
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        if out.last() != Some(&l) {
            out.push(l);
        }
    }
    Transcript::new(out)
}

/// One video: features, weak label, and (optionally) frame-level truth.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub features: FeatureSequence,
    pub transcript: Transcript,
    pub ground_truth: Option<LabelSequence>,
}

/// A set of videos sharing one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: LabelVocab,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    /// Assemble and validate: label indices in range, ground-truth length
    /// matches the feature frame count, transcript = collapse(ground truth).
    pub fn new(vocab: LabelVocab, videos: Vec<VideoRecord>) -> Result<Self, DataError> {
        let k = vocab.len();
        for v in &videos {
            for &l in v.transcript.labels() {
                if l >= k {
                    return Err(DataError::LabelOutOfRange {
                        id: v.id.clone(),
                        index: l,
                        k,
                    });
                }
            }
            if let Some(gt) = &v.ground_truth {
                for &l in gt.labels() {
                    if l >= k {
                        return Err(DataError::LabelOutOfRange {
                            id: v.id.clone(),
                            index: l,
                            k,
                        });
                    }
                }
                if gt.len() != v.features.n() {
                    return Err(DataError::TranscriptMismatch(v.id.clone()));
                }
                if collapse(gt.labels())? != v.transcript {
                    return Err(DataError::TranscriptMismatch(v.id.clone()));
                }
            }
        }
        Ok(Self { vocab, videos })
    }
}

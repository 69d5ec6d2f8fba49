//! Weakly-supervised temporal action segmentation and alignment.
//!
//! The crate couples a temporal convolutional feature pyramid network
//! (TCFPN) with an iterative soft boundary assignment (ISBA) training
//! loop: frame-level targets are expanded from ordered action transcripts,
//! a segmentation network is trained on them, and the transcripts are
//! refined from the network's own predictions until a video-level
//! recognition loss stops improving.
//!
//! Modules:
//! - [`data`]: sequence/label types, on-disk formats, synthetic datasets
//! - [`targets`]: transcript-to-frame target expansion (hard and soft)
//! - [`net`]: dense numeric core, layers, and the three frame classifiers
//! - [`engine`]: transcript refinement, the weak-training driver, decoders
//! - [`metrics`]: frame accuracy, Jaccard measures, recognition loss
//! - [`cli`]: command-line entry point and run-directory persistence

pub mod cli;
pub mod data;
pub mod engine;
pub mod metrics;
pub mod net;
pub mod seeds;
pub mod targets;

//! JSON dataset manifests tying together vocabulary and per-video files.
//!
//! Schema: `{"vocab": path, "videos": [{"id", "features", "transcript",
//! "ground_truth"?}, ...]}`. Paths are resolved relative to the manifest's
//! directory.

use super::{
    load_features, load_labels, load_transcript, load_vocab, save_labels, save_transcript,
    save_vocab, write_features, DataError, Dataset, VideoRecord,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize, Deserialize)]
struct ManifestVideo {
    id: String,
    features: String,
    transcript: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    ground_truth: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    vocab: String,
    videos: Vec<ManifestVideo>,
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

/// Load a dataset from a manifest, validating every invariant on the way in.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::Missing(manifest_path.to_path_buf()),
        _ => DataError::Io {
            path: manifest_path.to_path_buf(),
            source: e,
        },
    })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| DataError::BadManifest {
            path: manifest_path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let dir = base_dir(manifest_path);
    let vocab = load_vocab(&dir.join(&manifest.vocab))?;
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for v in &manifest.videos {
        let features = load_features(&dir.join(&v.features))?;
        let transcript = load_transcript(&dir.join(&v.transcript), &vocab)?;
        let ground_truth = match &v.ground_truth {
            Some(rel) => Some(load_labels(&dir.join(rel), &vocab)?),
            None => None,
        };
        videos.push(VideoRecord {
            id: v.id.clone(),
            features,
            transcript,
            ground_truth,
        });
    }
    Dataset::new(vocab, videos)
}

/// Write a dataset into `dir` (vocab, per-video triples, manifest.json).
/// Returns the manifest path.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf, DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    save_vocab(&dir.join("vocab.txt"), &dataset.vocab)?;
    let mut videos = Vec::with_capacity(dataset.videos.len());
    for v in &dataset.videos {
        let feat_rel = format!("{}.tcfb", v.id);
        let trans_rel = format!("{}.transcript.txt", v.id);
        write_features(&dir.join(&feat_rel), &v.features)?;
        save_transcript(&dir.join(&trans_rel), &v.transcript, &dataset.vocab)?;
        let ground_truth = match &v.ground_truth {
            Some(gt) => {
                let gt_rel = format!("{}.gt.txt", v.id);
                save_labels(&dir.join(&gt_rel), gt, &dataset.vocab)?;
                Some(gt_rel)
            }
            None => None,
        };
        videos.push(ManifestVideo {
            id: v.id.clone(),
            features: feat_rel,
            transcript: trans_rel,
            ground_truth,
        });
    }
    let manifest = Manifest {
        vocab: "vocab.txt".to_string(),
        videos,
    };
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(|e| DataError::Io {
        path: manifest_path.clone(),
        source: e,
    })?;
    Ok(manifest_path)
}

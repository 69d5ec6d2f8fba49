//! Text formats: vocabularies, transcripts, and label sequences.
//!
//! All three are UTF-8, one label name per line, newline-terminated.
//! A vocabulary may start with a `#background <name>` directive.

use super::{DataError, LabelSequence, LabelVocab, Transcript};
use std::path::Path;

fn read_text(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::Missing(path.to_path_buf()),
        _ => DataError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    std::fs::write(path, text).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Split into logical lines, dropping only the empty tail after the final
/// newline. Interior blank lines are preserved so they fail label lookup
/// with a line number instead of being silently skipped.
fn lines(text: &str) -> Vec<&str> {
    let mut out: Vec<&str> = text.split('\n').collect();
    if out.last() == Some(&"") {
        out.pop();
    }
    out
}

fn parse_label_lines(
    text: &str,
    vocab: &LabelVocab,
    path: &Path,
) -> Result<Vec<usize>, DataError> {
    let lines = lines(text);
    if lines.is_empty() {
        return Err(DataError::EmptyFile(path.to_path_buf()));
    }
    let mut labels = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let name = line.trim_end_matches('\r');
        match vocab.lookup(name) {
            Some(idx) => labels.push(idx),
            None => {
                return Err(DataError::UnknownLabel {
                    path: path.to_path_buf(),
                    line: i + 1,
                    name: name.to_string(),
                })
            }
        }
    }
    Ok(labels)
}

fn render_labels(labels: &[usize], vocab: &LabelVocab) -> String {
    let mut out = String::new();
    for &l in labels {
        out.push_str(vocab.name(l));
        out.push('\n');
    }
    out
}

/// Load an ordered transcript, mapping names through the vocabulary.
pub fn load_transcript(path: &Path, vocab: &LabelVocab) -> Result<Transcript, DataError> {
    Transcript::new(parse_label_lines(&read_text(path)?, vocab, path)?)
}

pub fn save_transcript(
    path: &Path,
    transcript: &Transcript,
    vocab: &LabelVocab,
) -> Result<(), DataError> {
    write_text(path, &render_labels(transcript.labels(), vocab))
}

/// Load a frame-level label sequence (same format as transcripts).
pub fn load_labels(path: &Path, vocab: &LabelVocab) -> Result<LabelSequence, DataError> {
    Ok(LabelSequence(parse_label_lines(
        &read_text(path)?,
        vocab,
        path,
    )?))
}

pub fn save_labels(
    path: &Path,
    labels: &LabelSequence,
    vocab: &LabelVocab,
) -> Result<(), DataError> {
    write_text(path, &render_labels(labels.labels(), vocab))
}

/// Load a vocabulary file: one name per line, line number = index, with an
/// optional leading `#background <name>` directive.
pub fn load_vocab(path: &Path) -> Result<LabelVocab, DataError> {
    let text = read_text(path)?;
    let mut lines = lines(&text);
    let mut background_name: Option<String> = None;
    if let Some(first) = lines.first() {
        if let Some(rest) = first.strip_prefix("#background ") {
            background_name = Some(rest.trim().to_string());
            lines.remove(0);
        }
    }
    if lines.is_empty() {
        return Err(DataError::EmptyVocab);
    }
    let names: Vec<String> = lines
        .iter()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect();
    let background = match &background_name {
        Some(name) => Some(
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| DataError::UnknownBackground(name.clone()))?,
        ),
        None => None,
    };
    LabelVocab::new(names, background)
}

pub fn save_vocab(path: &Path, vocab: &LabelVocab) -> Result<(), DataError> {
    let mut out = String::new();
    if let Some(bg) = vocab.background() {
        out.push_str("#background ");
        out.push_str(vocab.name(bg));
        out.push('\n');
    }
    for name in vocab.names() {
        out.push_str(name);
        out.push('\n');
    }
    write_text(path, &out)
}

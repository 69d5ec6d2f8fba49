//! Per-frame feature matrices and their binary on-disk format.
//!
//! Layout (little-endian): magic `TCFB`, u32 version = 1, u32 n, u32 d,
//! then n*d IEEE-754 32-bit values, frame-major.

use super::DataError;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"TCFB";
const VERSION: u32 = 1;

/// Feature matrix for one video: n frames by d dimensions, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    values: Array2<f32>,
}

impl FeatureSequence {
    pub fn new(values: Array2<f32>) -> Result<Self, DataError> {
        let (n, d) = values.dim();
        if n == 0 || d == 0 {
            return Err(DataError::InvalidShape {
                path: "<memory>".into(),
                n: n as u32,
                d: d as u32,
            });
        }
        for ((frame, dim), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    path: "<memory>".into(),
                    frame,
                    dim,
                });
            }
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: Vec<Vec<f32>>) -> Result<Self, DataError> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let flat: Vec<f32> = rows.into_iter().flatten().collect();
        let values = Array2::from_shape_vec((n, d), flat).map_err(|_| DataError::InvalidShape {
            path: "<memory>".into(),
            n: n as u32,
            d: d as u32,
        })?;
        Self::new(values)
    }

    /// Frame count.
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    /// Copy into the f64 matrix consumed by the classifiers.
    pub fn to_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }
}

/// Read a `TCFB` feature file.
pub fn load_features(path: &Path) -> Result<FeatureSequence, DataError> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::Missing(path.to_path_buf()),
        _ => DataError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    parse_features(&bytes, path)
}

fn parse_features(bytes: &[u8], path: &Path) -> Result<FeatureSequence, DataError> {
    let header = 4 + 4 + 4 + 4;
    if bytes.len() < header {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            needed: header,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    let mut cursor = &bytes[4..];
    let version = cursor.read_u32::<LittleEndian>().unwrap();
    if version != VERSION {
        return Err(DataError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let n = cursor.read_u32::<LittleEndian>().unwrap();
    let d = cursor.read_u32::<LittleEndian>().unwrap();
    if n == 0 || d == 0 {
        return Err(DataError::InvalidShape {
            path: path.to_path_buf(),
            n,
            d,
        });
    }
    let count = n as usize * d as usize;
    let needed = header + count * 4;
    if bytes.len() < needed {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(DataError::TrailingBytes {
            path: path.to_path_buf(),
            extra: bytes.len() - needed,
        });
    }
    let mut flat = vec![0f32; count];
    cursor
        .read_f32_into::<LittleEndian>(&mut flat)
        .expect("length checked");
    for (i, v) in flat.iter().enumerate() {
        if !v.is_finite() {
            return Err(DataError::NonFinite {
                path: path.to_path_buf(),
                frame: i / d as usize,
                dim: i % d as usize,
            });
        }
    }
    let values = Array2::from_shape_vec((n as usize, d as usize), flat).expect("sized above");
    Ok(FeatureSequence { values })
}

/// Write a `TCFB` feature file; exact inverse of [`load_features`].
pub fn write_features(path: &Path, features: &FeatureSequence) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(16 + features.n() * features.dim() * 4);
    out.write_all(MAGIC).unwrap();
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    out.write_u32::<LittleEndian>(features.n() as u32).unwrap();
    out.write_u32::<LittleEndian>(features.dim() as u32)
        .unwrap();
    for v in features.values.iter() {
        out.write_f32::<LittleEndian>(*v).unwrap();
    }
    std::fs::write(path, out).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

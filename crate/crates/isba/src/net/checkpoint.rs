//! Model checkpoint format (little-endian binary):
//!
//! ```text
//! magic "TCFM" | u32 version | u32 config-JSON length | config JSON
//!   repeated until end of file:
//!     u32 name length | name UTF-8 | u32 rank | u32 dims... | f32 values
//! ```
//!
//! Values are stored in 32-bit precision. A model whose state is
//! f32-representable (any model trained in the 32-bit precision mode)
//! reproduces its forward outputs bit-exactly after a save/load round
//! trip. The per-epoch training log is not persisted.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use super::model::{ModelConfig, TrainedModel};
use super::NetError;

const MAGIC: &[u8; 4] = b"TCFM";
const VERSION: u32 = 1;

pub fn save<W: Write>(model: &TrainedModel, w: &mut W) -> Result<(), NetError> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let config = serde_json::to_vec(model.config())?;
    w.write_u32::<LittleEndian>(config.len() as u32)?;
    w.write_all(&config)?;
    let mut result = Ok(());
    model.read_tensors(&mut |name, shape, values| {
        if result.is_err() {
            return;
        }
        result = write_tensor(w, name, shape, values);
    });
    result
}

fn write_tensor<W: Write>(
    w: &mut W,
    name: &str,
    shape: &[usize],
    values: &[f64],
) -> Result<(), NetError> {
    w.write_u32::<LittleEndian>(name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    w.write_u32::<LittleEndian>(shape.len() as u32)?;
    for &d in shape {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    for &v in values {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

pub fn save_file<P: AsRef<Path>>(model: &TrainedModel, path: P) -> Result<(), NetError> {
    let mut w = BufWriter::new(File::create(path)?);
    save(model, &mut w)?;
    w.flush()?;
    Ok(())
}

struct StoredTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    used: bool,
}

fn truncated(context: &str) -> NetError {
    NetError::Truncated {
        context: context.to_string(),
    }
}

fn read_exact_ctx<R: Read>(r: &mut R, buf: &mut [u8], context: &str) -> Result<(), NetError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            truncated(context)
        } else {
            NetError::Io(e)
        }
    })
}

fn read_u32_ctx<R: Read>(r: &mut R, context: &str) -> Result<u32, NetError> {
    let mut buf = [0u8; 4];
    read_exact_ctx(r, &mut buf, context)?;
    Ok(u32::from_le_bytes(buf))
}

/// Reconstruct a model: parse the header, build the architecture from the
/// embedded config, then fill every tensor by name. Every tensor of the
/// architecture must appear exactly once; unknown names, shape mismatches,
/// and non-finite values are errors.
pub fn load<R: Read>(r: &mut R) -> Result<TrainedModel, NetError> {
    let mut magic = [0u8; 4];
    read_exact_ctx(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(NetError::BadMagic { found: magic });
    }
    let version = read_u32_ctx(r, "version")?;
    if version != VERSION {
        return Err(NetError::UnsupportedVersion(version));
    }
    let config_len = read_u32_ctx(r, "config length")? as usize;
    let mut config_bytes = vec![0u8; config_len];
    read_exact_ctx(r, &mut config_bytes, "config block")?;
    let config: ModelConfig = serde_json::from_slice(&config_bytes)?;
    let mut stored: HashMap<String, StoredTensor> = HashMap::new();
    loop {
        let mut len_buf = [0u8; 4];
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(NetError::Io(e)),
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact_ctx(r, &mut name_bytes, "tensor name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| NetError::Internal("tensor name is not UTF-8".into()))?;
        let rank = read_u32_ctx(r, &name)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32_ctx(r, &name)? as usize);
        }
        let count: usize = shape.iter().product();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let mut buf = [0u8; 4];
            read_exact_ctx(r, &mut buf, &name)?;
            let v = f32::from_le_bytes(buf);
            if !v.is_finite() {
                return Err(NetError::NonFiniteTensor { name: name.clone() });
            }
            values.push(v as f64);
        }
        if stored
            .insert(
                name.clone(),
                StoredTensor {
                    shape,
                    values,
                    used: false,
                },
            )
            .is_some()
        {
            return Err(NetError::DuplicateTensor(name));
        }
    }
    let mut model = TrainedModel::init(config, 0)?;
    let mut result = Ok(());
    model.visit_tensors(&mut |name, shape, vals, _| {
        if result.is_err() {
            return;
        }
        match stored.get_mut(name) {
            None => result = Err(NetError::MissingTensor(name.to_string())),
            Some(t) => {
                if t.shape != shape {
                    result = Err(NetError::TensorShape {
                        name: name.to_string(),
                        expected: shape.to_vec(),
                        got: t.shape.clone(),
                    });
                    return;
                }
                vals.copy_from_slice(&t.values);
                t.used = true;
            }
        }
    });
    result?;
    if let Some(name) = stored.iter().find(|(_, t)| !t.used).map(|(n, _)| n) {
        return Err(NetError::UnknownTensor(name.clone()));
    }
    Ok(model)
}

pub fn load_file<P: AsRef<Path>>(path: P) -> Result<TrainedModel, NetError> {
    load(&mut BufReader::new(File::open(path)?))
}

//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "TSUM" | version u32 | config-json len u64 + bytes
//! vocab sha256 (32 bytes) | topic vocab sha256 (32 bytes)
//! tensor count u32
//! per tensor: name len u32 + utf8 | dtype u8 (1 = f64) | rank u32
//!             dims u64 each | values f64 each
//! ```
//!
//! Values are written with `f64::to_le_bytes`, so a save/load round trip is
//! bit-exact. The vocabulary digests let a loader refuse a checkpoint whose
//! token ids mean something else.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{ModelConfig, ModelError, ModelParams};

const MAGIC: &[u8; 4] = b"TSUM";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("malformed checkpoint config: {0}")]
    BadConfig(#[from] serde_json::Error),
    #[error("corrupt checkpoint: {what}")]
    Corrupt { what: String },
    #[error("checkpoint tensor {name} has shape {found:?}, model wants {want:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        want: Vec<usize>,
    },
    #[error("checkpoint is missing tensor {name}")]
    MissingTensor { name: String },
    #[error("checkpoint carries unknown tensor {name}")]
    UnknownTensor { name: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A checkpoint read back from disk.
pub struct LoadedCheckpoint {
    pub params: ModelParams,
    pub vocab_sha256: [u8; 32],
    pub topic_vocab_sha256: [u8; 32],
}

/// Writes `params` to `path` through a sibling temp file plus rename, so a
/// crash mid-write never leaves a truncated checkpoint behind.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    vocab_sha256: &[u8; 32],
    topic_vocab_sha256: &[u8; 32],
) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let config = serde_json::to_vec(&params.config)?;
        w.write_all(&(config.len() as u64).to_le_bytes())?;
        w.write_all(&config)?;
        w.write_all(vocab_sha256)?;
        w.write_all(topic_vocab_sha256)?;
        let named = params.named_tensors();
        w.write_all(&(named.len() as u32).to_le_bytes())?;
        for (name, tensor) in &named {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[DTYPE_F64])?;
            let shape = tensor.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &dim in shape {
                w.write_all(&(dim as u64).to_le_bytes())?;
            }
            for &v in tensor.values().iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64_as_usize(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let v = u64::from_le_bytes(self.bytes()?);
        usize::try_from(v).map_err(|_| CheckpointError::Corrupt {
            what: format!("{what} of {v} does not fit in memory"),
        })
    }

    fn vec(&mut self, len: usize) -> Result<Vec<u8>, CheckpointError> {
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }
}

/// Reads a checkpoint and rebuilds the parameter set. Every tensor the
/// model defines must be present with its exact shape; extras are an error.
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint, CheckpointError> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    if &r.bytes::<4>()? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let config_len = r.u64_as_usize("config block")?;
    let config: ModelConfig = serde_json::from_slice(&r.vec(config_len)?)?;
    let vocab_sha256 = r.bytes::<32>()?;
    let topic_vocab_sha256 = r.bytes::<32>()?;

    let params = ModelParams::init(&config)?;
    let mut want: HashMap<String, crate::tensor::Tensor> = params.named_tensors().into_iter().collect();

    let count = r.u32()? as usize;
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.vec(name_len)?).map_err(|_| CheckpointError::Corrupt {
            what: "tensor name is not utf-8".into(),
        })?;
        let dtype = r.bytes::<1>()?[0];
        if dtype != DTYPE_F64 {
            return Err(CheckpointError::Corrupt {
                what: format!("tensor {name} has unknown dtype {dtype}"),
            });
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64_as_usize("tensor dimension")?);
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f64::from_le_bytes(r.bytes()?));
        }
        let target = want
            .remove(&name)
            .ok_or(CheckpointError::UnknownTensor { name: name.clone() })?;
        if target.shape() != shape.as_slice() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                found: shape,
                want: target.shape().to_vec(),
            });
        }
        target.update_values(|v| v.copy_from_slice(&values));
    }
    if let Some(name) = want.keys().next() {
        return Err(CheckpointError::MissingTensor { name: name.clone() });
    }
    Ok(LoadedCheckpoint {
        params,
        vocab_sha256,
        topic_vocab_sha256,
    })
}

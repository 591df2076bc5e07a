//! Named-tensor checkpoint format.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic   b"CVCK"
//! version u32 = 1
//! count   u32
//! entry*  name_len u32, name UTF-8, rank u32, dims u32 x rank,
//!         payload f64 LE x prod(dims)
//! ```
//!
//! Entries are written in sorted name order, so serialization is a pure
//! function of the tensor map and round-trips are byte-exact.

use std::fs;
use std::path::Path;

use crate::autodiff::{NamedTensors, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint: need {needed} more bytes")]
    Truncated { needed: usize },
    #[error("tensor name is not UTF-8")]
    NonUtf8Name,
    #[error("duplicate tensor name {0}")]
    DuplicateName(String),
    #[error("invalid tensor {name}: {problem}")]
    InvalidTensor { name: String, problem: String },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub fn encode_checkpoint(tensors: &NamedTensors) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        let bytes = name.as_bytes();
        out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(bytes);
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated {
                needed: self.pos + n - self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NamedTensors, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic {
            found: magic,
            expected: CHECKPOINT_MAGIC,
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.u32()? as usize;
    let mut tensors = NamedTensors::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::NonUtf8Name)?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64()?);
        }
        let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::InvalidTensor {
            name: name.clone(),
            problem: e.to_string(),
        })?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(CheckpointError::DuplicateName(name));
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(tensors)
}

pub fn write_checkpoint(path: &Path, tensors: &NamedTensors) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(tensors)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<NamedTensors, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NamedTensors {
        let mut t = NamedTensors::new();
        t.insert("b.vec".into(), Tensor::vector(vec![1.5, -2.25, 1e-300]));
        t.insert(
            "a.mat".into(),
            Tensor::matrix(&[vec![0.1, 0.2], vec![-0.3, 0.4]]).unwrap(),
        );
        t.insert("meta.step".into(), Tensor::scalar(42.0));
        t
    }

    #[test]
    fn roundtrip_bit_exact() {
        let tensors = sample();
        let bytes = encode_checkpoint(&tensors);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, tensors);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = encode_checkpoint(&sample());
        bytes[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(CheckpointError::BadMagic { .. })
        ));
        let bytes = encode_checkpoint(&sample());
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 1]),
            Err(CheckpointError::Truncated { .. })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_checkpoint(&sample());
        bytes.push(0);
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(CheckpointError::TrailingBytes(1))
        ));
    }
}

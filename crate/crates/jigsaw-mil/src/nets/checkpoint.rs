//! Parameter checkpoints.
//!
//! Layout: magic `JMWT`, version u32, then per parameter: name length u16,
//! name bytes, rank u8, one u32 extent per axis, f32 little-endian values.
//! The loader rejects unknown magic, unknown versions, and trailing bytes.

use super::ParamSet;
use crate::tensor::{Scalar, Tensor};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"JMWT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at byte 0: expected JMWT")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("truncated checkpoint at byte {0}")]
    Truncated(usize),
    #[error("trailing bytes after byte {0}")]
    TrailingBytes(usize),
    #[error("checkpoint parameter {0} not in model")]
    UnknownParam(String),
    #[error("parameter {name}: checkpoint shape {found:?} != model shape {expected:?}")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },
    #[error("model parameter {0} missing from checkpoint")]
    MissingParam(String),
}

pub fn save_params<T: Scalar>(params: &ParamSet<T>, path: &Path) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for (name, tensor) in params.iter() {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(tensor.shape().len() as u8);
        for &e in tensor.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint and install its values into `params`. Every checkpoint
/// entry must exist in the model with the same shape, and vice versa.
pub fn load_params<T: Scalar>(params: &mut ParamSet<T>, path: &Path) -> Result<(), CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *off + n > bytes.len() {
            return Err(CheckpointError::Truncated(*off));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };

    if take(&mut off, 4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }

    let mut loaded = std::collections::HashSet::new();
    while off < bytes.len() {
        let name_len = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8_lossy(take(&mut off, name_len)?).into_owned();
        let rank = take(&mut off, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut off, numel * 4)?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();

        let current = params
            .get(&name)
            .ok_or_else(|| CheckpointError::UnknownParam(name.clone()))?;
        if current.shape() != shape.as_slice() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                found: shape,
                expected: current.shape().to_vec(),
            });
        }
        *params.get_mut(&name).unwrap() = Tensor::new(shape, data).expect("validated shape");
        loaded.insert(name);
    }
    if off != bytes.len() {
        return Err(CheckpointError::TrailingBytes(off));
    }
    if let Some((missing, _)) = params.iter().find(|(n, _)| !loaded.contains(*n)) {
        return Err(CheckpointError::MissingParam(missing.to_string()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Model, ModelConfig, Variant};

    #[test]
    fn roundtrip_restores_every_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.jmwt");
        let model: Model<f32> = Model::init(ModelConfig::new(Variant::Cnn, 16)).unwrap();
        save_params(&model.params, &path).unwrap();

        let mut other: Model<f32> = {
            let mut cfg = ModelConfig::new(Variant::Cnn, 16);
            cfg.seed = 999;
            Model::init(cfg).unwrap()
        };
        load_params(&mut other.params, &path).unwrap();
        for ((na, ta), (nb, tb)) in model.params.iter().zip(other.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn rejects_bad_magic_and_trailing_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.jmwt");
        let model: Model<f32> = Model::init(ModelConfig::new(Variant::MeanPool, 8)).unwrap();
        save_params(&model.params, &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let mut m = model.clone();
        assert!(matches!(load_params(&mut m.params, &path), Err(CheckpointError::BadMagic)));

        bytes[0] = b'J';
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        let mut m = model.clone();
        let err = load_params(&mut m.params, &path).unwrap_err();
        assert!(
            matches!(err, CheckpointError::Truncated(_) | CheckpointError::TrailingBytes(_)),
            "{err}"
        );
    }
}

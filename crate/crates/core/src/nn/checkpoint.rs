//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!   magic   6 bytes  "PSCKPT"
//!   version u32      currently 1
//!   count   u32      number of tensors (weight, bias per layer, in order)
//!   table   count * 4 * u32   (batch, channels, height, width) per tensor
//!   data    concatenated f64 values, row-major, in table order
//!
//! Momentum buffers are not persisted; loading yields zeroed velocity.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{ParamPair, Parameters};
use crate::tensor::{Shape4, Tensor};

const MAGIC: &[u8; 6] = b"PSCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint truncated (need {need} bytes, have {have})")]
    Truncated { need: usize, have: usize },
    #[error("checkpoint holds {0} tensors, expected an even count")]
    OddTensorCount(usize),
    #[error("checkpoint data corrupt: {0}")]
    Corrupt(String),
}

pub fn save_checkpoint(params: &Parameters, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let tensors: Vec<&Tensor> = params
        .layers
        .iter()
        .flat_map(|p| [&p.weight, &p.bias])
        .collect();

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        let s = t.shape();
        for dim in [s.batch, s.channels, s.height, s.width] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
    }
    for t in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Parameters, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;

    let need = |need: usize| -> Result<(), CheckpointError> {
        if bytes.len() < need {
            Err(CheckpointError::Truncated {
                need,
                have: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());

    need(14)?;
    if &bytes[..6] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32_at(6);
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = u32_at(10) as usize;
    if count % 2 != 0 {
        return Err(CheckpointError::OddTensorCount(count));
    }

    let table_end = 14 + count * 16;
    need(table_end)?;
    let mut shapes = Vec::with_capacity(count);
    let mut total = 0usize;
    for t in 0..count {
        let off = 14 + t * 16;
        let dims: Vec<usize> = (0..4).map(|d| u32_at(off + d * 4) as usize).collect();
        if dims.iter().any(|&d| d == 0) {
            return Err(CheckpointError::Corrupt(format!(
                "tensor {t} has a zero dimension"
            )));
        }
        let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3]);
        total += shape.volume();
        shapes.push(shape);
    }
    need(table_end + total * 8)?;

    let mut offset = table_end;
    let mut tensors = Vec::with_capacity(count);
    for (t, shape) in shapes.into_iter().enumerate() {
        let n = shape.volume();
        let data: Vec<f64> = (0..n)
            .map(|k| {
                let off = offset + k * 8;
                f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap())
            })
            .collect();
        offset += n * 8;
        let tensor = Tensor::from_vec(shape, data)
            .map_err(|e| CheckpointError::Corrupt(format!("tensor {t}: {e}")))?;
        tensors.push(tensor);
    }

    let layers = tensors
        .chunks_exact(2)
        .map(|pair| ParamPair {
            weight: pair[0].clone(),
            bias: pair[1].clone(),
        })
        .collect();
    Ok(Parameters::from_pairs(layers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSpec;
    use crate::rng::StreamRng;
    use tempfile::tempdir;

    #[test]
    fn header_bytes_are_as_documented() {
        let params = Parameters::from_pairs(vec![ParamPair {
            weight: Tensor::from_vec(Shape4::new(1, 1, 1, 2), vec![1.5, -2.0]).unwrap(),
            bias: Tensor::zeros(Shape4::new(1, 1, 1, 1)),
        }]);
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..6], b"PSCKPT");
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 2);
        // weight shape (1,1,1,2), then bias shape (1,1,1,1)
        let dims: Vec<u32> = (0..8)
            .map(|d| u32::from_le_bytes(bytes[14 + d * 4..18 + d * 4].try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![1, 1, 1, 2, 1, 1, 1, 1]);
        assert_eq!(
            f64::from_le_bytes(bytes[46..54].try_into().unwrap()),
            1.5
        );
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        let model = ModelSpec::lenet_micro();
        let params = Parameters::init(&model, &mut StreamRng::seeded(1)).unwrap();
        save_checkpoint(&params, &path).unwrap();

        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));

        let mut bad = good.clone();
        bad[6] = 9;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::BadVersion(9))
        ));

        fs::write(&path, &good[..good.len() - 5]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Truncated { .. })
        ));
    }
}

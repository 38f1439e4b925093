//! Versioned binary checkpoints: magic bytes, a config snapshot, and a map
//! from parameter path to typed tensor data. Little-endian throughout.
//!
//! Loading validates the full key set against the receiving parameter tree
//! before writing anything: unknown, missing, or reshaped keys are
//! structured errors and leave the parameters untouched.

use thiserror::Error;

use crate::model::ModelParams;
use crate::params::ParamWalk;

pub const MAGIC: [u8; 4] = *b"AASF";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Dtype {
    F64,
    F32,
}

#[derive(Clone, Debug)]
pub struct Entry {
    pub path: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Values widened to f64 when the stored dtype is f32.
    pub data: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub version: u32,
    /// Verbatim copy of the effective config the checkpoint was trained with.
    pub config: String,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("config snapshot is not valid UTF-8")]
    BadConfigText,
    #[error("entry path is not valid UTF-8")]
    BadPath,
    #[error("unknown dtype tag {0}")]
    BadDtype(u8),
    #[error("checkpoint key `{0}` does not exist in this model")]
    UnknownKey(String),
    #[error("model key `{0}` is missing from the checkpoint")]
    MissingKey(String),
    #[error("shape mismatch at `{path}`: checkpoint {stored:?}, model {expected:?}")]
    ShapeMismatch { path: String, stored: Vec<usize>, expected: Vec<usize> },
    #[error("config mismatch: checkpoint was built with a different configuration")]
    ConfigMismatch { stored: String, expected: String },
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    push_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

/// Serialize every parameter and running-statistics buffer.
pub fn save_checkpoint(config: &str, params: &ModelParams, dtype: Dtype) -> Vec<u8> {
    let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    params.walk("", &mut |name, p| {
        entries.push((name.to_string(), p.shape.clone(), p.data.clone()));
    });
    params.walk_buffers("", &mut |name, d| {
        entries.push((name.to_string(), vec![d.len()], d.to_vec()));
    });

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    push_u32(&mut out, VERSION);
    push_str(&mut out, config);
    push_u32(&mut out, entries.len() as u32);
    for (path, shape, data) in &entries {
        push_str(&mut out, path);
        out.push(match dtype {
            Dtype::F64 => 0,
            Dtype::F32 => 1,
        });
        out.push(shape.len() as u8);
        for &d in shape {
            push_u32(&mut out, d as u32);
        }
        push_u32(&mut out, data.len() as u32);
        match dtype {
            Dtype::F64 => {
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Dtype::F32 => {
                for v in data {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if n > self.bytes.len() - self.at {
            return Err(CheckpointError::Truncated(what));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn string(&mut self, what: &'static str) -> Result<String, CheckpointError> {
        let len = self.u32(what)? as usize;
        let b = self.take(len, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| {
            if what == "config" {
                CheckpointError::BadConfigText
            } else {
                CheckpointError::BadPath
            }
        })
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let config = c.string("config")?;
    let count = c.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let path = c.string("entry path")?;
        let dtype = match c.u8("dtype")? {
            0 => Dtype::F64,
            1 => Dtype::F32,
            other => return Err(CheckpointError::BadDtype(other)),
        };
        let ndim = c.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32("shape")? as usize);
        }
        let numel = c.u32("element count")? as usize;
        let data = match dtype {
            Dtype::F64 => c
                .take(numel.checked_mul(8).ok_or(CheckpointError::Truncated("data"))?, "data")?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
            Dtype::F32 => c
                .take(numel.checked_mul(4).ok_or(CheckpointError::Truncated("data"))?, "data")?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
        };
        entries.push(Entry { path, dtype, shape, data });
    }
    Ok(Checkpoint { version, config, entries })
}

/// Copy checkpoint values into `params`. The checkpoint must cover exactly
/// the model's parameters and buffers, with matching shapes.
pub fn apply_checkpoint(
    params: &mut ModelParams,
    ckpt: &Checkpoint,
) -> Result<(), CheckpointError> {
    let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
    params.walk("", &mut |name, p| expected.push((name.to_string(), p.shape.clone())));
    params.walk_buffers("", &mut |name, d| expected.push((name.to_string(), vec![d.len()])));

    for e in &ckpt.entries {
        match expected.iter().find(|(name, _)| *name == e.path) {
            None => return Err(CheckpointError::UnknownKey(e.path.clone())),
            Some((_, shape)) => {
                if *shape != e.shape || e.data.len() != shape.iter().product::<usize>() {
                    return Err(CheckpointError::ShapeMismatch {
                        path: e.path.clone(),
                        stored: e.shape.clone(),
                        expected: shape.clone(),
                    });
                }
            }
        }
    }
    for (name, _) in &expected {
        if !ckpt.entries.iter().any(|e| e.path == *name) {
            return Err(CheckpointError::MissingKey(name.clone()));
        }
    }

    params.walk_mut("", &mut |name, p| {
        let e = ckpt.entries.iter().find(|e| e.path == name).expect("validated");
        p.data.copy_from_slice(&e.data);
    });
    params.walk_buffers_mut("", &mut |name, d| {
        let e = ckpt.entries.iter().find(|e| e.path == name).expect("validated");
        d.copy_from_slice(&e.data);
    });
    Ok(())
}

/// Reject checkpoints whose embedded config differs from `expected`.
pub fn ensure_config(ckpt: &Checkpoint, expected: &str) -> Result<(), CheckpointError> {
    if ckpt.config != expected {
        return Err(CheckpointError::ConfigMismatch {
            stored: ckpt.config.clone(),
            expected: expected.to_string(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::params::named_params;

    fn tiny_params() -> (ModelConfig, ModelParams) {
        let cfg = ModelConfig {
            input_samples: 400,
            sinc_filters: 3,
            sinc_kernel_len: 33,
            channels: vec![2, 3],
            gat_dim: 4,
            dst_dim: 3,
            ..ModelConfig::debug()
        };
        let params = ModelParams::init(&cfg, 9);
        (cfg, params)
    }

    fn mutate_running_stats(params: &mut ModelParams) {
        params.walk_buffers_mut("", &mut |_, d| {
            for (i, v) in d.iter_mut().enumerate() {
                *v += 0.01 * (i + 1) as f64;
            }
        });
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let (_, mut params) = tiny_params();
        mutate_running_stats(&mut params);
        let bytes = save_checkpoint("cfg = demo\n", &params, Dtype::F64);
        let ckpt = load_checkpoint(&bytes).unwrap();
        assert_eq!(ckpt.version, VERSION);
        assert_eq!(ckpt.config, "cfg = demo\n");

        let (_, mut fresh) = tiny_params();
        apply_checkpoint(&mut fresh, &ckpt).unwrap();
        let a = named_params(&params);
        let b = named_params(&fresh);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.0, y.0);
            for (u, v) in x.1.data.iter().zip(&y.1.data) {
                assert_eq!(u.to_bits(), v.to_bits(), "at {}", x.0);
            }
        }
        let mut bufs = Vec::new();
        fresh.walk_buffers("", &mut |n, d| bufs.push((n.to_string(), d.to_vec())));
        let mut bufs_orig = Vec::new();
        params.walk_buffers("", &mut |n, d| bufs_orig.push((n.to_string(), d.to_vec())));
        assert_eq!(bufs, bufs_orig);
        assert!(!bufs.is_empty(), "running stats must be serialized");
    }

    #[test]
    fn f32_export_stays_within_tolerance() {
        let (_, params) = tiny_params();
        let bytes = save_checkpoint("", &params, Dtype::F32);
        let ckpt = load_checkpoint(&bytes).unwrap();
        let (_, mut fresh) = tiny_params();
        apply_checkpoint(&mut fresh, &ckpt).unwrap();
        let tol = (2.0f64).powi(-20);
        let a = named_params(&params);
        let b = named_params(&fresh);
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.1.data.iter().zip(&y.1.data) {
                let rel = (u - v).abs() / u.abs().max(1e-30);
                assert!(rel <= tol || *u == *v, "at {}: {u} vs {v}", x.0);
            }
        }
    }

    #[test]
    fn unknown_and_missing_keys_are_rejected() {
        let (_, params) = tiny_params();
        let bytes = save_checkpoint("", &params, Dtype::F64);
        let mut ckpt = load_checkpoint(&bytes).unwrap();
        ckpt.entries.push(Entry {
            path: "intruder.weight".into(),
            dtype: Dtype::F64,
            shape: vec![1],
            data: vec![0.0],
        });
        let (_, mut fresh) = tiny_params();
        match apply_checkpoint(&mut fresh, &ckpt) {
            Err(CheckpointError::UnknownKey(k)) => assert_eq!(k, "intruder.weight"),
            other => panic!("want UnknownKey, got {other:?}"),
        }

        let mut ckpt = load_checkpoint(&bytes).unwrap();
        let dropped = ckpt.entries.remove(0);
        match apply_checkpoint(&mut fresh, &ckpt) {
            Err(CheckpointError::MissingKey(k)) => assert_eq!(k, dropped.path),
            other => panic!("want MissingKey, got {other:?}"),
        }
    }

    #[test]
    fn different_architecture_is_a_structured_error() {
        let (_, params) = tiny_params();
        let bytes = save_checkpoint("", &params, Dtype::F64);
        let ckpt = load_checkpoint(&bytes).unwrap();
        let other_cfg = ModelConfig {
            input_samples: 400,
            sinc_filters: 3,
            sinc_kernel_len: 33,
            channels: vec![2, 3],
            gat_dim: 5, // different width
            dst_dim: 3,
            ..ModelConfig::debug()
        };
        let mut other = ModelParams::init(&other_cfg, 9);
        assert!(matches!(
            apply_checkpoint(&mut other, &ckpt),
            Err(CheckpointError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn corrupted_streams_are_structured_errors() {
        let (_, params) = tiny_params();
        let bytes = save_checkpoint("settings", &params, Dtype::F64);

        assert!(matches!(load_checkpoint(&[]), Err(CheckpointError::Truncated(_))));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(load_checkpoint(&bad_magic), Err(CheckpointError::BadMagic)));

        let mut bad_version = bytes.clone();
        bad_version[4..8].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            load_checkpoint(&bad_version),
            Err(CheckpointError::UnsupportedVersion(99))
        ));

        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(load_checkpoint(truncated), Err(CheckpointError::Truncated(_))));
    }

    #[test]
    fn config_guard_compares_verbatim() {
        let (_, params) = tiny_params();
        let bytes = save_checkpoint("preset = debug\nseed = 1\n", &params, Dtype::F64);
        let ckpt = load_checkpoint(&bytes).unwrap();
        assert!(ensure_config(&ckpt, "preset = debug\nseed = 1\n").is_ok());
        assert!(matches!(
            ensure_config(&ckpt, "preset = small\n"),
            Err(CheckpointError::ConfigMismatch { .. })
        ));
    }
}

//! Model files.
//!
//! Layout (little-endian): magic `SWCN`, u32 version, u32 channels/rows/cols,
//! u32 tensor count, then per tensor a length-prefixed name, u32 rank, u32
//! dims and f64 values; the normalization-stats digest as a length-prefixed
//! string; a u8 flag followed, when set, by the Adam state; and finally the
//! 32-byte SHA-256 of everything before it.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::adam::AdamState;
use super::model::{CnnModel, Param};
use super::tensor::InputShape;
use crate::binio::{put_f64s, put_str, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SWCN";
const VERSION: u32 = 1;

pub fn model_to_bytes(model: &CnnModel, adam: Option<&AdamState>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let s = model.input_shape();
    for d in [s.channels, s.rows, s.cols] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for p in model.params() {
        put_str(&mut out, &p.name);
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for d in &p.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        put_f64s(&mut out, &p.values);
    }
    put_str(&mut out, &model.stats_digest);
    match adam {
        None => out.push(0),
        Some(a) => {
            out.push(1);
            put_f64s(&mut out, &[a.lr, a.beta1, a.beta2, a.eps]);
            out.extend_from_slice(&a.step.to_le_bytes());
            for (m, v) in a.m.iter().zip(&a.v) {
                put_f64s(&mut out, m);
                put_f64s(&mut out, v);
            }
        }
    }
    let checksum = Sha256::digest(&out);
    out.extend_from_slice(&checksum);
    out
}

pub fn model_from_bytes(bytes: &[u8], path: &Path) -> Result<(CnnModel, Option<AdamState>)> {
    if bytes.len() < 36 {
        return Err(Error::format(path, "truncated model file"));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader::new(body, path);
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "not a model file (bad magic)"));
    }
    if Sha256::digest(body).as_slice() != checksum {
        return Err(Error::format(path, "checksum mismatch: file is truncated or corrupt"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported model version {version}")));
    }
    let shape = InputShape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::format(path, "tensor size overflows"))?;
        params.push(Param {
            name,
            shape: dims,
            values: r.f64s(n)?,
        });
    }
    let digest = r.string()?;
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let h = r.f64s(4)?;
            let step = r.u64()?;
            let (mut m, mut v) = (Vec::new(), Vec::new());
            for p in &params {
                m.push(r.f64s(p.values.len())?);
                v.push(r.f64s(p.values.len())?);
            }
            Some(AdamState {
                lr: h[0],
                beta1: h[1],
                beta2: h[2],
                eps: h[3],
                step,
                m,
                v,
            })
        }
        f => return Err(Error::format(path, format!("bad optimizer flag {f}"))),
    };
    if r.remaining() != 0 {
        return Err(Error::format(path, "trailing bytes after model payload"));
    }
    let model = CnnModel::from_params(shape, params, digest).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((model, adam))
}

pub fn save_model(model: &CnnModel, adam: Option<&AdamState>, path: &Path) -> Result<String> {
    let bytes = model_to_bytes(model, adam);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(crate::digest::sha256_hex(&bytes))
}

pub fn load_model(path: &Path) -> Result<(CnnModel, Option<AdamState>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes, path)
}

impl CnnModel {
    /// Warning text when `stats_digest` differs from the normalization the model was trained with.
    pub fn normalization_warning(&self, stats_digest: &str) -> Option<String> {
        (self.stats_digest != stats_digest).then(|| {
            format!(
                "model was trained under normalization {} but data uses {}",
                crate::digest::short(&self.stats_digest),
                crate::digest::short(stats_digest)
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_predictions() {
        let mut m = CnnModel::new(InputShape::new(1, 9, 23), 12).unwrap();
        m.stats_digest = "abc".into();
        let adam = AdamState::new(m.params(), 1e-3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_model(&m, Some(&adam), &path).unwrap();
        let (back, back_adam) = load_model(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back_adam.as_ref(), Some(&adam));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x: Vec<f64> = (0..207).map(|_| rng.random()).collect();
            assert_eq!(m.forward(&x).unwrap().to_bits(), back.forward(&x).unwrap().to_bits());
        }
    }

    #[test]
    fn truncated_or_flipped_files_fail() {
        let m = CnnModel::new(InputShape::new(1, 9, 23), 1).unwrap();
        let bytes = model_to_bytes(&m, None);
        let p = Path::new("m.bin");
        assert!(model_from_bytes(&bytes[..bytes.len() / 2], p).is_err());
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(model_from_bytes(&flipped, p).is_err());
        assert!(model_from_bytes(&bytes, p).is_ok());
    }

    #[test]
    fn digest_mismatch_is_reported() {
        let mut m = CnnModel::new(InputShape::new(1, 9, 23), 1).unwrap();
        m.stats_digest = "aaaa".into();
        assert!(m.normalization_warning("aaaa").is_none());
        assert!(m.normalization_warning("bbbb").is_some());
    }
}

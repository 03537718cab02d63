//! Binary container for window datasets plus its JSON manifest.
//!
//! Layout (little-endian): magic `SWDS`, u32 version, u32 channels, u32 rows,
//! u32 cols, u64 count, then `count·C·R·W` f64 values in row-major order,
//! `count` u8 labels, and `count` triples of i64 (begin, end, first_row),
//! with −1 marking synthetic samples.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::Reader;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::neuralnet::InputShape;

const MAGIC: &[u8; 4] = b"SWDS";
const VERSION: u32 = 1;

/// Where a sample came from in the record stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub begin: i64,
    pub end: i64,
    pub first_row: i64,
}

impl WindowMeta {
    pub const SYNTHETIC: WindowMeta = WindowMeta {
        begin: -1,
        end: -1,
        first_row: -1,
    };

    pub fn is_synthetic(&self) -> bool {
        self.first_row < 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub shape: InputShape,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub meta: Vec<WindowMeta>,
}

impl WindowSet {
    pub fn new(shape: InputShape) -> Self {
        Self {
            shape,
            inputs: Vec::new(),
            labels: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, input: Vec<f64>, label: u8, meta: WindowMeta) {
        debug_assert_eq!(input.len(), self.shape.len());
        self.inputs.push(input);
        self.labels.push(label);
        self.meta.push(meta);
    }

    /// (normal, hacked) counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let normal = self.labels.iter().filter(|&&l| l == 1).count();
        (normal, self.labels.len() - normal)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(28 + n * (self.shape.len() * 8 + 25));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in [self.shape.channels, self.shape.rows, self.shape.cols] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for x in &self.inputs {
            for v in x {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.labels);
        for m in &self.meta {
            for v in [m.begin, m.end, m.first_row] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, "not a window dataset (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported dataset version {version}")));
        }
        let shape = InputShape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let n = r.u64()? as usize;
        let expected = shape
            .len()
            .checked_mul(8)
            .and_then(|b| b.checked_add(25))
            .and_then(|b| b.checked_mul(n))
            .ok_or_else(|| Error::format(path, "sample count overflows"))?;
        if r.remaining() != expected {
            return Err(Error::format(
                path,
                format!("expected {expected} payload bytes, found {}", r.remaining()),
            ));
        }
        let mut set = WindowSet::new(shape);
        for _ in 0..n {
            set.inputs.push(r.f64s(shape.len())?);
        }
        set.labels = r.take(n)?.to_vec();
        if set.labels.iter().any(|&l| l > 1) {
            return Err(Error::format(path, "labels must be 0 or 1"));
        }
        for _ in 0..n {
            set.meta.push(WindowMeta {
                begin: r.i64()?,
                end: r.i64()?,
                first_row: r.i64()?,
            });
        }
        Ok(set)
    }

    /// Write the container; returns the digest of its bytes.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    /// Read a container and return it with the digest of its bytes.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::from_bytes(&bytes, path)?, sha256_hex(&bytes)))
    }
}

/// Class counts in a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub normal: usize,
    pub hacked: usize,
}

/// JSON manifest written next to each dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub rows: usize,
    pub channels: usize,
    pub split: String,
    pub seed: u64,
    pub smote_applied: bool,
    pub counts: ClassCounts,
    pub stats_digest: String,
    pub records_digest: String,
    pub data_digest: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_set(values: Vec<f64>, labels: Vec<u8>) -> WindowSet {
        let shape = InputShape::new(1, 1, values.len() / labels.len().max(1));
        let mut set = WindowSet::new(shape);
        for (i, (chunk, &l)) in values.chunks(shape.len()).zip(&labels).enumerate() {
            let meta = if i % 2 == 0 {
                WindowMeta::SYNTHETIC
            } else {
                WindowMeta {
                    begin: i as i64 * 10,
                    end: i as i64 * 10 + 10,
                    first_row: i as i64 * 18,
                }
            };
            set.push(chunk.to_vec(), l, meta);
        }
        set
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(vals in proptest::collection::vec(proptest::num::f64::ANY, 1..8), n in 1usize..5) {
            let mut values = Vec::new();
            for _ in 0..n { values.extend_from_slice(&vals); }
            let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            let set = sample_set(values, labels);
            let bytes = set.to_bytes();
            let back = WindowSet::from_bytes(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back.labels, set.labels);
            prop_assert_eq!(back.meta, set.meta);
        }
    }

    #[test]
    fn truncated_and_corrupt_files_fail() {
        let set = sample_set(vec![0.5; 12], vec![0, 1, 1]);
        let bytes = set.to_bytes();
        let p = Path::new("x.bin");
        assert!(WindowSet::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(WindowSet::from_bytes(&bad, p).is_err());
        let mut bad = bytes;
        let label_pos = 28 + 12 * 8;
        bad[label_pos] = 7;
        assert!(WindowSet::from_bytes(&bad, p).is_err());
    }
}

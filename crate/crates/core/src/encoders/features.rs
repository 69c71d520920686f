//! DMHF region-feature files.
//!
//! Layout (little-endian): `b"DMHF"`, `u32` version (=1), `u32` N, `u32` d,
//! then `N·d` `f64` values in row-major order.

use std::fs;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"DMHF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// `N` region feature vectors of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures {
    pub n: usize,
    pub d: usize,
    /// Row-major `N × d`.
    pub data: Vec<f64>,
}

impl RegionFeatures {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Contract(format!("region features need N ≥ 1 and d ≥ 1, got {n}×{d}")));
        }
        if data.len() != n * d {
            return Err(Error::shape("region_features", &[n, d], &[data.len()]));
        }
        Ok(Self { n, d, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        Tensor::new(vec![self.n, self.d], self.data.iter().map(|&x| S::of(x)).collect())
            .expect("dimensions validated at construction")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |offset: usize, detail: String| Error::Format {
            offset: offset as u64,
            detail,
        };
        if bytes.len() < HEADER_LEN {
            return Err(fmt(bytes.len(), format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(fmt(0, format!("bad magic {:?}", &bytes[..4])));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != VERSION {
            return Err(fmt(4, format!("unsupported version {version}")));
        }
        let (n, d) = (word(8) as usize, word(12) as usize);
        if n == 0 {
            return Err(fmt(8, "region count N must be at least 1".into()));
        }
        if d == 0 {
            return Err(fmt(12, "feature dimension d must be at least 1".into()));
        }
        let expected = HEADER_LEN + n * d * 8;
        if bytes.len() < expected {
            return Err(fmt(
                bytes.len(),
                format!("truncated payload: expected {} bytes for {n}×{d}, found {}", n * d * 8, bytes.len() - HEADER_LEN),
            ));
        }
        if bytes.len() > expected {
            return Err(fmt(expected, format!("{} trailing bytes", bytes.len() - expected)));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::new(n, d, data)
    }
}

pub fn write_features(path: impl AsRef<Path>, features: &RegionFeatures) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, features.to_bytes()).map_err(|e| Error::path(path, e))
}

pub fn load_region_features(path: impl AsRef<Path>) -> Result<RegionFeatures> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::path(path, e))?;
    RegionFeatures::from_bytes(&bytes)
}

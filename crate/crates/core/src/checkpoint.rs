//! Binary parameter container plus JSON sidecar.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "CGCNCKPT"
//! version  u32      1
//! count    u32      number of tensors
//! repeated count times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rows u64, cols u64
//!   rows*cols f64 values, row-major
//! ```
//!
//! The sidecar (`<name>.json`) records the architecture, seed and fusion
//! coefficients so a checkpoint can be checked against a config before use.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::Architecture;
use crate::error::{Error, Result};
use crate::fusion::FusionCoefficients;
use crate::matrix::Matrix;
use crate::params::ParamSet;

pub const MAGIC: &[u8; 8] = b"CGCNCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub n_nodes: usize,
    pub seed: u64,
    pub fusion: FusionCoefficients,
    pub tensors: Vec<String>,
}

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, value) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(value.cols() as u64).to_le_bytes());
        for v in value.as_slice() {
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
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Validation(format!("checkpoint truncated at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Validation("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Validation(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = r.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Validation("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Validation(format!("tensor `{name}` has absurd shape")))?;
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Validation("size overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.add(name, Matrix::from_vec(rows, cols, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Validation("trailing bytes after last tensor".into()));
    }
    Ok(params)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save(path: &Path, params: &ParamSet, meta: &CheckpointMeta) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta)?;
    fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

pub fn load(path: &Path) -> Result<(ParamSet, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let params = decode(&bytes)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let mut p = ParamSet::new();
        p.add(
            "a",
            Matrix::from_rows(&[[1.5, -2.0], [0.0, f64::MIN_POSITIVE]]),
        );
        p.add("b.bias", Matrix::zeros(1, 3));
        let bytes = encode(&p);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(decode(&bytes).unwrap(), p);
    }

    #[test]
    fn layout_is_little_endian() {
        let mut p = ParamSet::new();
        p.add("x", Matrix::scalar(1.0));
        let bytes = encode(&p);
        // magic, version, count, name_len, "x", rows, cols, value
        assert_eq!(bytes.len(), 8 + 4 + 4 + 4 + 1 + 8 + 8 + 8);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[bytes.len() - 8..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn truncated_input_is_rejected() {
        let mut p = ParamSet::new();
        p.add("x", Matrix::zeros(2, 2));
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(b"NOTACKPT").is_err());
    }
}

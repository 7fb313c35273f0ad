//! Frame-feature matrices and the RFQF interchange format.
//!
//! Layout (all little-endian): magic `RFQF`, `u32` version (1), `u32` T,
//! `u32` D, then T·D `f32` values in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const RFQF_MAGIC: &[u8; 4] = b"RFQF";
pub const RFQF_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Frame rate assumed for files, which do not carry one (20 ms hop).
pub const DEFAULT_FRAME_RATE: f64 = 50.0;

/// A (T × D) matrix of frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Tensor,
    frame_rate: f64,
}

impl FeatureSequence {
    pub fn new(data: Tensor, frame_rate: f64) -> Result<Self> {
        if !data.is_matrix() || data.rows() == 0 || data.cols() == 0 {
            return Err(Error::shape("feature sequence", format!("need T ≥ 1 and D ≥ 1, got {:?}", data.shape())));
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("feature sequence".into()));
        }
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("frame rate {frame_rate}")));
        }
        Ok(Self { data, frame_rate })
    }

    pub fn from_rows(frames: usize, dim: usize, values: Vec<f64>, frame_rate: f64) -> Result<Self> {
        Self::new(Tensor::matrix(frames, dim, values)?, frame_rate)
    }

    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    /// Keeps the first `frames` rows.
    pub fn truncated(&self, frames: usize) -> Result<Self> {
        if frames == 0 || frames > self.frames() {
            return Err(Error::InvalidArgument(format!("cannot truncate {} frames to {frames}", self.frames())));
        }
        let d = self.dim();
        Self::from_rows(frames, d, self.data.data()[..frames * d].to_vec(), self.frame_rate)
    }
}

pub fn encode_features(features: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * features.data.len());
    out.extend_from_slice(RFQF_MAGIC);
    out.extend_from_slice(&RFQF_VERSION.to_le_bytes());
    out.extend_from_slice(&(features.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(features.dim() as u32).to_le_bytes());
    for &v in features.data.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSequence> {
    if bytes.len() < 4 || &bytes[..4] != RFQF_MAGIC {
        return Err(Error::BadMagic { kind: "RFQF", expected: "RFQF" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len())));
    }
    let version = u32_at(bytes, 4);
    if version != RFQF_VERSION {
        return Err(Error::Version { kind: "RFQF", found: version, expected: RFQF_VERSION });
    }
    let (t, d) = (u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize);
    if t == 0 || d == 0 {
        return Err(Error::Validation(format!("RFQF header declares an empty matrix ({t} x {d})")));
    }
    let want = t.checked_mul(d).and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::Truncated("size overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < want {
        return Err(Error::Truncated(format!("header claims {t} x {d} values ({want} bytes), payload has {}", payload.len())));
    }
    if payload.len() > want {
        return Err(Error::Validation(format!("{} trailing bytes after RFQF payload", payload.len() - want)));
    }
    let values: Vec<f64> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("RFQF value {i} (frame {}, dim {})", i / d, i % d)));
    }
    FeatureSequence::from_rows(t, d, values, DEFAULT_FRAME_RATE)
}

pub fn write_features(path: impl AsRef<Path>, features: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(features)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

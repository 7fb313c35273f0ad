//! Frame-level feature extraction.
//!
//! [`ToyEncoderParams`] is a learnable stand-in for a pretrained speech
//! encoder: Hann-windowed frames, a linear projection and GELU. Real
//! encoder features computed elsewhere are read from RFQF files with
//! [`extract_from_file`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{read_features, FeatureSequence};
use crate::manifest::{resolve, ManifestEntry};
use crate::nn::{uniform_init, Graph, NodeId, Tensor};
use crate::rng;
use crate::signal::AudioSignal;

pub const DEFAULT_FRAME_LEN: usize = 400;
pub const DEFAULT_HOP: usize = 320;
pub const DEFAULT_TOY_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoderParams {
    /// (frame_len × D)
    pub projection: Tensor,
    /// (D)
    pub bias: Tensor,
    pub frame_len: usize,
    pub hop: usize,
}

impl ToyEncoderParams {
    /// Projection drawn uniformly in ±1/sqrt(frame_len), zero bias.
    pub fn init(frame_len: usize, hop: usize, dim: usize, seed: u64) -> Result<Self> {
        if !(frame_len > hop && hop > 0) {
            return Err(Error::InvalidArgument(format!("need frame_len > hop > 0, got {frame_len}/{hop}")));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be at least 1".into()));
        }
        let mut rng = rng::seeded(rng::derive(seed, 0xE4C));
        Ok(Self {
            projection: uniform_init(&mut rng, frame_len, dim, frame_len),
            bias: Tensor::zeros(&[dim]),
            frame_len,
            hop,
        })
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn frame_count(&self, samples: usize) -> Result<usize> {
        frame_count(samples, self.frame_len, self.hop)
    }

    /// Records `GELU(frames · W + b)` on a graph. `frames` is the output of
    /// [`frame_signal`]; the returned ids are (projection, bias) leaves.
    pub fn forward(&self, g: &mut Graph, frames: NodeId, trainable: bool) -> Result<(NodeId, [NodeId; 2])> {
        let w = g.leaf(self.projection.clone(), trainable);
        let b = g.leaf(self.bias.clone(), trainable);
        let out = self.forward_with(g, frames, w, b)?;
        Ok((out, [w, b]))
    }

    /// Same as [`forward`](Self::forward) but with parameter leaves already
    /// on the graph (shared across the three tracks).
    pub fn forward_with(&self, g: &mut Graph, frames: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let lin = g.matmul(frames, w)?;
        let lin = g.add(lin, b)?;
        Ok(g.gelu(lin))
    }
}

pub fn frame_count(samples: usize, frame_len: usize, hop: usize) -> Result<usize> {
    if hop == 0 || frame_len == 0 {
        return Err(Error::InvalidArgument("frame length and hop must be positive".into()));
    }
    if samples < frame_len {
        return Err(Error::InvalidSignal(format!("{samples} samples is shorter than one {frame_len}-sample frame")));
    }
    Ok((samples - frame_len) / hop + 1)
}

/// Symmetric Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len).map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / denom).cos()).collect()
}

/// Windowed frames as a (T × frame_len) matrix.
pub fn frame_signal(signal: &AudioSignal, frame_len: usize, hop: usize) -> Result<Tensor> {
    let t = frame_count(signal.len(), frame_len, hop)?;
    let w = hann(frame_len);
    let x = signal.samples();
    let mut data = Vec::with_capacity(t * frame_len);
    for f in 0..t {
        let start = f * hop;
        data.extend(x[start..start + frame_len].iter().zip(&w).map(|(s, wv)| s * wv));
    }
    Ok(Tensor::from_raw(vec![t, frame_len], data))
}

/// Features of `signal` under the toy encoder.
pub fn extract(signal: &AudioSignal, params: &ToyEncoderParams) -> Result<FeatureSequence> {
    let frames = frame_signal(signal, params.frame_len, params.hop)?;
    extract_frames(&frames, params, signal.sample_rate() as f64 / params.hop as f64)
}

pub fn extract_frames(frames: &Tensor, params: &ToyEncoderParams, frame_rate: f64) -> Result<FeatureSequence> {
    FeatureSequence::new(encode_frames(frames, params)?, frame_rate)
}

/// `GELU(frames · W + b)` evaluated with the same kernels as the graph
/// path, so both give bit-identical features.
pub fn encode_frames(frames: &Tensor, params: &ToyEncoderParams) -> Result<Tensor> {
    if frames.cols() != params.frame_len {
        return Err(Error::shape("extract", format!("frame width {} vs encoder {}", frames.cols(), params.frame_len)));
    }
    let mut g = Graph::new();
    let fi = g.leaf(frames.clone(), false);
    let (out, _) = params.forward(&mut g, fi, false)?;
    Ok(g.value(out).clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    Mix,
    Est1,
    Est2,
}

impl Track {
    pub const ALL: [Track; 3] = [Track::Mix, Track::Est1, Track::Est2];

    pub fn index(self) -> usize {
        match self {
            Track::Mix => 0,
            Track::Est1 => 1,
            Track::Est2 => 2,
        }
    }
}

/// Reads the three RFQF files of an entry, checks they share D and
/// truncates all of them to the shortest T.
pub fn extract_triplet_from_files(base_dir: &std::path::Path, entry: &ManifestEntry) -> Result<[FeatureSequence; 3]> {
    let paths = entry.features.as_ref().ok_or_else(|| {
        Error::MissingPath(format!(
            "entry {} has no feature paths; use the toy encoder (--features toy) or export features first",
            entry.id
        ))
    })?;
    let read = |p: &std::path::Path| read_features(resolve(base_dir, p));
    let feats = [read(&paths.mix)?, read(&paths.est1)?, read(&paths.est2)?];
    align_triplet(feats, &entry.id)
}

pub fn align_triplet(feats: [FeatureSequence; 3], id: &str) -> Result<[FeatureSequence; 3]> {
    let d = feats[0].dim();
    if feats.iter().any(|f| f.dim() != d) {
        return Err(Error::Validation(format!(
            "entry {id}: feature dimensions differ across tracks ({}, {}, {})",
            feats[0].dim(),
            feats[1].dim(),
            feats[2].dim()
        )));
    }
    let t = feats.iter().map(FeatureSequence::frames).min().expect("three tracks");
    let [a, b, c] = feats;
    Ok([a.truncated(t)?, b.truncated(t)?, c.truncated(t)?])
}

pub fn extract_from_file(base_dir: &std::path::Path, entry: &ManifestEntry, track: Track) -> Result<FeatureSequence> {
    let [a, b, c] = extract_triplet_from_files(base_dir, entry)?;
    Ok(match track {
        Track::Mix => a,
        Track::Est1 => b,
        Track::Est2 => c,
    })
}

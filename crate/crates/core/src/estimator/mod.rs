//! The reference-free metric estimator.
//!
//! Each of the three tracks (mixture, estimate 1, estimate 2) goes through
//! the same frame encoder; the three (T × D) feature matrices are
//! concatenated along the feature axis into (T × 3D), passed through one
//! transformer encoder layer, mean-pooled over time and mapped by a linear
//! head to per-source and average metric values.

mod checkpoint;
mod train;

pub use checkpoint::{load, load_bytes, save, save_bytes, RFQC_MAGIC, RFQC_VERSION};
pub(crate) use train::outputs_for;
pub use train::{fit, fit_manifest, load_items, EpochRecord, StepRecord, TrainingItem, TrainingLog};

use serde::{Deserialize, Serialize};

use crate::encoder::{frame_signal, ToyEncoderParams, DEFAULT_FRAME_LEN, DEFAULT_HOP, DEFAULT_TOY_DIM};
use crate::error::{Error, Result};
use crate::manifest::{MetricKind, MetricLabels, MetricTriple};
use crate::nn::{sinusoidal_positions, uniform_init, Graph, NodeId, Tensor, TransformerLayer};
use crate::rng;
use crate::signal::AudioSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    Wer,
    Sisnr,
    Joint,
}

impl MetricMode {
    pub fn kinds(self) -> &'static [MetricKind] {
        match self {
            MetricMode::Wer => &[MetricKind::Wer],
            MetricMode::Sisnr => &[MetricKind::Sisnr],
            MetricMode::Joint => &[MetricKind::Wer, MetricKind::Sisnr],
        }
    }

    pub fn n_outputs(self) -> usize {
        3 * self.kinds().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricMode::Wer => "wer",
            MetricMode::Sisnr => "sisnr",
            MetricMode::Joint => "joint",
        }
    }

    /// Joint models regress min-max normalized targets.
    pub fn normalizes(self) -> bool {
        self == MetricMode::Joint
    }
}

impl std::str::FromStr for MetricMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wer" => Ok(MetricMode::Wer),
            "sisnr" => Ok(MetricMode::Sisnr),
            "joint" => Ok(MetricMode::Joint),
            other => Err(Error::InvalidArgument(format!("unknown metric mode '{other}'"))),
        }
    }
}

/// Where per-track features come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// The learnable toy encoder applied to WAV audio.
    Toy,
    /// Precomputed RFQF files listed in the manifest.
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub metric_mode: MetricMode,
    pub feature_mode: FeatureMode,
    /// Per-track feature width D; the transformer runs at 3·D.
    pub feature_dim: usize,
    pub heads: usize,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub peak_lr_encoder: f64,
    pub peak_lr_scratch: f64,
    pub encoder_trainable: bool,
    pub seed: u64,
    pub frame_len: usize,
    pub hop: usize,
    pub positional_encoding: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            metric_mode: MetricMode::Wer,
            feature_mode: FeatureMode::Toy,
            feature_dim: DEFAULT_TOY_DIM,
            heads: 4,
            batch_size: 12,
            warmup_steps: 10_000,
            total_steps: 50_000,
            peak_lr_encoder: 1e-5,
            peak_lr_scratch: 1e-4,
            encoder_trainable: true,
            seed: 0,
            frame_len: DEFAULT_FRAME_LEN,
            hop: DEFAULT_HOP,
            positional_encoding: false,
        }
    }
}

impl EstimatorConfig {
    pub fn model_width(&self) -> usize {
        3 * self.feature_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::InvalidArgument("feature_dim must be at least 1".into()));
        }
        if self.heads == 0 || self.model_width() % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "3·D = {} is not divisible by {} heads",
                self.model_width(),
                self.heads
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.warmup_steps > 0 && self.warmup_steps < self.total_steps) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < warmup_steps ({}) < total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        for (name, lr) in [("peak_lr_encoder", self.peak_lr_encoder), ("peak_lr_scratch", self.peak_lr_scratch)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} = {lr} is invalid")));
            }
        }
        if self.feature_mode == FeatureMode::Toy && !(self.frame_len > self.hop && self.hop > 0) {
            return Err(Error::InvalidArgument(format!("need frame_len > hop > 0, got {}/{}", self.frame_len, self.hop)));
        }
        Ok(())
    }
}

/// Global per-output min-max scaling onto [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelNormalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl LabelNormalizer {
    /// Fits on target rows (typically train and valid together).
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut min: Vec<f64> = Vec::new();
        let mut max: Vec<f64> = Vec::new();
        for row in rows {
            if min.is_empty() {
                min = row.to_vec();
                max = row.to_vec();
                continue;
            }
            if row.len() != min.len() {
                return Err(Error::Normalization(format!("row width {} vs {}", row.len(), min.len())));
            }
            for (i, &v) in row.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        if min.is_empty() {
            return Err(Error::Normalization("no labels to fit".into()));
        }
        let n = Self { min, max };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != self.max.len() || self.min.is_empty() {
            return Err(Error::Normalization("min/max widths differ or are empty".into()));
        }
        for (i, (lo, hi)) in self.min.iter().zip(&self.max).enumerate() {
            if !(hi > lo) {
                return Err(Error::Normalization(format!(
                    "output {i} is constant over train+valid (min = max = {lo}); cannot min-max normalize"
                )));
            }
        }
        Ok(())
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.min.iter().zip(&self.max)).map(|(v, (lo, hi))| (v - lo) / (hi - lo)).collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.min.iter().zip(&self.max)).map(|(v, (lo, hi))| lo + v * (hi - lo)).collect()
    }
}

/// Raw target vector for `mode`: `[wer s1, s2, avg][, sisnr s1, s2, avg]`.
pub fn raw_targets(labels: &MetricLabels, mode: MetricMode) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(mode.n_outputs());
    for &kind in mode.kinds() {
        let t = labels
            .get(kind)
            .ok_or_else(|| Error::Validation(format!("labels lack {} values required by {} mode", kind.as_str(), mode.as_str())))?;
        out.extend(t.as_array());
    }
    Ok(out)
}

/// Targets in the space the model regresses (normalized for joint mode).
pub fn model_targets(labels: &MetricLabels, mode: MetricMode, normalizer: Option<&LabelNormalizer>) -> Result<Vec<f64>> {
    let raw = raw_targets(labels, mode)?;
    if mode.normalizes() {
        let n = normalizer.ok_or_else(|| Error::Normalization("joint mode needs a fitted normalizer".into()))?;
        Ok(n.normalize(&raw))
    } else {
        Ok(raw)
    }
}

/// MSE between model outputs and labels in the model's target space.
pub fn training_loss(outputs: &[f64], labels: &MetricLabels, normalizer: Option<&LabelNormalizer>, mode: MetricMode) -> Result<f64> {
    let targets = model_targets(labels, mode, normalizer)?;
    if outputs.len() != targets.len() {
        return Err(Error::shape("training_loss", format!("{} outputs vs {} targets", outputs.len(), targets.len())));
    }
    Ok(outputs.iter().zip(&targets).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / targets.len() as f64)
}

/// Estimator input for one triplet.
#[derive(Debug, Clone, PartialEq)]
pub enum TripletInput {
    /// Hann-windowed frames (T × frame_len) per track, for the toy encoder.
    Frames([Tensor; 3]),
    /// Precomputed features (T × D) per track.
    Features([Tensor; 3]),
}

impl TripletInput {
    pub fn frames(&self) -> usize {
        match self {
            TripletInput::Frames(t) | TripletInput::Features(t) => t[0].rows(),
        }
    }

    pub fn tracks(&self) -> &[Tensor; 3] {
        match self {
            TripletInput::Frames(t) | TripletInput::Features(t) => t,
        }
    }

    /// Frames three WAV-derived signals for the toy encoder.
    pub fn from_audio(mixture: &AudioSignal, est1: &AudioSignal, est2: &AudioSignal, frame_len: usize, hop: usize) -> Result<Self> {
        for other in [est1, est2] {
            if other.sample_rate() != mixture.sample_rate() {
                return Err(Error::InvalidSignal(format!(
                    "sample rate mismatch within triplet: {} vs {}",
                    mixture.sample_rate(),
                    other.sample_rate()
                )));
            }
        }
        let f = [
            frame_signal(mixture, frame_len, hop)?,
            frame_signal(est1, frame_len, hop)?,
            frame_signal(est2, frame_len, hop)?,
        ];
        let t = f.iter().map(Tensor::rows).min().unwrap();
        let [a, b, c] = f;
        Ok(TripletInput::Frames([truncate_rows(&a, t), truncate_rows(&b, t), truncate_rows(&c, t)]))
    }

    /// Wraps three feature matrices; they must agree in T and D.
    pub fn from_features(mix: Tensor, est1: Tensor, est2: Tensor) -> Result<Self> {
        for t in [&est1, &est2] {
            if t.shape() != mix.shape() || !t.is_matrix() {
                return Err(Error::shape("forward", format!("track shapes {:?} vs {:?}", mix.shape(), t.shape())));
            }
        }
        if !mix.is_matrix() || mix.rows() == 0 {
            return Err(Error::shape("forward", format!("features must be T × D with T ≥ 1, got {:?}", mix.shape())));
        }
        Ok(TripletInput::Features([mix, est1, est2]))
    }
}

pub(crate) fn truncate_rows(t: &Tensor, rows: usize) -> Tensor {
    if t.rows() == rows {
        return t.clone();
    }
    let c = t.cols();
    Tensor::from_raw(vec![rows, c], t.data()[..rows * c].to_vec())
}

/// Parameter leaves recorded for one forward pass.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    /// Projection and bias of the toy encoder, when it is part of the model.
    pub encoder: Option<[NodeId; 2]>,
    /// Transformer parameters followed by head weight and bias.
    pub scratch: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorModel {
    pub config: EstimatorConfig,
    /// Present in toy feature mode.
    pub encoder: Option<ToyEncoderParams>,
    pub transformer: TransformerLayer,
    /// (3D × n_out)
    pub head_weight: Tensor,
    /// (n_out)
    pub head_bias: Tensor,
    pub normalizer: Option<LabelNormalizer>,
}

impl EstimatorModel {
    /// Freshly initialised model; deterministic in `config.seed`.
    pub fn init(config: &EstimatorConfig) -> Result<Self> {
        config.validate()?;
        let encoder = match config.feature_mode {
            FeatureMode::Toy => Some(ToyEncoderParams::init(config.frame_len, config.hop, config.feature_dim, config.seed)?),
            FeatureMode::Files => None,
        };
        let width = config.model_width();
        let transformer = TransformerLayer::new(width, config.heads, &mut rng::seeded(rng::derive(config.seed, 0x7F)))?;
        let n_out = config.metric_mode.n_outputs();
        let head_weight = uniform_init(&mut rng::seeded(rng::derive(config.seed, 0x4EAD)), width, n_out, width);
        Ok(Self { config: config.clone(), encoder, transformer, head_weight, head_bias: Tensor::zeros(&[n_out]), normalizer: None })
    }

    pub fn n_outputs(&self) -> usize {
        self.head_bias.len()
    }

    pub fn mode(&self) -> MetricMode {
        self.config.metric_mode
    }

    /// Checks internal consistency (used after loading).
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let width = self.config.model_width();
        let n_out = self.config.metric_mode.n_outputs();
        if self.transformer.d_model != width || self.transformer.heads != self.config.heads {
            return Err(Error::Validation("transformer shape does not match config".into()));
        }
        for (name, t) in TransformerLayer::PARAM_NAMES.iter().zip(self.transformer.params()) {
            let d = width;
            let h = crate::nn::transformer::FFN_RATIO * d;
            let want: Vec<usize> = match *name {
                "w1" => vec![d, h],
                "b1" => vec![h],
                "w2" => vec![h, d],
                "wq" | "wk" | "wv" | "wo" => vec![d, d],
                _ => vec![d],
            };
            if t.shape() != want.as_slice() {
                return Err(Error::Validation(format!("transformer param {name} has shape {:?}, expected {want:?}", t.shape())));
            }
        }
        if self.head_weight.shape() != [width, n_out] || self.head_bias.shape() != [n_out] {
            return Err(Error::Validation(format!(
                "head shape {:?}/{:?} does not match width {width} and {n_out} outputs",
                self.head_weight.shape(),
                self.head_bias.shape()
            )));
        }
        match (self.config.feature_mode, &self.encoder) {
            (FeatureMode::Toy, Some(e)) => {
                if e.projection.shape() != [self.config.frame_len, self.config.feature_dim] || e.bias.shape() != [self.config.feature_dim] {
                    return Err(Error::Validation("encoder shape does not match config".into()));
                }
            }
            (FeatureMode::Toy, None) => return Err(Error::Validation("toy feature mode without encoder parameters".into())),
            (FeatureMode::Files, Some(_)) => return Err(Error::Validation("file feature mode with encoder parameters".into())),
            (FeatureMode::Files, None) => {}
        }
        match (&self.normalizer, self.config.metric_mode.normalizes()) {
            (Some(n), true) => {
                n.validate()?;
                if n.min.len() != n_out {
                    return Err(Error::Validation(format!("normalizer has {} outputs, model has {n_out}", n.min.len())));
                }
            }
            (None, true) => return Err(Error::Validation("joint-mode model has no label normalizer".into())),
            (Some(_), false) | (None, false) => {}
        }
        Ok(())
    }

    fn check_input(&self, input: &TripletInput) -> Result<()> {
        match (input, &self.encoder) {
            (TripletInput::Frames(f), Some(enc)) => {
                if f.iter().any(|t| t.cols() != enc.frame_len) {
                    return Err(Error::shape("forward", format!("frames must be {} samples wide", enc.frame_len)));
                }
            }
            (TripletInput::Frames(_), None) => {
                return Err(Error::InvalidArgument("model reads precomputed features; raw audio frames given".into()))
            }
            (TripletInput::Features(f), _) => {
                if f.iter().any(|t| t.cols() != self.config.feature_dim) {
                    return Err(Error::shape(
                        "forward",
                        format!("feature dimension {} does not match model D = {}", f[0].cols(), self.config.feature_dim),
                    ));
                }
            }
        }
        let t = input.tracks();
        if t.iter().any(|x| x.rows() != t[0].rows() || x.rows() == 0) {
            return Err(Error::shape("forward", "tracks must share a nonzero frame count"));
        }
        Ok(())
    }

    /// Records the batched forward pass. All items are truncated to the
    /// shortest T in the batch. Output is (B × n_out).
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        batch: &[&TripletInput],
        train_encoder: bool,
        train_scratch: bool,
    ) -> Result<(NodeId, ParamNodes)> {
        if batch.is_empty() {
            return Err(Error::shape("forward", "empty batch"));
        }
        for item in batch {
            self.check_input(item)?;
        }
        let t = batch.iter().map(|b| b.frames()).min().unwrap();

        let mut encoder_nodes = None;
        let mut tracks = Vec::with_capacity(3);
        for k in 0..3 {
            let cols = batch[0].tracks()[k].cols();
            let mut stacked = Vec::with_capacity(batch.len() * t * cols);
            for item in batch {
                stacked.extend_from_slice(&item.tracks()[k].data()[..t * cols]);
            }
            let x = g.leaf(Tensor::from_raw(vec![batch.len() * t, cols], stacked), false);
            let feat = match batch[0] {
                TripletInput::Frames(_) => {
                    let enc = self.encoder.as_ref().expect("checked by check_input");
                    let [w, b] = *encoder_nodes.get_or_insert_with(|| {
                        [g.leaf(enc.projection.clone(), train_encoder), g.leaf(enc.bias.clone(), train_encoder)]
                    });
                    enc.forward_with(g, x, w, b)?
                }
                TripletInput::Features(_) => x,
            };
            tracks.push(feat);
        }
        let mut x = g.concat_cols(&tracks)?;
        if self.config.positional_encoding {
            let pe = sinusoidal_positions(t, self.config.model_width());
            let tiled: Vec<f64> = (0..batch.len()).flat_map(|_| pe.data().iter().copied()).collect();
            let pe = g.leaf(Tensor::from_raw(vec![batch.len() * t, self.config.model_width()], tiled), false);
            x = g.add(x, pe)?;
        }
        let (h, mut scratch) = self.transformer.forward(g, x, t, train_scratch)?;
        let pooled = g.mean_pool(h, t)?;
        let hw = g.leaf(self.head_weight.clone(), train_scratch);
        let hb = g.leaf(self.head_bias.clone(), train_scratch);
        let y = g.matmul(pooled, hw)?;
        let y = g.add(y, hb)?;
        scratch.push(hw);
        scratch.push(hb);
        Ok((y, ParamNodes { encoder: encoder_nodes, scratch }))
    }

    /// Raw head outputs (normalized space for joint models) for a batch.
    pub fn forward_batch(&self, batch: &[&TripletInput]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let (y, _) = self.forward_graph(&mut g, batch, false, false)?;
        Ok(g.value(y).data().chunks(self.n_outputs()).map(<[f64]>::to_vec).collect())
    }

    pub fn forward_input(&self, input: &TripletInput) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&[input])?.pop().unwrap())
    }

    /// Head outputs for three (T × D) feature matrices.
    pub fn forward(&self, feats_mix: &Tensor, feats_s1: &Tensor, feats_s2: &Tensor) -> Result<Vec<f64>> {
        let input = TripletInput::from_features(feats_mix.clone(), feats_s1.clone(), feats_s2.clone())?;
        self.forward_input(&input)
    }

    /// Converts head outputs to metric values.
    pub fn outputs_to_labels(&self, outputs: &[f64]) -> Result<MetricLabels> {
        let values = match (&self.normalizer, self.mode().normalizes()) {
            (Some(n), true) => n.denormalize(outputs),
            (None, true) => return Err(Error::Normalization("joint-mode model has no normalizer".into())),
            _ => outputs.to_vec(),
        };
        let mut labels = MetricLabels::default();
        for (i, &kind) in self.mode().kinds().iter().enumerate() {
            let t = MetricTriple { s1: values[3 * i], s2: values[3 * i + 1], avg: values[3 * i + 2] };
            match kind {
                MetricKind::Wer => labels.wer = Some(t),
                MetricKind::Sisnr => labels.sisnr = Some(t),
            }
        }
        Ok(labels)
    }

    /// Estimated metrics for one triplet; only the model's metrics are set.
    pub fn predict(&self, input: &TripletInput) -> Result<MetricLabels> {
        self.outputs_to_labels(&self.forward_input(input)?)
    }

    pub fn predict_batch(&self, inputs: &[&TripletInput]) -> Result<Vec<MetricLabels>> {
        self.forward_batch(inputs)?.iter().map(|o| self.outputs_to_labels(o)).collect()
    }

    /// Estimated metrics straight from audio (toy-encoder models only).
    pub fn predict_audio(&self, mixture: &AudioSignal, est1: &AudioSignal, est2: &AudioSignal) -> Result<MetricLabels> {
        let enc = self
            .encoder
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model was trained on precomputed features; pass feature files".into()))?;
        self.predict(&TripletInput::from_audio(mixture, est1, est2, enc.frame_len, enc.hop)?)
    }
}

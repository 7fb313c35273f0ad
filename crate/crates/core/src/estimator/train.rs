use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{model_targets, raw_targets, EstimatorConfig, EstimatorModel, FeatureMode, LabelNormalizer, TripletInput};
use crate::encoder::{encode_frames, extract_triplet_from_files};
use crate::error::{Error, Result};
use crate::manifest::{resolve, Manifest, MetricLabels, Split};
use crate::nn::{adam_step, AdamState, Graph, LrSchedule, Tensor};
use crate::rng;
use crate::wav::read_wav;

/// One labelled triplet ready for training or evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingItem {
    pub id: String,
    pub input: TripletInput,
    pub labels: MetricLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    /// `None` when the encoder group is frozen or absent.
    pub lr_encoder: Option<f64>,
    pub lr_scratch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Last step of the epoch.
    pub step: u64,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub config: EstimatorConfig,
    pub encoder_group_active: bool,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best_step: u64,
    pub best_valid_loss: Option<f64>,
}

impl TrainingLog {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Loads the labelled items of one split, as frames for the toy encoder or
/// as RFQF features.
pub fn load_items(manifest: &Manifest, split: Split, config: &EstimatorConfig) -> Result<Vec<TrainingItem>> {
    manifest
        .split(split)
        .into_iter()
        .map(|entry| {
            entry.validate()?;
            let input = match config.feature_mode {
                FeatureMode::Toy => {
                    let read = |p: &std::path::Path| read_wav(resolve(&manifest.base_dir, p));
                    let a = &entry.audio;
                    TripletInput::from_audio(&read(&a.mixture)?, &read(&a.est1)?, &read(&a.est2)?, config.frame_len, config.hop)?
                }
                FeatureMode::Files => {
                    let [m, e1, e2] = extract_triplet_from_files(&manifest.base_dir, entry)?;
                    TripletInput::from_features(m.into_tensor(), e1.into_tensor(), e2.into_tensor())?
                }
            };
            Ok(TrainingItem { id: entry.id.clone(), input, labels: *entry.labels()? })
        })
        .collect()
}

/// Loads the train and valid splits of `manifest` and runs [`fit`].
pub fn fit_manifest(config: &EstimatorConfig, manifest: &Manifest) -> Result<(EstimatorModel, TrainingLog)> {
    let train = load_items(manifest, Split::Train, config)?;
    let valid = load_items(manifest, Split::Valid, config)?;
    fit(config, &train, &valid)
}

/// Trains a fresh model and returns the parameters with the lowest
/// validation MSE (or the final ones if `valid` is empty).
pub fn fit(config: &EstimatorConfig, train: &[TrainingItem], valid: &[TrainingItem]) -> Result<(EstimatorModel, TrainingLog)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mode = config.metric_mode;
    let mut model = EstimatorModel::init(config)?;

    if mode.normalizes() {
        let rows = train
            .iter()
            .chain(valid)
            .map(|it| raw_targets(&it.labels, mode))
            .collect::<Result<Vec<_>>>()?;
        model.normalizer = Some(LabelNormalizer::fit(rows.iter().map(Vec::as_slice))?);
    }
    let targets = |items: &[TrainingItem]| -> Result<Vec<Vec<f64>>> {
        items.iter().map(|it| model_targets(&it.labels, mode, model.normalizer.as_ref())).collect()
    };
    let train_targets = targets(train)?;
    let valid_targets = targets(valid)?;

    // Start the head at the mean target so early steps fit shape, not offset.
    let n_out = model.n_outputs();
    let mut mean = vec![0.0; n_out];
    for t in &train_targets {
        for (m, v) in mean.iter_mut().zip(t) {
            *m += v / train.len() as f64;
        }
    }
    model.head_bias = Tensor::vector(mean);

    let encoder_active = config.encoder_trainable && model.encoder.is_some();
    // With a frozen encoder the features never change, so compute them once.
    let freeze = |items: &[TrainingItem]| -> Result<Vec<TripletInput>> {
        items
            .iter()
            .map(|it| match (&it.input, &model.encoder) {
                (TripletInput::Frames(f), Some(enc)) if !encoder_active => {
                    Ok(TripletInput::Features([encode_frames(&f[0], enc)?, encode_frames(&f[1], enc)?, encode_frames(&f[2], enc)?]))
                }
                (input, _) => Ok(input.clone()),
            })
            .collect()
    };
    let train_inputs = freeze(train)?;
    let valid_inputs = freeze(valid)?;

    let scratch_schedule = LrSchedule::new(config.peak_lr_scratch, config.warmup_steps, config.total_steps)?;
    let encoder_schedule = LrSchedule::new(config.peak_lr_encoder, config.warmup_steps, config.total_steps)?;
    let mut scratch_state = AdamState::for_params(&scratch_params(&model));
    let mut encoder_state = model.encoder.as_ref().map(|e| AdamState::for_params(&[&e.projection, &e.bias]));

    let mut log = TrainingLog {
        config: config.clone(),
        encoder_group_active: encoder_active,
        steps: Vec::with_capacity(config.total_steps as usize),
        epochs: Vec::new(),
        best_step: 0,
        best_valid_loss: None,
    };
    let mut best: Option<(f64, EstimatorModel)> = None;

    let mut shuffle_rng = rng::seeded(rng::derive(config.seed, 0x5A0F));
    let batch_size = config.batch_size.min(train.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = usize::MAX;
    let mut epoch = 0;
    let mut epoch_loss = (0.0, 0usize);

    for step in 1..=config.total_steps {
        if cursor == usize::MAX {
            order.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch_size];
        cursor += batch_size;

        let batch: Vec<&TripletInput> = idx.iter().map(|&i| &train_inputs[i]).collect();
        let mut g = Graph::new();
        let (y, nodes) = model.forward_graph(&mut g, &batch, encoder_active, true)?;
        let target: Vec<f64> = idx.iter().flat_map(|&i| train_targets[i].iter().copied()).collect();
        let loss_node = g.mse_loss(y, &Tensor::from_raw(vec![batch.len(), n_out], target))?;
        let loss = g.value(loss_node).data()[0];
        if !loss.is_finite() {
            let ids: Vec<&str> = idx.iter().map(|&i| train[i].id.as_str()).collect();
            return Err(Error::Numerical(format!(
                "loss became {loss} at step {step} (epoch {epoch}, scratch lr {:.3e}); batch items: {}",
                scratch_schedule.lr_at(step)?,
                ids.join(", ")
            )));
        }
        let grads = g.backward(loss_node)?;

        let lr_scratch = scratch_schedule.lr_at(step)?;
        let scratch_grads: Vec<Tensor> = nodes.scratch.iter().map(|&n| grads.get_or_zero(n)).collect();
        adam_step(&mut scratch_params_mut(&mut model), &scratch_grads, &mut scratch_state, lr_scratch)?;

        let mut lr_encoder = None;
        if encoder_active {
            let lr = encoder_schedule.lr_at(step)?;
            let [w, b] = nodes.encoder.expect("toy encoder present");
            let enc = model.encoder.as_mut().expect("toy encoder present");
            let state = encoder_state.as_mut().expect("encoder state");
            adam_step(&mut [&mut enc.projection, &mut enc.bias], &[grads.get_or_zero(w), grads.get_or_zero(b)], state, lr)?;
            lr_encoder = Some(lr);
        }
        log.steps.push(StepRecord { step, loss, lr_encoder, lr_scratch });
        epoch_loss.0 += loss;
        epoch_loss.1 += 1;

        let epoch_done = cursor + batch_size > train.len();
        if epoch_done || step == config.total_steps {
            let valid_loss = if valid.is_empty() { None } else { Some(dataset_mse(&model, &valid_inputs, &valid_targets)?) };
            log::debug!("epoch {epoch} step {step}: train {:.5} valid {:?}", epoch_loss.0 / epoch_loss.1 as f64, valid_loss);
            log.epochs.push(EpochRecord { epoch, step, train_loss: epoch_loss.0 / epoch_loss.1 as f64, valid_loss });
            if let Some(v) = valid_loss {
                if !v.is_finite() {
                    return Err(Error::Numerical(format!("validation loss became {v} at step {step}")));
                }
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, model.clone()));
                    log.best_step = step;
                    log.best_valid_loss = Some(v);
                }
            }
            if epoch_done {
                epoch += 1;
                epoch_loss = (0.0, 0);
                cursor = usize::MAX;
            }
        }
    }
    if best.is_none() {
        log.best_step = config.total_steps;
    }
    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok((model, log))
}

fn scratch_params(model: &EstimatorModel) -> Vec<&Tensor> {
    let mut p: Vec<&Tensor> = model.transformer.params().to_vec();
    p.push(&model.head_weight);
    p.push(&model.head_bias);
    p
}

fn scratch_params_mut(model: &mut EstimatorModel) -> Vec<&mut Tensor> {
    let mut p: Vec<&mut Tensor> = model.transformer.params_mut().into_iter().collect();
    p.push(&mut model.head_weight);
    p.push(&mut model.head_bias);
    p
}

/// Head outputs for every input, batching items of equal length so no
/// truncation happens at evaluation time.
pub(crate) fn outputs_for(model: &EstimatorModel, inputs: &[TripletInput]) -> Result<Vec<Vec<f64>>> {
    const CHUNK: usize = 64;
    let mut out = vec![Vec::new(); inputs.len()];
    let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, x) in inputs.iter().enumerate() {
        by_len.entry(x.frames()).or_default().push(i);
    }
    for idx in by_len.values() {
        for chunk in idx.chunks(CHUNK) {
            let batch: Vec<&TripletInput> = chunk.iter().map(|&i| &inputs[i]).collect();
            for (&i, o) in chunk.iter().zip(model.forward_batch(&batch)?) {
                out[i] = o;
            }
        }
    }
    Ok(out)
}

fn dataset_mse(model: &EstimatorModel, inputs: &[TripletInput], targets: &[Vec<f64>]) -> Result<f64> {
    let outputs = outputs_for(model, inputs)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (o, t) in outputs.iter().zip(targets) {
        for (a, b) in o.iter().zip(t) {
            sum += (a - b).powi(2);
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

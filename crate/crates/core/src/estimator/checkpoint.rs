//! RFQC checkpoint container: magic, u32 version, u32 header length, a JSON
//! header, then every parameter as little-endian f64 in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EstimatorConfig, EstimatorModel, LabelNormalizer};
use crate::encoder::ToyEncoderParams;
use crate::error::{Error, Result};
use crate::nn::{Tensor, TransformerLayer};

pub const RFQC_MAGIC: &[u8; 4] = b"RFQC";
pub const RFQC_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: EstimatorConfig,
    normalizer: Option<LabelNormalizer>,
    seed: u64,
    params: Vec<ParamInfo>,
}

#[derive(Serialize, Deserialize)]
struct ParamInfo {
    name: String,
    shape: Vec<usize>,
}

fn named_params(model: &EstimatorModel) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    if let Some(e) = &model.encoder {
        out.push(("encoder.projection".to_string(), &e.projection));
        out.push(("encoder.bias".to_string(), &e.bias));
    }
    for (name, t) in TransformerLayer::PARAM_NAMES.iter().zip(model.transformer.params()) {
        out.push((format!("transformer.{name}"), t));
    }
    out.push(("head.weight".to_string(), &model.head_weight));
    out.push(("head.bias".to_string(), &model.head_bias));
    out
}

pub fn save_bytes(model: &EstimatorModel) -> Result<Vec<u8>> {
    model.validate()?;
    let params = named_params(model);
    let header = Header {
        config: model.config.clone(),
        normalizer: model.normalizer.clone(),
        seed: model.config.seed,
        params: params.iter().map(|(n, t)| ParamInfo { name: n.clone(), shape: t.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + params.iter().map(|(_, t)| 8 * t.len()).sum::<usize>());
    out.extend_from_slice(RFQC_MAGIC);
    out.extend_from_slice(&RFQC_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in params {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_bytes(bytes: &[u8]) -> Result<EstimatorModel> {
    if bytes.len() < 12 {
        return Err(Error::Truncated(format!("checkpoint is {} bytes, header needs 12", bytes.len())));
    }
    if &bytes[..4] != RFQC_MAGIC {
        return Err(Error::BadMagic { kind: "checkpoint", expected: "RFQC" });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != RFQC_VERSION {
        return Err(Error::Version { kind: "checkpoint", found: version, expected: RFQC_VERSION });
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < hlen {
        return Err(Error::Truncated(format!("checkpoint header claims {hlen} bytes, {} present", body.len())));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])?;
    let mut payload = &body[hlen..];

    let mut tensors = Vec::with_capacity(header.params.len());
    for p in &header.params {
        let n: usize = p.shape.iter().product();
        if payload.len() < 8 * n {
            return Err(Error::Truncated(format!("checkpoint payload ends inside parameter {}", p.name)));
        }
        let data = payload[..8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        payload = &payload[8 * n..];
        tensors.push((p.name.as_str(), Tensor::new(p.shape.clone(), data).map_err(|e| Error::Validation(format!("{}: {e}", p.name)))?));
    }
    if !payload.is_empty() {
        return Err(Error::Validation(format!("{} trailing bytes after checkpoint payload", payload.len())));
    }

    let config = header.config;
    // Build a correctly shaped model, then overwrite every parameter by name.
    let mut model = EstimatorModel::init(&config)?;
    model.normalizer = header.normalizer;
    let expected: Vec<String> = named_params(&model).into_iter().map(|(n, _)| n).collect();
    let got: Vec<&str> = tensors.iter().map(|(n, _)| *n).collect();
    if expected != got {
        return Err(Error::Validation(format!("checkpoint parameters {got:?} do not match the configured model {expected:?}")));
    }
    let mut it = tensors.into_iter().map(|(_, t)| t);
    if let Some(enc) = model.encoder.as_mut() {
        let ToyEncoderParams { projection, bias, .. } = enc;
        *projection = it.next().unwrap();
        *bias = it.next().unwrap();
    }
    for slot in model.transformer.params_mut() {
        *slot = it.next().unwrap();
    }
    model.head_weight = it.next().unwrap();
    model.head_bias = it.next().unwrap();
    model.validate()?;
    Ok(model)
}

pub fn save(model: &EstimatorModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, save_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<EstimatorModel> {
    let path = path.as_ref();
    load_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

//! Python bindings. Results that are structured on the Rust side come back
//! as plain dicts (via their JSON form); signals are lists of floats.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use refess_core::dataset::{build_corpus, BuildConfig};
use refess_core::estimator::{self, EstimatorConfig, EstimatorModel, FeatureMode, MetricMode, TripletInput};
use refess_core::features::{self, FeatureSequence};
use refess_core::manifest::{read_manifest, Split};
use refess_core::signal::{self, AudioSignal};
use refess_core::{eval, text, wav, Error};

create_exception!(refess, RefessError, PyException);
create_exception!(refess, NumericalError, RefessError);

fn err(e: Error) -> PyErr {
    match e {
        Error::Numerical(_) => NumericalError::new_err(e.to_string()),
        Error::InvalidArgument(_) | Error::LengthMismatch { .. } | Error::Shape { .. } | Error::InvalidSignal(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => RefessError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(value).map_err(|e| RefessError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn audio(samples: Vec<f64>, sample_rate: u32) -> PyResult<AudioSignal> {
    AudioSignal::new(samples, sample_rate).map_err(err)
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

/// SI-SNR in dB of `estimate` against `reference`.
#[pyfunction]
fn si_snr(reference: Vec<f64>, estimate: Vec<f64>) -> PyResult<f64> {
    signal::si_snr_samples(&reference, &estimate).map_err(err)
}

/// Permutation-resolved SI-SNR for a two-speaker separation.
#[pyfunction]
#[pyo3(signature = (ref1, ref2, est1, est2, sample_rate = 16000))]
fn si_snr_pit<'py>(
    py: Python<'py>,
    ref1: Vec<f64>,
    ref2: Vec<f64>,
    est1: Vec<f64>,
    est2: Vec<f64>,
    sample_rate: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let [r1, r2, e1, e2] = [ref1, ref2, est1, est2].map(|x| audio(x, sample_rate));
    let r = signal::si_snr_pit([&r1?, &r2?], [&e1?, &e2?]).map_err(err)?;
    to_py(py, &r)
}

/// Word error rate after normalization of both transcripts.
#[pyfunction]
fn wer<'py>(py: Python<'py>, reference: &str, hypothesis: &str) -> PyResult<Bound<'py, PyAny>> {
    let r = text::wer(&text::normalize_text(reference), &text::normalize_text(hypothesis)).map_err(err)?;
    to_py(py, &r)
}

#[pyfunction]
fn normalize_text(raw: &str) -> Vec<String> {
    text::normalize_text(raw)
}

#[pyfunction]
fn read_wav(path: PathBuf) -> PyResult<(Vec<f64>, u32)> {
    let s = wav::read_wav(path).map_err(err)?;
    let sr = s.sample_rate();
    Ok((s.into_samples(), sr))
}

#[pyfunction]
fn write_wav(path: PathBuf, samples: Vec<f64>, sample_rate: u32) -> PyResult<()> {
    wav::write_wav(path, &audio(samples, sample_rate)?).map_err(err)
}

/// Reads an RFQF file as `(rows, frame_rate)`, rows being T lists of D floats.
#[pyfunction]
fn read_features(path: PathBuf) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let f = features::read_features(path).map_err(err)?;
    let rows = f.tensor().data().chunks(f.dim()).map(<[f64]>::to_vec).collect();
    Ok((rows, f.frame_rate()))
}

#[pyfunction]
fn write_features(path: PathBuf, rows: Vec<Vec<f64>>, frame_rate: f64) -> PyResult<()> {
    let t = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("feature rows have unequal lengths"));
    }
    let seq = FeatureSequence::from_rows(t, d, rows.concat(), frame_rate).map_err(err)?;
    features::write_features(path, &seq).map_err(err)
}

/// Parses and validates a JSONL manifest; returns its entries.
#[pyfunction]
fn read_manifest_entries<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let m = read_manifest(path).map_err(err)?;
    to_py(py, &m.entries)
}

/// Generates a labelled corpus under `out` and returns its statistics.
#[pyfunction]
#[pyo3(signature = (out, n_train = 2000, n_valid = 300, n_test = 400, seed = 0, duration_s = None, bins = 10, balance_cap = None))]
#[allow(clippy::too_many_arguments)]
fn build_dataset<'py>(
    py: Python<'py>,
    out: PathBuf,
    n_train: usize,
    n_valid: usize,
    n_test: usize,
    seed: u64,
    duration_s: Option<f64>,
    bins: usize,
    balance_cap: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut config = BuildConfig { n_train, n_valid, n_test, seed, bins, balance_cap, ..Default::default() };
    if let Some(d) = duration_s {
        config.duration_s = d;
    }
    let built = build_corpus(&config, &out).map_err(err)?;
    to_py(py, &built.stats)
}

/// A trained estimator.
#[pyclass(name = "Estimator", module = "refess")]
struct PyEstimator {
    model: EstimatorModel,
}

#[pymethods]
impl PyEstimator {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { model: estimator::load(path).map_err(err)? })
    }

    /// Trains on the train/valid splits of a manifest. Returns the model
    /// and its training log.
    #[staticmethod]
    #[pyo3(signature = (manifest, mode, steps, features = "toy", freeze_encoder = false, seed = 0, dim = None, batch_size = None, warmup = None, lr_scratch = None, lr_encoder = None))]
    #[allow(clippy::too_many_arguments)]
    fn train<'py>(
        py: Python<'py>,
        manifest: PathBuf,
        mode: &str,
        steps: u64,
        features: &str,
        freeze_encoder: bool,
        seed: u64,
        dim: Option<usize>,
        batch_size: Option<usize>,
        warmup: Option<u64>,
        lr_scratch: Option<f64>,
        lr_encoder: Option<f64>,
    ) -> PyResult<(Self, Bound<'py, PyAny>)> {
        let d = EstimatorConfig::default();
        let feature_mode = match features {
            "toy" => FeatureMode::Toy,
            "files" => FeatureMode::Files,
            other => return Err(PyValueError::new_err(format!("unknown feature mode {other:?}"))),
        };
        let config = EstimatorConfig {
            metric_mode: parse::<MetricMode>(mode)?,
            feature_mode,
            feature_dim: dim.unwrap_or(d.feature_dim),
            batch_size: batch_size.unwrap_or(d.batch_size),
            warmup_steps: warmup.unwrap_or((steps / 10).max(1)),
            total_steps: steps,
            peak_lr_scratch: lr_scratch.unwrap_or(d.peak_lr_scratch),
            peak_lr_encoder: lr_encoder.unwrap_or(d.peak_lr_encoder),
            encoder_trainable: !freeze_encoder,
            seed,
            ..d
        };
        let m = read_manifest(manifest).map_err(err)?;
        let (model, log) = estimator::fit_manifest(&config, &m).map_err(err)?;
        Ok((Self { model }, to_py(py, &log)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        estimator::save(&self.model, path).map_err(err)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.model.mode().as_str()
    }

    /// Reference-free estimate from three WAV files.
    fn estimate_wav<'py>(&self, py: Python<'py>, mix: PathBuf, est1: PathBuf, est2: PathBuf) -> PyResult<Bound<'py, PyAny>> {
        let [m, a, b] = [mix, est1, est2].map(|p| wav::read_wav(p).map_err(err));
        let labels = self.model.predict_audio(&m?, &a?, &b?).map_err(err)?;
        to_py(py, &labels)
    }

    /// Reference-free estimate from three RFQF feature files.
    fn estimate_features<'py>(&self, py: Python<'py>, mix: PathBuf, est1: PathBuf, est2: PathBuf) -> PyResult<Bound<'py, PyAny>> {
        let [m, a, b] = [mix, est1, est2].map(|p| features::read_features(p).map_err(err));
        let input = TripletInput::from_features(m?.into_tensor(), a?.into_tensor(), b?.into_tensor()).map_err(err)?;
        let labels = self.model.predict(&input).map_err(err)?;
        to_py(py, &labels)
    }

    /// MAE / PCC report on one split of a manifest.
    #[pyo3(signature = (manifest, split = "test"))]
    fn evaluate<'py>(&self, py: Python<'py>, manifest: PathBuf, split: &str) -> PyResult<Bound<'py, PyAny>> {
        let split: Split = parse(split)?;
        let dataset_id = manifest.parent().and_then(|p| p.file_name()).map_or(String::new(), |s| s.to_string_lossy().into_owned());
        let m = read_manifest(&manifest).map_err(err)?;
        let items = estimator::load_items(&m, split, &self.model.config).map_err(err)?;
        let report = eval::evaluate(&self.model, &items, "python", &dataset_id).map_err(err)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        let c = &self.model.config;
        format!("Estimator(mode={}, dim={}, heads={})", c.metric_mode.as_str(), c.feature_dim, c.heads)
    }
}

#[pymodule]
pub fn refess(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RefessError", m.py().get_type::<RefessError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_function(wrap_pyfunction!(si_snr, m)?)?;
    m.add_function(wrap_pyfunction!(si_snr_pit, m)?)?;
    m.add_function(wrap_pyfunction!(wer, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_text, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(read_features, m)?)?;
    m.add_function(wrap_pyfunction!(write_features, m)?)?;
    m.add_function(wrap_pyfunction!(read_manifest_entries, m)?)?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    m.add_class::<PyEstimator>()?;
    Ok(())
}

//! Mono 16-bit PCM WAV persistence.

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::AudioSignal;

const FULL_SCALE: f64 = 32767.0;

/// Value a sample takes after a write/read cycle.
pub fn quantize_sample(x: f64) -> f64 {
    to_i16(x) as f64 / FULL_SCALE
}

fn to_i16(x: f64) -> i16 {
    (x * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// Round-trips every sample through 16-bit quantization in memory.
pub fn quantize(signal: &AudioSignal) -> AudioSignal {
    let q = signal.samples().iter().map(|&x| quantize_sample(x)).collect();
    AudioSignal::new(q, signal.sample_rate()).expect("quantized samples are finite")
}

pub fn write_wav(path: impl AsRef<Path>, signal: &AudioSignal) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &x in signal.samples() {
        writer.write_sample(to_i16(x)).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let wrap = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut reader = hound::WavReader::open(path).map_err(wrap)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::InvalidSignal(format!(
            "{}: expected mono 16-bit PCM, found {} channel(s), {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wrap)?;
    AudioSignal::new(samples, spec.sample_rate)
}

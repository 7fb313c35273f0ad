//! Audio containers, synthetic sources, mixing and the SI-SNR oracle.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Lower and upper clamp applied to every SI-SNR value, in dB.
pub const SI_SNR_FLOOR_DB: f64 = -50.0;
pub const SI_SNR_CEIL_DB: f64 = 50.0;
const SI_SNR_EPS: f64 = 1e-12;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Peak amplitude of every synthesized source.
pub const SOURCE_PEAK: f64 = 0.5;

/// Mono audio in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidSignal("no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidSignal("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidSignal(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Mean square amplitude.
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    fn check_compatible(&self, other: &AudioSignal) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch { left: self.len(), right: other.len() });
        }
        if self.sample_rate != other.sample_rate {
            return Err(Error::InvalidSignal(format!(
                "sample rate mismatch: {} vs {}",
                self.sample_rate, other.sample_rate
            )));
        }
        Ok(())
    }
}

/// Mixture plus the two separated tracks, optionally with the clean
/// references and their transcripts.
#[derive(Debug, Clone)]
pub struct SeparationTriplet {
    pub id: String,
    pub mixture: AudioSignal,
    pub estimates: [AudioSignal; 2],
    pub references: Option<[AudioSignal; 2]>,
    pub ref_transcripts: Option<[Vec<String>; 2]>,
}

impl SeparationTriplet {
    pub fn new(
        id: impl Into<String>,
        mixture: AudioSignal,
        estimates: [AudioSignal; 2],
        references: Option<[AudioSignal; 2]>,
        ref_transcripts: Option<[Vec<String>; 2]>,
    ) -> Result<Self> {
        for est in &estimates {
            mixture.check_compatible(est)?;
        }
        if let Some(refs) = &references {
            for r in refs {
                mixture.check_compatible(r)?;
            }
        }
        Ok(Self { id: id.into(), mixture, estimates, references, ref_transcripts })
    }
}

/// Ordering of estimates against references chosen by [`si_snr_pit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Permutation {
    /// est1 ↔ ref1, est2 ↔ ref2
    Identity,
    /// est1 ↔ ref2, est2 ↔ ref1
    Swapped,
}

impl Permutation {
    /// Index of the estimate paired with reference `k`.
    pub fn estimate_for(self, k: usize) -> usize {
        match self {
            Permutation::Identity => k,
            Permutation::Swapped => 1 - k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiSnrResult {
    /// SI-SNR of each reference against its paired estimate, dB.
    pub per_source: [f64; 2],
    pub average: f64,
    pub permutation: Permutation,
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn zero_mean(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

/// Scale-invariant SNR of `estimate` against `reference` on raw sample
/// slices, clamped to [`SI_SNR_FLOOR_DB`, `SI_SNR_CEIL_DB`].
pub fn si_snr_samples(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch { left: reference.len(), right: estimate.len() });
    }
    if reference.len() < 2 {
        return Err(Error::InvalidSignal("SI-SNR needs at least two samples".into()));
    }
    let s = zero_mean(reference);
    let e = zero_mean(estimate);
    let ss = dot(&s, &s);
    if ss <= 0.0 {
        return Err(Error::ConstantReference);
    }
    let alpha = dot(&e, &s) / ss;
    let target = alpha * alpha * ss;
    let noise: f64 = e.iter().zip(&s).map(|(ev, sv)| (ev - alpha * sv).powi(2)).sum();
    // The guard sits only inside the log so the ratio itself stays exactly
    // scale invariant; a zero residual is a perfect copy.
    let ratio = if noise > 0.0 {
        target / noise
    } else if target > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let db = 10.0 * (ratio + SI_SNR_EPS).log10();
    Ok(db.clamp(SI_SNR_FLOOR_DB, SI_SNR_CEIL_DB))
}

pub fn si_snr(reference: &AudioSignal, estimate: &AudioSignal) -> Result<f64> {
    si_snr_samples(reference.samples(), estimate.samples())
}

/// Utterance-level permutation-invariant SI-SNR for two sources.
///
/// Both pairings are scored; the one with the larger mean wins, ties go to
/// the identity ordering.
pub fn si_snr_pit(references: [&AudioSignal; 2], estimates: [&AudioSignal; 2]) -> Result<SiSnrResult> {
    let identity = [si_snr(references[0], estimates[0])?, si_snr(references[1], estimates[1])?];
    let swapped = [si_snr(references[0], estimates[1])?, si_snr(references[1], estimates[0])?];
    let mean = |v: [f64; 2]| (v[0] + v[1]) / 2.0;
    let (per_source, permutation) = if mean(swapped) > mean(identity) {
        (swapped, Permutation::Swapped)
    } else {
        (identity, Permutation::Identity)
    };
    Ok(SiSnrResult { per_source, average: mean(per_source), permutation })
}

fn sample_count(duration_s: f64, sample_rate: u32) -> Result<usize> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration_s}")));
    }
    if sample_rate == 0 {
        return Err(Error::InvalidArgument("sample rate must be positive".into()));
    }
    let n = (duration_s * sample_rate as f64).round() as usize;
    Ok(n.max(1))
}

fn peak_normalize(mut x: Vec<f64>, peak: f64) -> Vec<f64> {
    let p = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if p > 0.0 {
        let g = peak / p;
        x.iter_mut().for_each(|v| *v *= g);
    }
    x
}

/// Deterministic pseudo-speech: 3 to 6 amplitude-modulated partials at
/// seeded frequencies plus low-passed noise, peak-normalized to 0.5.
pub fn synth_source(seed: u64, duration_s: f64, sample_rate: u32) -> Result<AudioSignal> {
    let n = sample_count(duration_s, sample_rate)?;
    let mut rng = rng::seeded(rng::derive(seed, 0x5157));
    let sr = sample_rate as f64;
    let nyq_cap = (0.45 * sr).min(3_500.0);
    let n_partials = rng.random_range(3..=6);
    let tau = std::f64::consts::TAU;

    struct Partial {
        freq: f64,
        phase: f64,
        amp: f64,
        am_rate: f64,
        am_phase: f64,
        am_depth: f64,
    }
    let partials: Vec<Partial> = (0..n_partials)
        .map(|_| Partial {
            freq: rng.random_range(90.0..nyq_cap),
            phase: rng.random_range(0.0..tau),
            amp: rng.random_range(0.3..1.0),
            am_rate: rng.random_range(1.5..7.0),
            am_phase: rng.random_range(0.0..tau),
            am_depth: rng.random_range(0.3..0.95),
        })
        .collect();

    let noise_level = rng.random_range(0.05..0.15);
    let mut lp = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let mut v = 0.0;
        for p in &partials {
            let env = 1.0 - p.am_depth * (0.5 - 0.5 * (tau * p.am_rate * t + p.am_phase).cos());
            v += p.amp * env * (tau * p.freq * t + p.phase).sin();
        }
        let w: f64 = StandardNormal.sample(&mut rng);
        lp = 0.9 * lp + 0.1 * w;
        out.push(v + noise_level * lp * 3.0);
    }
    AudioSignal::new(peak_normalize(out, SOURCE_PEAK), sample_rate)
}

/// Seeded background noise: white Gaussian through a gentle one-pole
/// low-pass, peak-normalized to 0.5.
pub fn synth_noise(seed: u64, duration_s: f64, sample_rate: u32) -> Result<AudioSignal> {
    let n = sample_count(duration_s, sample_rate)?;
    let mut rng = rng::seeded(rng::derive(seed, 0x401_5E));
    let mut lp = 0.0;
    let out: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = StandardNormal.sample(&mut rng);
            lp = 0.6 * lp + 0.4 * w;
            lp
        })
        .collect();
    AudioSignal::new(peak_normalize(out, SOURCE_PEAK), sample_rate)
}

/// Gain that puts `noise` at `snr_db` below the power of `signal_sum`.
/// Infinite `snr_db` disables the noise (gain 0).
pub fn noise_gain(signal_power: f64, noise: &AudioSignal, snr_db: f64) -> Result<f64> {
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("snr_db must be finite or +inf, got {snr_db}")));
    }
    let pn = noise.power();
    if pn <= 0.0 {
        return Err(Error::InvalidArgument("noise has zero power but a finite SNR was requested".into()));
    }
    if signal_power <= 0.0 {
        return Err(Error::InvalidArgument("sources have zero power; SNR is undefined".into()));
    }
    Ok((signal_power / (pn * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// `y = s1 + s2 + g·n` with `g` chosen so that the summed sources sit
/// `snr_db` above the scaled noise. Pass `f64::INFINITY` to disable noise.
pub fn mix(sources: [&AudioSignal; 2], noise: &AudioSignal, snr_db: f64) -> Result<AudioSignal> {
    sources[0].check_compatible(sources[1])?;
    sources[0].check_compatible(noise)?;
    let sum: Vec<f64> = sources[0].samples.iter().zip(&sources[1].samples).map(|(a, b)| a + b).collect();
    let g = noise_gain(power(&sum), noise, snr_db)?;
    let y = if g == 0.0 {
        sum
    } else {
        sum.iter().zip(&noise.samples).map(|(s, n)| s + g * n).collect()
    };
    AudioSignal::new(y, sources[0].sample_rate)
}

/// Interference level below the scaled target, in dB, at the two ends of
/// the degradation range.
const LEAKAGE_DB_AT_ZERO: f64 = 25.0;
const LEAKAGE_DB_AT_ONE: f64 = 3.0;
/// Below this delta the leakage gain ramps linearly to zero.
const LEAKAGE_RAMP: f64 = 0.01;
const NOISE_GAIN_AT_ONE: f64 = 0.3;
/// Half-width of the seeded per-call jitter on both gains, in dB.
const GAIN_JITTER_DB: f64 = 1.5;

/// Nominal interference gain (applied after RMS-matching the interference
/// to the reference). Zero at `delta = 0`, increasing in `delta`.
pub fn leakage_gain(delta: f64) -> f64 {
    if delta <= 0.0 {
        return 0.0;
    }
    let level_db = LEAKAGE_DB_AT_ZERO + (LEAKAGE_DB_AT_ONE - LEAKAGE_DB_AT_ZERO) * delta;
    (1.0 - 0.5 * delta) * 10f64.powf(-level_db / 20.0) * (delta / LEAKAGE_RAMP).min(1.0)
}

/// Nominal residual-noise gain (applied after RMS-matching the noise to
/// the reference). Zero at `delta = 0`, increasing in `delta`.
pub fn residual_noise_gain(delta: f64) -> f64 {
    NOISE_GAIN_AT_ONE * delta.max(0.0)
}

fn rms_ratio(target: &AudioSignal, other: &AudioSignal) -> f64 {
    let po = other.power();
    if po > 0.0 {
        (target.power() / po).sqrt()
    } else {
        0.0
    }
}

/// Simulated separator output for `reference`:
/// `(1 - delta/2)·s + a(delta)·interference + b(delta)·noise`.
///
/// Interference and noise are RMS-matched to the reference before their
/// gains are applied; `seed` draws a small dB jitter on both gains.
/// `delta = 0` returns the reference unchanged.
pub fn degrade(
    reference: &AudioSignal,
    interference: &AudioSignal,
    noise: &AudioSignal,
    delta: f64,
    seed: u64,
) -> Result<AudioSignal> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("delta must lie in [0, 1], got {delta}")));
    }
    reference.check_compatible(interference)?;
    reference.check_compatible(noise)?;
    if delta == 0.0 {
        return Ok(reference.clone());
    }
    let mut rng = rng::seeded(rng::derive(seed, 0xDE6));
    let jitter_a = 10f64.powf(rng.random_range(-GAIN_JITTER_DB..=GAIN_JITTER_DB) / 20.0);
    let jitter_b = 10f64.powf(rng.random_range(-GAIN_JITTER_DB..=GAIN_JITTER_DB) / 20.0);
    let a = leakage_gain(delta) * jitter_a * rms_ratio(reference, interference);
    let b = residual_noise_gain(delta) * jitter_b * rms_ratio(reference, noise);
    let keep = 1.0 - 0.5 * delta;
    let out = reference
        .samples
        .iter()
        .zip(&interference.samples)
        .zip(&noise.samples)
        .map(|((s, i), n)| keep * s + a * i + b * n)
        .collect();
    AudioSignal::new(out, reference.sample_rate)
}

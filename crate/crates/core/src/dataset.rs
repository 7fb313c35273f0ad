//! Synthetic labelled corpora: mixtures, simulated separator outputs at
//! three degradation regimes, coupled SI-SNR / WER labels, WER-bin
//! balancing and corpus statistics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{
    write_manifest, AudioPaths, Manifest, ManifestEntry, MetricLabels, MetricTriple, Regime, Split, TranscriptPaths,
};
use crate::rng;
use crate::signal::{degrade, mix, si_snr_pit, synth_noise, synth_source, AudioSignal, DEFAULT_SAMPLE_RATE};
use crate::text::{corrupt_transcript, random_transcript, wer};
use crate::wav::{quantize, write_wav};

/// Maps a degradation level to a transcript corruption rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerCoupling {
    pub slope: f64,
    /// Half-width of the uniform jitter added to the rate.
    pub jitter: f64,
}

impl Default for WerCoupling {
    fn default() -> Self {
        Self { slope: 0.9, jitter: 0.05 }
    }
}

impl WerCoupling {
    /// `slope·delta + u`, clipped to [0, 1]; exactly 0 when `delta` is 0.
    pub fn rate(&self, delta: f64, u: f64) -> f64 {
        if delta == 0.0 {
            return 0.0;
        }
        (self.slope * delta + self.jitter * (2.0 * u - 1.0)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// Clip length; the default gives 47 frames at 400/320 framing.
    pub duration_s: f64,
    pub sample_rate: u32,
    /// Delta ranges for the early, mid and late regimes.
    pub regimes: [[f64; 2]; 3],
    pub wer_coupling: WerCoupling,
    /// Mixture SNR is drawn uniformly from this range, in dB.
    pub mixture_snr_db: [f64; 2],
    /// Reference transcript length range, in words.
    pub words: [usize; 2],
    pub bins: usize,
    /// When set, each split is balanced to at most this many entries per
    /// WER bin.
    pub balance_cap: Option<usize>,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_valid: 300,
            n_test: 400,
            duration_s: 0.96,
            sample_rate: DEFAULT_SAMPLE_RATE,
            regimes: [[0.6, 1.0], [0.3, 0.7], [0.0, 0.4]],
            wer_coupling: WerCoupling::default(),
            mixture_snr_db: [10.0, 20.0],
            words: [11, 21],
            bins: 10,
            balance_cap: None,
            seed: 0,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_valid == 0 || self.n_test == 0 {
            return Err(Error::InvalidArgument("every split needs at least one entry".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) || self.sample_rate == 0 {
            return Err(Error::InvalidArgument("duration and sample rate must be positive".into()));
        }
        for (r, [lo, hi]) in Regime::ALL.iter().zip(self.regimes) {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::InvalidArgument(format!("{r:?} regime range [{lo}, {hi}] is not inside [0, 1]")));
            }
        }
        if self.bins == 0 {
            return Err(Error::InvalidArgument("bin count must be at least 1".into()));
        }
        if self.balance_cap == Some(0) {
            return Err(Error::InvalidArgument("balance cap must be at least 1".into()));
        }
        let [lo, hi] = self.words;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidArgument(format!("word range [{lo}, {hi}] is invalid")));
        }
        if !(self.mixture_snr_db[0] <= self.mixture_snr_db[1]) {
            return Err(Error::InvalidArgument("mixture SNR range is inverted".into()));
        }
        if !(self.wer_coupling.slope >= 0.0 && self.wer_coupling.jitter >= 0.0) {
            return Err(Error::InvalidArgument("WER coupling must be non-negative".into()));
        }
        Ok(())
    }

    fn split_of(&self, index: usize) -> Split {
        if index < self.n_train {
            Split::Train
        } else if index < self.n_train + self.n_valid {
            Split::Valid
        } else {
            Split::Test
        }
    }
}

/// In-memory result of generating one entry.
#[derive(Debug, Clone)]
pub struct GeneratedTriplet {
    pub regime: Regime,
    pub deltas: [f64; 2],
    pub mixture: AudioSignal,
    pub estimates: [AudioSignal; 2],
    pub references: [AudioSignal; 2],
    pub ref_text: [Vec<String>; 2],
    pub hyp_text: [Vec<String>; 2],
    pub labels: MetricLabels,
    pub wer_edits: [usize; 2],
}

/// Generates entry `index` of the corpus; depends only on the global seed
/// and the index.
pub fn generate_triplet(config: &BuildConfig, index: usize) -> Result<GeneratedTriplet> {
    let seed = rng::derive(config.seed, index as u64);
    let mut r = rng::seeded(seed);
    let (dur, sr) = (config.duration_s, config.sample_rate);

    let s1 = synth_source(rng::derive(seed, 1), dur, sr)?;
    let s2 = synth_source(rng::derive(seed, 2), dur, sr)?;
    let noise = synth_noise(rng::derive(seed, 3), dur, sr)?;
    let snr = r.random_range(config.mixture_snr_db[0]..=config.mixture_snr_db[1]);
    let mixture = mix([&s1, &s2], &noise, snr)?;

    let regime = Regime::ALL[r.random_range(0..3)];
    let [lo, hi] = config.regimes[regime_index(regime)];
    let deltas = [r.random_range(lo..=hi), r.random_range(lo..=hi)];
    let e1 = degrade(&s1, &s2, &noise, deltas[0], rng::derive(seed, 4))?;
    let e2 = degrade(&s2, &s1, &noise, deltas[1], rng::derive(seed, 5))?;

    // One gain for all five signals keeps them inside 16-bit range; labels
    // are computed after quantization so the stored files reproduce them.
    let peak = [&mixture, &e1, &e2, &s1, &s2].iter().map(|s| s.peak()).fold(0.0, f64::max);
    let g = if peak > 0.9 { 0.9 / peak } else { 1.0 };
    let q = |s: &AudioSignal| quantize(&s.scaled(g));
    let (mixture, e1, e2, s1, s2) = (q(&mixture), q(&e1), q(&e2), q(&s1), q(&s2));

    let pit = si_snr_pit([&s1, &s2], [&e1, &e2])?;
    // per-estimate values: estimate j is paired with reference k
    let mut sisnr = [0.0; 2];
    for k in 0..2 {
        sisnr[pit.permutation.estimate_for(k)] = pit.per_source[k];
    }

    let [wlo, whi] = config.words;
    let ref_text = [random_transcript(rng::derive(seed, 10), wlo, whi), random_transcript(rng::derive(seed, 11), wlo, whi)];
    let mut hyp_text: [Vec<String>; 2] = Default::default();
    let mut wers = [0.0; 2];
    let mut wer_edits = [0; 2];
    for k in 0..2 {
        let rate = config.wer_coupling.rate(deltas[k], r.random());
        hyp_text[k] = corrupt_transcript(&ref_text[k], rate, rng::derive(seed, 20 + k as u64))?;
        let b = wer(&ref_text[k], &hyp_text[k])?;
        wers[k] = b.wer;
        wer_edits[k] = b.edits();
    }
    let labels = MetricLabels {
        wer: Some(MetricTriple::from_sources(wers[0], wers[1])),
        sisnr: Some(MetricTriple::from_sources(sisnr[0], sisnr[1])),
    };
    Ok(GeneratedTriplet {
        regime,
        deltas,
        mixture,
        estimates: [e1, e2],
        references: [s1, s2],
        ref_text,
        hyp_text,
        labels,
        wer_edits,
    })
}

fn regime_index(r: Regime) -> usize {
    match r {
        Regime::Early => 0,
        Regime::Mid => 1,
        Regime::Late => 2,
    }
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub manifest: Manifest,
    pub stats: CorpusStats,
    pub manifest_path: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const STATS_FILE: &str = "stats.json";

/// Writes audio, transcripts, `manifest.jsonl` and `stats.json` under `out`.
pub fn build_corpus(config: &BuildConfig, out: impl AsRef<Path>) -> Result<BuildOutput> {
    config.validate()?;
    let out = out.as_ref();
    for sub in ["audio", "text"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let total = config.n_train + config.n_valid + config.n_test;
    let mut entries = Vec::with_capacity(total);
    for index in 0..total {
        let t = generate_triplet(config, index)?;
        let split = config.split_of(index);
        let id = format!("{}_{index:05}", split.as_str());
        let wav = |name: &str, s: &AudioSignal| -> Result<PathBuf> {
            let rel = PathBuf::from("audio").join(format!("{id}_{name}.wav"));
            write_wav(out.join(&rel), s)?;
            Ok(rel)
        };
        let txt = |name: &str, words: &[String]| -> Result<PathBuf> {
            let rel = PathBuf::from("text").join(format!("{id}_{name}.txt"));
            let p = out.join(&rel);
            std::fs::write(&p, format!("{}\n", words.join(" "))).map_err(|e| Error::io(&p, e))?;
            Ok(rel)
        };
        let audio = AudioPaths {
            mixture: wav("mix", &t.mixture)?,
            est1: wav("est1", &t.estimates[0])?,
            est2: wav("est2", &t.estimates[1])?,
            ref1: Some(wav("ref1", &t.references[0])?),
            ref2: Some(wav("ref2", &t.references[1])?),
        };
        let transcripts = TranscriptPaths {
            ref1: Some(txt("ref1", &t.ref_text[0])?),
            ref2: Some(txt("ref2", &t.ref_text[1])?),
            hyp1: Some(txt("hyp1", &t.hyp_text[0])?),
            hyp2: Some(txt("hyp2", &t.hyp_text[1])?),
        };
        let mut extra = serde_json::Map::new();
        extra.insert("deltas".into(), serde_json::json!(t.deltas));
        entries.push(ManifestEntry {
            id,
            split,
            regime: Some(t.regime),
            audio,
            features: None,
            transcripts: Some(transcripts),
            labels: Some(t.labels),
            duration_s: Some(t.mixture.duration_s()),
            ref_words: Some([t.ref_text[0].len(), t.ref_text[1].len()]),
            wer_edits: Some(t.wer_edits),
            extra,
        });
    }
    if let Some(cap) = config.balance_cap {
        let mut balanced = Vec::with_capacity(entries.len());
        for split in Split::ALL {
            let part: Vec<ManifestEntry> = entries.iter().filter(|e| e.split == split).cloned().collect();
            balanced.extend(balance_bins(&part, config.bins, cap, rng::derive(config.seed, 0xBA1 + split as u64))?);
        }
        entries = balanced;
    }
    let manifest_path = out.join(MANIFEST_FILE);
    write_manifest(&manifest_path, &entries)?;
    let stats = stats(&entries, config.bins);
    let sp = out.join(STATS_FILE);
    std::fs::write(&sp, serde_json::to_string_pretty(&stats)?).map_err(|e| Error::io(&sp, e))?;
    Ok(BuildOutput { manifest: Manifest::new(out, entries), stats, manifest_path })
}

fn wer_avg(e: &ManifestEntry) -> Result<f64> {
    e.labels
        .and_then(|l| l.wer)
        .map(|w| w.avg)
        .ok_or_else(|| Error::Validation(format!("entry {} has no WER labels to bin", e.id)))
}

/// Equal-width bin index of `v` over `[lo, hi]`; the top edge joins the
/// last bin.
fn bin_of(v: f64, lo: f64, hi: f64, n_bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * n_bins as f64) as usize).min(n_bins - 1)
}

/// Subsamples every equal-width `wer_avg` bin (over the observed range) to
/// at most `cap` entries. Kept entries stay in their original order.
pub fn balance_bins(entries: &[ManifestEntry], n_bins: usize, cap: usize, seed: u64) -> Result<Vec<ManifestEntry>> {
    if entries.is_empty() {
        return Err(Error::InvalidArgument("cannot balance an empty manifest".into()));
    }
    if n_bins == 0 || cap == 0 {
        return Err(Error::InvalidArgument("bin count and cap must be at least 1".into()));
    }
    let values = entries.iter().map(wer_avg).collect::<Result<Vec<_>>>()?;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (i, &v) in values.iter().enumerate() {
        bins[bin_of(v, lo, hi, n_bins)].push(i);
    }
    let mut r = rng::seeded(seed);
    let mut keep = vec![false; entries.len()];
    for bin in &mut bins {
        bin.shuffle(&mut r);
        for &i in bin.iter().take(cap) {
            keep[i] = true;
        }
    }
    Ok(entries.iter().zip(keep).filter(|(_, k)| *k).map(|(e, _)| e.clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    /// Upper edge; the last bin also holds every value above it.
    pub hi: f64,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: Split,
    pub total_duration_s: f64,
    pub avg_duration_s: f64,
    pub segments: usize,
    /// Mean reference word count per estimated source.
    pub avg_words: f64,
    /// Mean of per-entry average WER.
    pub wer_mean: f64,
    /// Population standard deviation of per-entry average WER.
    pub wer_std: f64,
    /// Total edits over total reference words, both sources.
    pub wer_pooled: Option<f64>,
    pub wer_histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub splits: Vec<SplitStats>,
}

/// Per-split corpus statistics. The WER histogram uses `n_bins` bins of
/// width `1/n_bins` over [0, 1]; WER above 1 falls in the last bin.
pub fn stats(entries: &[ManifestEntry], n_bins: usize) -> CorpusStats {
    let n_bins = n_bins.max(1);
    let mut splits = Vec::new();
    for split in Split::ALL {
        let part: Vec<&ManifestEntry> = entries.iter().filter(|e| e.split == split).collect();
        if part.is_empty() {
            continue;
        }
        let total: f64 = part.iter().filter_map(|e| e.duration_s).sum();
        let words: Vec<usize> = part.iter().filter_map(|e| e.ref_words).flatten().collect();
        let avg_words = if words.is_empty() { 0.0 } else { words.iter().sum::<usize>() as f64 / words.len() as f64 };
        let wers: Vec<f64> = part.iter().filter_map(|e| e.labels.and_then(|l| l.wer)).map(|w| w.avg).collect();
        let (mean, std) = mean_std(&wers);
        let pooled = {
            let (mut edits, mut n) = (0usize, 0usize);
            for e in &part {
                if let (Some(ed), Some(w)) = (e.wer_edits, e.ref_words) {
                    edits += ed[0] + ed[1];
                    n += w[0] + w[1];
                }
            }
            (n > 0).then(|| edits as f64 / n as f64)
        };
        let mut counts = vec![0usize; n_bins];
        for &w in &wers {
            counts[bin_of(w, 0.0, 1.0, n_bins)] += 1;
        }
        let histogram = if wers.is_empty() {
            Vec::new()
        } else {
            counts
                .iter()
                .enumerate()
                .map(|(i, &c)| HistogramBin {
                    lo: i as f64 / n_bins as f64,
                    hi: (i + 1) as f64 / n_bins as f64,
                    count: c,
                    percent: 100.0 * c as f64 / wers.len() as f64,
                })
                .collect()
        };
        splits.push(SplitStats {
            split,
            total_duration_s: total,
            avg_duration_s: total / part.len() as f64,
            segments: part.len(),
            avg_words,
            wer_mean: mean,
            wer_std: std,
            wer_pooled: pooled,
            wer_histogram: histogram,
        });
    }
    CorpusStats { splits }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl CorpusStats {
    pub fn split(&self, split: Split) -> Option<&SplitStats> {
        self.splits.iter().find(|s| s.split == split)
    }

    /// Plain-text table with one row per split, then the WER histograms.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:>12} {:>10} {:>6} {:>8} {:>8} {:>8} {:>8}",
            "split", "total dur s", "avg dur s", "#seg", "avg #wrd", "avg wer", "std wer", "pooled"
        );
        for st in &self.splits {
            let _ = writeln!(
                s,
                "{:<6} {:>12.2} {:>10.3} {:>6} {:>8.2} {:>7.2}% {:>7.2}% {:>8}",
                st.split.as_str(),
                st.total_duration_s,
                st.avg_duration_s,
                st.segments,
                st.avg_words,
                100.0 * st.wer_mean,
                100.0 * st.wer_std,
                st.wer_pooled.map_or("-".to_string(), |p| format!("{:.2}%", 100.0 * p)),
            );
        }
        for st in &self.splits {
            let _ = writeln!(s, "\n{} average WER bins", st.split.as_str());
            for b in &st.wer_histogram {
                let _ = writeln!(s, "  [{:.2}, {:.2}{} {:>6.2}%", b.lo, b.hi, if b.hi >= 1.0 { "+]" } else { ")" }, b.percent);
            }
        }
        s
    }
}

//! JSONL corpus manifests.
//!
//! One JSON object per line. Paths are stored relative to the manifest's
//! directory unless absolute. Top-level keys this crate does not know about
//! are kept in [`ManifestEntry::extra`] and written back unchanged.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const AVG_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    /// Every split in this corpus format carries regression targets.
    pub fn requires_labels(self) -> bool {
        true
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| Error::InvalidArgument(format!("unknown split '{s}'")))
    }
}

/// Separator-checkpoint stage a synthetic entry imitates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Early,
    Mid,
    Late,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Early, Regime::Mid, Regime::Late];
}

/// The two metric kinds the estimator regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Wer,
    Sisnr,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Wer => "wer",
            MetricKind::Sisnr => "sisnr",
        }
    }
}

/// Per-source values and their mean for one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub s1: f64,
    pub s2: f64,
    pub avg: f64,
}

impl MetricTriple {
    /// Builds a triple whose `avg` is the mean of the two sources.
    pub fn from_sources(s1: f64, s2: f64) -> Self {
        Self { s1, s2, avg: (s1 + s2) / 2.0 }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.s1, self.s2, self.avg]
    }
}

/// Metric values for a triplet. Either metric may be absent: estimates from
/// a single-metric model only fill the metric it was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "FlatLabels", into = "FlatLabels")]
pub struct MetricLabels {
    pub wer: Option<MetricTriple>,
    pub sisnr: Option<MetricTriple>,
}

impl MetricLabels {
    pub fn get(&self, kind: MetricKind) -> Option<MetricTriple> {
        match kind {
            MetricKind::Wer => self.wer,
            MetricKind::Sisnr => self.sisnr,
        }
    }

    /// Checks the invariants of ground-truth labels.
    pub fn validate(&self) -> Result<()> {
        if self.wer.is_none() && self.sisnr.is_none() {
            return Err(Error::Validation("labels carry neither WER nor SI-SNR values".into()));
        }
        for (name, triple) in [("wer", self.wer), ("sisnr", self.sisnr)] {
            let Some(t) = triple else { continue };
            if !t.as_array().iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("{name} labels must be finite")));
            }
            if name == "wer" && t.as_array().iter().any(|&v| v < 0.0) {
                return Err(Error::Validation("wer labels must be non-negative".into()));
            }
            let mean = (t.s1 + t.s2) / 2.0;
            if (t.avg - mean).abs() > AVG_TOLERANCE {
                return Err(Error::Validation(format!(
                    "{name}_avg = {} but mean({name}_s1, {name}_s2) = {mean}",
                    t.avg
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct FlatLabels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wer_s1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wer_s2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wer_avg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sisnr_s1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sisnr_s2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sisnr_avg: Option<f64>,
}

fn triple(name: &str, s1: Option<f64>, s2: Option<f64>, avg: Option<f64>) -> std::result::Result<Option<MetricTriple>, String> {
    match (s1, s2, avg) {
        (Some(s1), Some(s2), Some(avg)) => Ok(Some(MetricTriple { s1, s2, avg })),
        (None, None, None) => Ok(None),
        _ => Err(format!("{name} labels must have all of {name}_s1, {name}_s2, {name}_avg or none")),
    }
}

impl TryFrom<FlatLabels> for MetricLabels {
    type Error = String;

    fn try_from(f: FlatLabels) -> std::result::Result<Self, String> {
        Ok(Self {
            wer: triple("wer", f.wer_s1, f.wer_s2, f.wer_avg)?,
            sisnr: triple("sisnr", f.sisnr_s1, f.sisnr_s2, f.sisnr_avg)?,
        })
    }
}

impl From<MetricLabels> for FlatLabels {
    fn from(l: MetricLabels) -> Self {
        Self {
            wer_s1: l.wer.map(|t| t.s1),
            wer_s2: l.wer.map(|t| t.s2),
            wer_avg: l.wer.map(|t| t.avg),
            sisnr_s1: l.sisnr.map(|t| t.s1),
            sisnr_s2: l.sisnr.map(|t| t.s2),
            sisnr_avg: l.sisnr.map(|t| t.avg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioPaths {
    pub mixture: PathBuf,
    pub est1: PathBuf,
    pub est2: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref1: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref2: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePaths {
    pub mix: PathBuf,
    pub est1: PathBuf,
    pub est2: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TranscriptPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref1: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref2: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyp1: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyp2: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    pub audio: AudioPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeaturePaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcripts: Option<TranscriptPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<MetricLabels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    /// Reference word counts per source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_words: Option<[usize; 2]>,
    /// Edit counts (S + D + I) per source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wer_edits: Option<[usize; 2]>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl ManifestEntry {
    pub fn validate(&self) -> Result<()> {
        match &self.labels {
            Some(l) => l.validate(),
            None if self.split.requires_labels() => {
                Err(Error::Validation(format!("entry in split '{}' has no labels", self.split)))
            }
            None => Ok(()),
        }
    }

    pub fn labels(&self) -> Result<&MetricLabels> {
        self.labels.as_ref().ok_or_else(|| Error::Validation(format!("entry {} has no labels", self.id)))
    }
}

/// Parsed manifest plus the directory its relative paths hang off.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(base_dir: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        Self { base_dir: base_dir.into(), entries }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        resolve(&self.base_dir, path)
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn with_split(&self, split: Split) -> Manifest {
        Manifest::new(self.base_dir.clone(), self.entries.iter().filter(|e| e.split == split).cloned().collect())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Parses JSONL text. Blank lines are skipped; errors carry 1-based line
/// numbers.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| Error::Manifest { line: i + 1, msg: e.to_string() })?;
        entry.validate().map_err(|e| Error::Manifest { line: i + 1, msg: e.to_string() })?;
        out.push(entry);
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest::new(base, parse_manifest(&text)?))
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> Result<String> {
    let mut s = String::new();
    for e in entries {
        e.validate()?;
        s.push_str(&serde_json::to_string(e)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let text = manifest_to_string(entries)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

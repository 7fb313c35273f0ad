use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use refess_core::dataset::{build_corpus, BuildConfig};
use refess_core::encoder::align_triplet;
use refess_core::estimator::{self, EstimatorConfig, FeatureMode, MetricMode, TripletInput};
use refess_core::eval::evaluate as score_model;
use refess_core::features::read_features;
use refess_core::manifest::{read_manifest, Split};
use refess_core::signal::si_snr_pit;
use refess_core::text::{normalize_text, wer};
use refess_core::wav::read_wav;

use crate::config::{BuildFile, EvaluateFile, TrainFile};
use crate::exit;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(refess_core::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<refess_core::Error> for CliError {
    fn from(e: refess_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Core(e) if e.is_numerical() => exit::NUMERICAL,
            CliError::Core(refess_core::Error::InvalidArgument(_)) => exit::USAGE,
            CliError::Core(_) => exit::DATA,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    flag.or(file).ok_or_else(|| CliError::Usage(format!("--{name} is required (flag or config file)")))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::Core(refess_core::Error::Io { path: path.to_path_buf(), source: e }))
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse().map_err(|_| CliError::Usage(format!("unknown split '{s}'")))
}

fn parse_mode(s: &str) -> Result<MetricMode> {
    s.parse().map_err(|_| CliError::Usage(format!("unknown mode '{s}' (expected wer, sisnr or joint)")))
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_valid: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of WER bins for balancing and the histogram.
    #[arg(long)]
    bins: Option<usize>,
    /// Balance every split to at most this many entries per WER bin.
    #[arg(long, value_name = "CAP")]
    balance: Option<usize>,
    /// Clip length in seconds.
    #[arg(long)]
    duration: Option<f64>,
}

pub fn build_dataset(a: BuildArgs, f: BuildFile) -> Result<()> {
    let d = BuildConfig::default();
    let out = required(a.out, f.out, "out")?;
    let config = BuildConfig {
        n_train: a.n_train.or(f.n_train).unwrap_or(d.n_train),
        n_valid: a.n_valid.or(f.n_valid).unwrap_or(d.n_valid),
        n_test: a.n_test.or(f.n_test).unwrap_or(d.n_test),
        duration_s: a.duration.or(f.duration).unwrap_or(d.duration_s),
        bins: a.bins.or(f.bins).unwrap_or(d.bins),
        balance_cap: a.balance.or(f.balance),
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
        ..d
    };
    info!("build-dataset config: {}", serde_json::to_string(&config)?);
    info!("seed {}", config.seed);
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let built = build_corpus(&config, &out)?;
    info!("wrote {} entries to {}", built.manifest.len(), built.manifest_path.display());
    print!("{}", built.stats.to_table());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// wer, sisnr or joint
    #[arg(long)]
    mode: Option<String>,
    /// toy (encoder on WAV audio) or files (RFQF features in the manifest)
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    freeze_encoder: bool,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training log path (defaults to the checkpoint path plus `.log.json`).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_scratch: Option<f64>,
    #[arg(long)]
    lr_encoder: Option<f64>,
    /// Per-track feature dimension (toy encoder width).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Add sinusoidal positions before the transformer layer.
    #[arg(long)]
    positional: bool,
}

pub fn train(a: TrainArgs, f: TrainFile) -> Result<()> {
    let d = EstimatorConfig::default();
    let manifest_path = required(a.manifest, f.manifest, "manifest")?;
    let out = required(a.out, f.out, "out")?;
    let mode = parse_mode(&required(a.mode, f.mode, "mode")?)?;
    let feature_mode = match a.features.or(f.features).as_deref() {
        None | Some("toy") => FeatureMode::Toy,
        Some("files") => FeatureMode::Files,
        Some(other) => return Err(CliError::Usage(format!("unknown feature source '{other}' (expected toy or files)"))),
    };
    let total_steps = a.steps.or(f.steps).unwrap_or(d.total_steps);
    let warmup_steps = a.warmup.or(f.warmup).unwrap_or(if total_steps > d.warmup_steps { d.warmup_steps } else { (total_steps / 10).max(1) });
    let config = EstimatorConfig {
        metric_mode: mode,
        feature_mode,
        feature_dim: a.dim.or(f.dim).unwrap_or(d.feature_dim),
        heads: a.heads.or(f.heads).unwrap_or(d.heads),
        batch_size: a.batch_size.or(f.batch_size).unwrap_or(d.batch_size),
        warmup_steps,
        total_steps,
        peak_lr_encoder: a.lr_encoder.or(f.lr_encoder).unwrap_or(d.peak_lr_encoder),
        peak_lr_scratch: a.lr_scratch.or(f.lr_scratch).unwrap_or(d.peak_lr_scratch),
        encoder_trainable: !(a.freeze_encoder || f.freeze_encoder.unwrap_or(false)),
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
        positional_encoding: a.positional || f.positional.unwrap_or(false),
        ..d
    };
    info!("train config: {}", serde_json::to_string(&config)?);
    info!("seed {}", config.seed);
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let manifest = read_manifest(&manifest_path)?;
    let (model, log) = estimator::fit_manifest(&config, &manifest)?;
    if !log.encoder_group_active {
        info!("encoder parameter group inactive (frozen or absent); its learning rate is not applied");
    }
    match log.epochs.last().and_then(|e| e.valid_loss) {
        Some(v) => info!("final valid MSE {v:.6}; best {:?} at step {}", log.best_valid_loss, log.best_step),
        None => info!("no validation split; kept final parameters"),
    }
    estimator::save(&model, &out)?;
    let log_path = a.log.or(f.log).unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".log.json");
        p.into()
    });
    write_file(&log_path, &serde_json::to_string(&log)?)?;
    info!("wrote checkpoint {} and log {}", out.display(), log_path.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Report JSON path; the table always goes to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Split to score.
    #[arg(long)]
    split: Option<String>,
    /// Metric the checkpoint is expected to estimate (wer, sisnr or joint).
    #[arg(long)]
    mode: Option<String>,
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn evaluate(a: EvaluateArgs, f: EvaluateFile) -> Result<()> {
    let ckpt = required(a.ckpt, f.ckpt, "ckpt")?;
    let manifest_path = required(a.manifest, f.manifest, "manifest")?;
    let split = parse_split(a.split.or(f.split).as_deref().unwrap_or("test"))?;
    let requested = a.mode.or(f.mode).map(|m| parse_mode(&m)).transpose()?;
    info!("evaluate ckpt {} manifest {} split {}", ckpt.display(), manifest_path.display(), split.as_str());

    let model = estimator::load(&ckpt)?;
    if let Some(m) = requested {
        if m != model.mode() {
            return Err(CliError::Core(refess_core::Error::Validation(format!(
                "checkpoint estimates {} but {} was requested",
                model.mode().as_str(),
                m.as_str()
            ))));
        }
    }
    let manifest = read_manifest(&manifest_path)?;
    let items = estimator::load_items(&manifest, split, &model.config)?;
    let dataset_id = manifest_path.parent().map(file_stem).unwrap_or_default();
    let report = score_model(&model, &items, &file_stem(&ckpt), &dataset_id)?;
    print!("{}", report.to_table());
    if let Some(out) = a.out.or(f.out) {
        write_file(&out, &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, requires_all = ["est1", "est2"], conflicts_with = "features")]
    mix: Option<PathBuf>,
    #[arg(long)]
    est1: Option<PathBuf>,
    #[arg(long)]
    est2: Option<PathBuf>,
    /// RFQF files for mixture, estimate 1 and estimate 2.
    #[arg(long, num_args = 3, value_names = ["MIX", "EST1", "EST2"])]
    features: Option<Vec<PathBuf>>,
}

pub fn estimate(a: EstimateArgs) -> Result<()> {
    let model = estimator::load(&a.ckpt)?;
    let labels = match (a.features, a.mix, a.est1, a.est2) {
        (Some(f), None, _, _) => {
            let feats = [read_features(&f[0])?, read_features(&f[1])?, read_features(&f[2])?];
            let [m, e1, e2] = align_triplet(feats, "input")?;
            model.predict(&TripletInput::from_features(m.into_tensor(), e1.into_tensor(), e2.into_tensor())?)?
        }
        (None, Some(m), Some(e1), Some(e2)) => model.predict_audio(&read_wav(m)?, &read_wav(e1)?, &read_wav(e2)?)?,
        _ => return Err(CliError::Usage("pass either --mix/--est1/--est2 or --features MIX EST1 EST2".into())),
    };
    println!("{}", serde_json::to_string(&labels)?);
    Ok(())
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    ref1: PathBuf,
    #[arg(long)]
    ref2: PathBuf,
    #[arg(long)]
    est1: PathBuf,
    #[arg(long)]
    est2: PathBuf,
    /// Reference transcript file(s), one per source.
    #[arg(long, num_args = 1..=2, requires = "hyp_text")]
    ref_text: Vec<PathBuf>,
    /// Hypothesis transcript file(s), matching --ref-text.
    #[arg(long, num_args = 1..=2)]
    hyp_text: Vec<PathBuf>,
}

fn read_text(p: &Path) -> Result<Vec<String>> {
    let s = std::fs::read_to_string(p).map_err(|e| CliError::Core(refess_core::Error::Io { path: p.to_path_buf(), source: e }))?;
    Ok(normalize_text(&s))
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let [r1, r2, e1, e2] = [&a.ref1, &a.ref2, &a.est1, &a.est2].map(read_wav);
    let sisnr = si_snr_pit([&r1?, &r2?], [&e1?, &e2?])?;
    if a.ref_text.len() != a.hyp_text.len() {
        return Err(CliError::Usage("--ref-text and --hyp-text need the same number of files".into()));
    }
    let wers = a
        .ref_text
        .iter()
        .zip(&a.hyp_text)
        .map(|(r, h)| Ok(wer(&read_text(r)?, &read_text(h)?)?))
        .collect::<Result<Vec<_>>>()?;
    let mut out = serde_json::json!({ "sisnr": sisnr });
    if !wers.is_empty() {
        out["wer"] = serde_json::to_value(&wers)?;
    }
    println!("{out}");
    Ok(())
}

//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs everything; extra arguments select
//! criteria by name substring, e.g. `cargo test --test acceptance -- overfit`.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng as _;
use refess_core::dataset::{build_corpus, BuildConfig};
use refess_core::estimator::{self, model_targets, EstimatorConfig, EstimatorModel, FeatureMode, MetricMode, TrainingItem};
use refess_core::eval::{evaluate, EvalReport};
use refess_core::manifest::{read_manifest, Manifest, MetricKind, Split};
use refess_core::signal::{si_snr, si_snr_pit, AudioSignal};
use refess_core::{rng, text};

/// Clip length of the desk corpora: 47 frames at the default framing.
const DESK_DURATION_S: f64 = 0.96;
const DESK_SEED: u64 = 1;
const DESK_STEPS: u64 = 1500;
const DESK_DIM: usize = 64;
const DESK_LR_SCRATCH: f64 = 3e-4;
const DESK_LR_ENCODER: f64 = 1e-2;

struct Line {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn line(name: &'static str, pass: bool, detail: impl Into<String>) -> Line {
    Line { name, pass, detail: detail.into() }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ---------------------------------------------------------------- oracles

/// Minimum edits over every edit script, by plain recursion (no table).
fn brute_edits(r: &[u8], h: &[u8]) -> usize {
    match (r, h) {
        ([], _) => h.len(),
        (_, []) => r.len(),
        ([a, rr @ ..], [b, hh @ ..]) => {
            let sub = brute_edits(rr, hh) + usize::from(a != b);
            let del = brute_edits(rr, h) + 1;
            let ins = brute_edits(r, hh) + 1;
            sub.min(del).min(ins)
        }
    }
}

fn metric_oracles() -> Vec<Line> {
    let t0 = Instant::now();
    let mut r = rng::seeded(2024);
    let words = ["a", "b", "c"];

    let mut wer_bad = 0;
    for _ in 0..200 {
        let rl = r.random_range(1..=6);
        let hl = r.random_range(0..=6);
        let rs: Vec<u8> = (0..rl).map(|_| r.random_range(0..3)).collect();
        let hs: Vec<u8> = (0..hl).map(|_| r.random_range(0..3)).collect();
        let rw: Vec<&str> = rs.iter().map(|&i| words[i as usize]).collect();
        let hw: Vec<&str> = hs.iter().map(|&i| words[i as usize]).collect();
        let w = text::wer(&rw, &hw).unwrap();
        let best = brute_edits(&rs, &hs);
        let consistent = w.ref_len == rl && rl - w.deletions + w.insertions == hl;
        if w.edits() != best || w.wer != best as f64 / rl as f64 || !consistent {
            wer_bad += 1;
        }
    }

    let sig = |r: &mut rng::Rng, n: usize| -> Vec<f64> { (0..n).map(|_| r.random_range(-1.0..1.0)).collect() };
    let mut worst_scale = 0.0f64;
    for _ in 0..50 {
        let reference = sig(&mut r, 400);
        let noise = sig(&mut r, 400);
        let mix = r.random_range(0.05..2.0);
        let est: Vec<f64> = reference.iter().zip(&noise).map(|(a, b)| a + mix * b).collect();
        let a = AudioSignal::new(reference, 16_000).unwrap();
        let base = si_snr(&a, &AudioSignal::new(est.clone(), 16_000).unwrap()).unwrap();
        for c in [-2.0, 0.1, 1.0, 10.0] {
            let scaled_est = AudioSignal::new(est.iter().map(|x| c * x).collect(), 16_000).unwrap();
            let scaled_ref = a.scaled(c);
            let e = AudioSignal::new(est.clone(), 16_000).unwrap();
            worst_scale = worst_scale.max((si_snr(&a, &scaled_est).unwrap() - base).abs());
            worst_scale = worst_scale.max((si_snr(&scaled_ref, &e).unwrap() - base).abs());
        }
    }

    let mut pit_bad = 0;
    for _ in 0..50 {
        let refs = [sig(&mut r, 300), sig(&mut r, 300)].map(|v| AudioSignal::new(v, 16_000).unwrap());
        let w = [r.random_range(0.0..1.0), r.random_range(0.0..1.0)];
        let ests = [0, 1].map(|k| {
            let (own, other) = (&refs[k], &refs[1 - k]);
            let v = own.samples().iter().zip(other.samples()).map(|(a, b)| (1.0 - w[k]) * a + w[k] * b).collect();
            AudioSignal::new(v, 16_000).unwrap()
        });
        let got = si_snr_pit([&refs[0], &refs[1]], [&ests[0], &ests[1]]).unwrap();
        let direct = [si_snr(&refs[0], &ests[0]).unwrap(), si_snr(&refs[1], &ests[1]).unwrap()];
        let swapped = [si_snr(&refs[0], &ests[1]).unwrap(), si_snr(&refs[1], &ests[0]).unwrap()];
        let best = if (direct[0] + direct[1]) >= (swapped[0] + swapped[1]) { direct } else { swapped };
        let avg = (best[0] + best[1]) / 2.0;
        if (got.average - avg).abs() > 1e-12 || (0..2).any(|k| (got.per_source[k] - best[k]).abs() > 1e-12) {
            pit_bad += 1;
        }
    }

    let elapsed = t0.elapsed();
    vec![
        line("metric oracles: WER vs brute-force edit scripts (200 cases, exact)", wer_bad == 0, format!("{wer_bad} mismatches")),
        line("metric oracles: SI-SNR invariance to scaling either argument < 1e-9 dB", worst_scale < 1e-9, format!("worst {worst_scale:.2e} dB")),
        line("metric oracles: PIT vs 2-permutation brute force (50 cases)", pit_bad == 0, format!("{pit_bad} mismatches")),
        line("metric oracles: runtime < 10 s", elapsed < Duration::from_secs(10), secs(elapsed)),
    ]
}

// -------------------------------------------------------------- gradients

fn gradients() -> Vec<Line> {
    let t0 = Instant::now();
    let cases = common::grad::all();
    let elapsed = t0.elapsed();
    let (worst_name, worst) = cases.iter().fold(("", 0.0f64), |acc, &(n, e)| if e > acc.1 { (n, e) } else { acc });
    let failing: Vec<&str> = cases.iter().filter(|(_, e)| !(*e < common::FD_TOL)).map(|(n, _)| *n).collect();
    vec![
        line(
            "gradients: every operator and extract->forward->MSE < 1e-6 rel. error",
            failing.is_empty(),
            format!("{} cases, worst {worst_name} {worst:.2e}{}", cases.len(), if failing.is_empty() { String::new() } else { format!(", failing {failing:?}") }),
        ),
        line("gradients: runtime < 60 s", elapsed < Duration::from_secs(60), secs(elapsed)),
    ]
}

// ------------------------------------------------------------ determinism

fn desk_config(mode: MetricMode, steps: u64) -> EstimatorConfig {
    EstimatorConfig {
        metric_mode: mode,
        feature_mode: FeatureMode::Toy,
        feature_dim: DESK_DIM,
        total_steps: steps,
        warmup_steps: (steps / 10).max(1),
        peak_lr_scratch: DESK_LR_SCRATCH,
        peak_lr_encoder: DESK_LR_ENCODER,
        seed: 3,
        ..Default::default()
    }
}

fn determinism() -> Vec<Line> {
    let t0 = Instant::now();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let build = BuildConfig { n_train: 48, n_valid: 12, n_test: 12, duration_s: DESK_DURATION_S, seed: 7, ..Default::default() };
    let mut manifests = Vec::new();
    let mut logs = Vec::new();
    let mut ckpts = Vec::new();
    let mut reports = Vec::new();
    for d in &dirs {
        let out = build_corpus(&build, d.path()).unwrap();
        manifests.push(std::fs::read(&out.manifest_path).unwrap());
        let config = EstimatorConfig { feature_dim: 16, ..desk_config(MetricMode::Joint, 500) };
        let (model, log) = estimator::fit_manifest(&config, &out.manifest).unwrap();
        logs.push(serde_json::to_vec(&log).unwrap());
        ckpts.push(estimator::save_bytes(&model).unwrap());
        let items = estimator::load_items(&out.manifest, Split::Test, &model.config).unwrap();
        let report = evaluate(&model, &items, "m", "d").unwrap();
        reports.push(serde_json::to_vec(&report).unwrap());
    }
    let same = |v: &[Vec<u8>]| v[0] == v[1];
    let detail = format!(
        "manifest {}, loss log {}, checkpoint {}, report {} ({})",
        same(&manifests),
        same(&logs),
        same(&ckpts),
        same(&reports),
        secs(t0.elapsed())
    );
    vec![line(
        "determinism: build + 500-step train + evaluate rerun bit-identical",
        same(&manifests) && same(&logs) && same(&ckpts) && same(&reports),
        detail,
    )]
}

// ---------------------------------------------------------------- overfit

fn overfit() -> Vec<Line> {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let build = BuildConfig { n_train: 32, n_valid: 1, n_test: 1, duration_s: 0.32, seed: 11, ..Default::default() };
    let out = build_corpus(&build, dir.path()).unwrap();
    let config = EstimatorConfig {
        metric_mode: MetricMode::Joint,
        feature_mode: FeatureMode::Toy,
        feature_dim: 64,
        batch_size: 12,
        total_steps: 2000,
        warmup_steps: 200,
        peak_lr_scratch: 1e-3,
        peak_lr_encoder: 1e-3,
        seed: 5,
        ..Default::default()
    };
    let train = estimator::load_items(&out.manifest, Split::Train, &config).unwrap();
    // selection on the training set itself
    let (model, _) = estimator::fit(&config, &train, &train).unwrap();
    let elapsed = t0.elapsed();
    let refs: Vec<_> = train.iter().map(|t| &t.input).collect();
    let normalized_mse = |m: &EstimatorModel| {
        let out = m.forward_batch(&refs).unwrap();
        let mut sq = 0.0;
        for (o, item) in out.iter().zip(&train) {
            let t = model_targets(&item.labels, MetricMode::Joint, model.normalizer.as_ref()).unwrap();
            sq += o.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        sq / (out.len() * 6) as f64
    };
    // same measurement on the untrained model, as a reference point
    let mut untrained = EstimatorModel::init(&config).unwrap();
    untrained.normalizer = model.normalizer.clone();
    let init_mse = normalized_mse(&untrained);
    let outputs = model.forward_batch(&refs).unwrap();
    let (mut sq, mut n, mut worst_item) = (0.0, 0usize, 0.0f64);
    let mut first_item = 0.0f64;
    for (i, (o, item)) in outputs.iter().zip(&train).enumerate() {
        let t = model_targets(&item.labels, MetricMode::Joint, model.normalizer.as_ref()).unwrap();
        let mut item_worst = 0.0f64;
        for (a, b) in o.iter().zip(&t) {
            sq += (a - b).powi(2);
            n += 1;
            item_worst = item_worst.max((a - b).abs());
        }
        worst_item = worst_item.max(item_worst);
        if i == 0 {
            first_item = item_worst;
        }
    }
    let mse = sq / n as f64;
    assert_eq!(mse, normalized_mse(&model));
    vec![
        line("overfit: 32 triplets, D=64, 2000 steps, batch 12 -> normalized train MSE < 1e-2", mse < 1e-2, format!("MSE {mse:.2e}, untrained {init_mse:.2e}")),
        line("overfit: runtime < 5 min", elapsed < Duration::from_secs(300), secs(elapsed)),
        line(
            "overfit: prediction on a training item within 0.05 (normalized)",
            first_item < 0.05,
            format!("first item max |err| {first_item:.4}, worst over all 32 items {worst_item:.4}"),
        ),
    ]
}

// ------------------------------------------------------------------- desk

struct Desk {
    manifest: Manifest,
    train: Vec<TrainingItem>,
    valid: Vec<TrainingItem>,
    test: Vec<TrainingItem>,
    build_time: Duration,
}

impl Desk {
    fn build(dir: &Path) -> Self {
        let t0 = Instant::now();
        let config = BuildConfig { duration_s: DESK_DURATION_S, seed: DESK_SEED, ..Default::default() };
        assert_eq!((config.n_train, config.n_valid, config.n_test), (2000, 300, 400));
        let out = build_corpus(&config, dir).unwrap();
        let load_config = desk_config(MetricMode::Sisnr, 1);
        let load = |s| estimator::load_items(&out.manifest, s, &load_config).unwrap();
        let (train, valid, test) = (load(Split::Train), load(Split::Valid), load(Split::Test));
        Self { manifest: read_manifest(&out.manifest_path).unwrap(), train, valid, test, build_time: t0.elapsed() }
    }

    fn run(&self, mode: MetricMode, trainable: bool) -> (EstimatorModel, EvalReport, Duration) {
        let t0 = Instant::now();
        let config = EstimatorConfig { encoder_trainable: trainable, ..desk_config(mode, DESK_STEPS) };
        let (model, _) = estimator::fit(&config, &self.train, &self.valid).unwrap();
        let report = evaluate(&model, &self.test, mode.as_str(), "desk").unwrap();
        let elapsed = t0.elapsed();
        print!("{}", report.to_table());
        println!("({} {})", if trainable { "trainable" } else { "frozen" }, secs(elapsed));
        (model, report, elapsed)
    }
}

fn pcc(r: &EvalReport, k: MetricKind) -> f64 {
    r.metric(k).and_then(|m| m.single.pcc).unwrap_or(f64::NAN)
}

fn consistency_line(name: &'static str, r: &EvalReport, k: MetricKind) -> Line {
    let m = r.metric(k).unwrap();
    line(name, m.avg_consistency < 2.0 * m.avg.mae, format!("mean |avg - mean(s1,s2)| {:.4} vs 2 x avg MAE {:.4}", m.avg_consistency, 2.0 * m.avg.mae))
}

fn desk(want: &dyn Fn(&str) -> bool) -> Vec<Line> {
    let mut lines = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let desk = Desk::build(dir.path());
    println!("desk corpus built and loaded in {}", secs(desk.build_time));

    let want_single = want("learnability") || want("joint") || want("frozen") || want("consistency");
    if want("stats") {
        let stats = refess_core::dataset::stats(&desk.manifest.entries, 10);
        let table = stats.to_table();
        let columns = ["total dur", "avg dur", "#seg", "avg #wrd", "avg wer", "std wer"].iter().all(|c| table.contains(c));
        let sums: Vec<f64> = stats.splits.iter().map(|s| s.wer_histogram.iter().map(|b| b.percent).sum()).collect();
        let hist = stats.splits.len() == 3 && sums.iter().all(|s| (s - 100.0).abs() < 1e-9) && stats.splits.iter().all(|s| s.wer_histogram.len() == 10);
        let counts = stats.splits.iter().map(|s| s.segments).collect::<Vec<_>>() == [2000, 300, 400];
        println!("{table}");
        lines.push(line(
            "stats: corpus table columns and WER-bin histogram summing to 100",
            columns && hist && counts,
            format!("columns {columns}, histogram sums {sums:?}, segments {counts}"),
        ));
    }
    if !want_single {
        return lines;
    }

    let (_, sisnr, t_sisnr) = desk.run(MetricMode::Sisnr, true);
    let (_, wer, t_wer) = desk.run(MetricMode::Wer, true);
    let s = sisnr.metric(MetricKind::Sisnr).unwrap();
    let total = desk.build_time + t_sisnr + t_wer;
    if want("learnability") {
        let (p, m) = (s.single.pcc.unwrap_or(f64::NAN), s.single.mae);
        lines.push(line("learnability: SI-SNR single PCC >= 0.90", p >= 0.90, format!("PCC {p:.3}")));
        lines.push(line("learnability: SI-SNR single MAE <= 2.0 dB", m <= 2.0, format!("MAE {m:.3} dB")));
        let pw = pcc(&wer, MetricKind::Wer);
        lines.push(line("learnability: WER single PCC >= 0.60", pw >= 0.60, format!("PCC {pw:.3}, MAE {:.3}", wer.metric(MetricKind::Wer).unwrap().single.mae)));
        lines.push(line("learnability: build + both runs < 30 min", total < Duration::from_secs(1800), secs(total)));
    }
    if want("consistency") {
        lines.push(consistency_line("consistency: SI-SNR avg head vs per-source heads", &sisnr, MetricKind::Sisnr));
        lines.push(consistency_line("consistency: WER avg head vs per-source heads", &wer, MetricKind::Wer));
    }
    if want("joint") {
        let (_, joint, _) = desk.run(MetricMode::Joint, true);
        for (name, k, single) in
            [("joint: SI-SNR PCC within 0.10 of single-metric model", MetricKind::Sisnr, &sisnr), ("joint: WER PCC within 0.10 of single-metric model", MetricKind::Wer, &wer)]
        {
            let (j, s) = (pcc(&joint, k), pcc(single, k));
            lines.push(line(name, (j - s).abs() <= 0.10, format!("joint {j:.3} vs single {s:.3}")));
        }
    }
    if want("frozen") {
        for (mode, k, trainable) in [(MetricMode::Sisnr, MetricKind::Sisnr, &sisnr), (MetricMode::Wer, MetricKind::Wer, &wer)] {
            let (model, report, _) = desk.run(mode, false);
            let init = EstimatorModel::init(&model.config).unwrap();
            let bits = |m: &EstimatorModel| {
                let e = m.encoder.as_ref().unwrap();
                e.projection.data().iter().chain(e.bias.data()).map(|x| x.to_bits()).collect::<Vec<_>>()
            };
            let unchanged = bits(&model) == bits(&init);
            let (f, t) = (pcc(&report, k), pcc(trainable, k));
            let name = if mode == MetricMode::Sisnr {
                "frozen: SI-SNR encoder bit-unchanged, PCC within 0.15 of trainable"
            } else {
                "frozen: WER encoder bit-unchanged, PCC within 0.15 of trainable"
            };
            lines.push(line(name, unchanged && (f - t).abs() <= 0.15, format!("unchanged {unchanged}, frozen {f:.3} vs trainable {t:.3}")));
        }
    }
    lines
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let want = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let t0 = Instant::now();
    let mut lines = Vec::new();
    let groups: [(&str, fn() -> Vec<Line>); 4] =
        [("metric oracles", metric_oracles), ("gradients", gradients), ("determinism", determinism), ("overfit", overfit)];
    for (name, run) in groups {
        if want(name) {
            let got = run();
            for l in &got {
                println!("{} {} ({})", if l.pass { "PASS" } else { "FAIL" }, l.name, l.detail);
            }
            lines.extend(got);
        }
    }
    if ["stats", "learnability", "joint", "frozen", "consistency"].iter().any(|n| want(n)) {
        let got = desk(&want);
        for l in &got {
            println!("{} {} ({})", if l.pass { "PASS" } else { "FAIL" }, l.name, l.detail);
        }
        lines.extend(got);
    }

    println!("\nacceptance summary ({}):", secs(t0.elapsed()));
    for l in &lines {
        println!("{} {} ({})", if l.pass { "PASS" } else { "FAIL" }, l.name, l.detail);
    }
    let failed = lines.iter().filter(|l| !l.pass).count();
    println!("{} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

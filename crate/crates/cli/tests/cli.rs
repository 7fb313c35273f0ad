use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn refess(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refess")).args(args).env("REFESS_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = refess(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path, seed: &str) -> PathBuf {
    ok(&["build-dataset", "--out", s(dir), "--n-train", "12", "--n-valid", "4", "--n-test", "5", "--seed", seed, "--duration", "0.05"]);
    dir.join("manifest.jsonl")
}

fn train(manifest: &Path, ckpt: &Path, mode: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--manifest", s(manifest), "--mode", mode, "--steps", "6", "--out", s(ckpt), "--dim", "8", "--batch-size", "4"];
    args.extend_from_slice(extra);
    refess(&args)
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&refess(&["--help"])), 0);
    assert_eq!(code(&refess(&["train", "--help"])), 0);
    assert_eq!(code(&refess(&["frobnicate"])), 1);
    assert_eq!(code(&refess(&["build-dataset", "--out", "x", "--bogus"])), 1);
}

#[test]
fn build_dataset_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let stats = ok(&["build-dataset", "--out", s(a.path()), "--n-train", "6", "--n-valid", "2", "--n-test", "2", "--seed", "4", "--duration", "0.05"]);
    assert!(stats.contains("avg #wrd") && stats.contains("average WER bins"));
    ok(&["build-dataset", "--out", s(b.path()), "--n-train", "6", "--n-valid", "2", "--n-test", "2", "--seed", "4", "--duration", "0.05"]);
    let read = |d: &Path| std::fs::read(d.join("manifest.jsonl")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert!(a.path().join("stats.json").exists());
}

#[test]
fn zero_bins_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let out = refess(&["build-dataset", "--out", s(d.path()), "--bins", "0"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bin count"));
}

#[test]
fn train_evaluate_estimate_round() {
    let d = tempfile::tempdir().unwrap();
    let manifest = corpus(d.path(), "1");
    let ckpt = d.path().join("sisnr.rfqc");
    let out = train(&manifest, &ckpt, "sisnr", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("sisnr.rfqc.log.json")).unwrap()).unwrap();
    assert_eq!(log["steps"].as_array().unwrap().len(), 6);
    assert!(log["epochs"].as_array().unwrap().last().unwrap()["valid_loss"].is_f64());
    assert_eq!(log["encoder_group_active"], true);

    let report = d.path().join("report.json");
    let table = ok(&["evaluate", "--ckpt", s(&ckpt), "--manifest", s(&manifest), "--out", s(&report)]);
    assert!(table.contains("sisnr"));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let m = &r["metrics"][0];
    for head in ["s1", "s2", "single", "avg"] {
        assert!(m[head]["mae"].is_f64(), "{head}");
    }
    assert_eq!(m["single"]["n"], 10);

    let mismatch = refess(&["evaluate", "--ckpt", s(&ckpt), "--manifest", s(&manifest), "--mode", "wer"]);
    assert_eq!(code(&mismatch), 2);
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("requested"));
    let missing = refess(&["evaluate", "--ckpt", s(&d.path().join("nope.rfqc")), "--manifest", s(&manifest)]);
    assert_ne!(code(&missing), 0);

    let a = |name: &str| d.path().join("audio").join(format!("test_00016_{name}.wav"));
    let est = ok(&["estimate", "--ckpt", s(&ckpt), "--mix", s(&a("mix")), "--est1", s(&a("est1")), "--est2", s(&a("est2"))]);
    let v: serde_json::Value = serde_json::from_str(&est).unwrap();
    assert!(v["sisnr_s1"].as_f64().unwrap().is_finite());
    assert!(v.get("wer_s1").is_none());

    // 8 kHz copy of the mixture
    let mix = refess_core::wav::read_wav(a("mix")).unwrap();
    let slow = d.path().join("slow.wav");
    refess_core::wav::write_wav(&slow, &refess_core::signal::AudioSignal::new(mix.samples().to_vec(), 8000).unwrap()).unwrap();
    let bad = refess(&["estimate", "--ckpt", s(&ckpt), "--mix", s(&slow), "--est1", s(&a("est1")), "--est2", s(&a("est2"))]);
    assert_ne!(code(&bad), 0);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("sample rate"));

    // features of the wrong width for this checkpoint
    let f = d.path().join("f.rfqf");
    let seq = refess_core::features::FeatureSequence::from_rows(3, 5, vec![0.5; 15], 50.0).unwrap();
    refess_core::features::write_features(&f, &seq).unwrap();
    let bad = refess(&["estimate", "--ckpt", s(&ckpt), "--features", s(&f), s(&f), s(&f)]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("feature dimension"));
}

#[test]
fn frozen_encoder_is_logged_inactive() {
    let d = tempfile::tempdir().unwrap();
    let manifest = corpus(d.path(), "2");
    let ckpt = d.path().join("frozen.rfqc");
    let out = train(&manifest, &ckpt, "wer", &["--freeze-encoder"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("frozen.rfqc.log.json")).unwrap()).unwrap();
    assert_eq!(log["encoder_group_active"], false);
    assert!(log["steps"].as_array().unwrap().iter().all(|s| s["lr_encoder"].is_null()));
}

#[test]
fn joint_with_constant_wer_fails_cleanly() {
    let d = tempfile::tempdir().unwrap();
    let manifest = corpus(d.path(), "3");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let edited: Vec<String> = text
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            for k in ["wer_s1", "wer_s2", "wer_avg"] {
                v["labels"][k] = serde_json::json!(0.25);
            }
            v.to_string()
        })
        .collect();
    std::fs::write(&manifest, edited.join("\n")).unwrap();
    let out = train(&manifest, &d.path().join("j.rfqc"), "joint", &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("constant"));
}

#[test]
fn config_file_is_read_and_checked() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.toml");
    std::fs::write(&cfg, format!("[build-dataset]\nout = {:?}\nn_train = 3\nn_valid = 1\nn_test = 1\nduration = 0.05\n", s(&d.path().join("c")))).unwrap();
    ok(&["--config", s(&cfg), "build-dataset"]);
    let m = std::fs::read_to_string(d.path().join("c").join("manifest.jsonl")).unwrap();
    assert_eq!(m.lines().count(), 5);

    std::fs::write(&cfg, "[build-dataset]\nntrain = 3\n").unwrap();
    assert_eq!(code(&refess(&["--config", s(&cfg), "build-dataset", "--out", s(d.path())])), 1);
}

#[test]
fn metrics_subcommand() {
    let d = tempfile::tempdir().unwrap();
    corpus(d.path(), "5");
    let a = |name: &str| d.path().join("audio").join(format!("train_00000_{name}.wav"));
    let t = |name: &str| d.path().join("text").join(format!("train_00000_{name}.txt"));
    let same = ok(&["metrics", "--ref1", s(&a("ref1")), "--ref2", s(&a("ref2")), "--est1", s(&a("ref1")), "--est2", s(&a("ref2")), "--ref-text", s(&t("ref1")), "--hyp-text", s(&t("ref1"))]);
    let v: serde_json::Value = serde_json::from_str(&same).unwrap();
    assert_eq!(v["sisnr"]["average"], 50.0);
    assert_eq!(v["sisnr"]["permutation"], "identity");
    assert_eq!(v["wer"][0]["wer"], 0.0);

    let swapped = ok(&["metrics", "--ref1", s(&a("ref1")), "--ref2", s(&a("ref2")), "--est1", s(&a("ref2")), "--est2", s(&a("ref1"))]);
    let v: serde_json::Value = serde_json::from_str(&swapped).unwrap();
    assert_eq!(v["sisnr"]["permutation"], "swapped");

    let empty = d.path().join("empty.txt");
    std::fs::write(&empty, "  \n").unwrap();
    let out = refess(&["metrics", "--ref1", s(&a("ref1")), "--ref2", s(&a("ref2")), "--est1", s(&a("est1")), "--est2", s(&a("est2")), "--ref-text", s(&empty), "--hyp-text", s(&t("hyp1"))]);
    assert_ne!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty reference"));
}

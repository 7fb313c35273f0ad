"""End-to-end check of the Python bindings.

Build and install the extension first:

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/refess-*.whl
"""

import math
import random
import sys
import tempfile
from pathlib import Path

import refess


def check(cond, what):
    if not cond:
        sys.exit(f"FAIL {what}")
    print(f"ok   {what}")


def main():
    rng = random.Random(0)
    ref = [rng.gauss(0, 1) for _ in range(800)]
    est = [x + 0.1 * rng.gauss(0, 1) for x in ref]
    check(abs(refess.si_snr(ref, est) - refess.si_snr(ref, [3 * x for x in est])) < 1e-9, "si_snr scale invariance")

    other = [rng.gauss(0, 1) for _ in range(800)]
    r = refess.si_snr_pit(ref, other, other, est)
    check(r["permutation"] == "swapped", "pit resolves swapped outputs")

    w = refess.wer("the cat sat", "the bat sat down")
    check(w["substitutions"] == 1 and w["insertions"] == 1 and math.isclose(w["wer"], 2 / 3), "wer breakdown")
    try:
        refess.wer("  ", "x")
        check(False, "empty reference rejected")
    except refess.RefessError:
        check(True, "empty reference rejected")

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        rows = [[float(t * 4 + d) for d in range(4)] for t in range(3)]
        refess.write_features(tmp / "a.rfqf", rows, 50.0)
        back, rate = refess.read_features(tmp / "a.rfqf")
        check(back == rows and rate == 50.0, "rfqf round trip")
        (tmp / "bad.rfqf").write_bytes(b"XXXX" + (tmp / "a.rfqf").read_bytes()[4:])
        try:
            refess.read_features(tmp / "bad.rfqf")
            check(False, "rfqf bad magic rejected")
        except refess.RefessError:
            check(True, "rfqf bad magic rejected")

        corpus = tmp / "corpus"
        stats = refess.build_dataset(corpus, n_train=12, n_valid=4, n_test=4, seed=1, duration_s=0.05)
        check(all(abs(sum(b["percent"] for b in s["wer_histogram"]) - 100) < 1e-9 for s in stats["splits"]), "histogram sums to 100")
        entries = refess.read_manifest_entries(corpus / "manifest.jsonl")
        check(len(entries) == 20 and "labels" in entries[0], "manifest entries")

        model, log = refess.Estimator.train(corpus / "manifest.jsonl", "joint", steps=8, dim=8, batch_size=4)
        check(len(log["steps"]) == 8 and log["encoder_group_active"], "train log")
        model.save(tmp / "m.rfqc")
        model = refess.Estimator.load(tmp / "m.rfqc")
        check(model.mode == "joint", "checkpoint round trip")

        audio = corpus / "audio"
        pred = model.estimate_wav(*(audio / f"test_00016_{k}.wav" for k in ("mix", "est1", "est2")))
        check(all(math.isfinite(pred[k]) for k in ("wer_s1", "sisnr_avg")), "estimate from wav")
        report = model.evaluate(corpus / "manifest.jsonl")
        check(report["n"] == 4 and len(report["metrics"]) == 2, "evaluate report")

    print("all python smoke checks passed")


if __name__ == "__main__":
    main()

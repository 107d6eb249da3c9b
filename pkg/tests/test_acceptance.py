"""Acceptance suite: every check prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines show up even
with output capture on.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import snr_brute, vibrato_parameters
from signals import SR, click_train, energy, sine, stft_energy
from vdlab.audio_io import AudioClip, FrameLabels, read_wav
from vdlab.cli import main
from vdlab.dsp import Spectrogram, stft
from vdlab.evaluation import ConfusionCounts, confusion, metrics
from vdlab.features import BLOCKS, FeatureConfig, assemble_features, block_slices
from vdlab.hpss import STAGE2, apply_double_stage, double_stage_hpss, hpss
from vdlab.models import smoothing_window
from vdlab.stressgen import (
    DEVIATIONS_ST, FORMANT_CONDITIONS, RATES_HZ, SnrMixSpec, VibratoSpec, gen_synthetic_corpus,
    gen_vibrato_grid, mix_at_snr, read_grid_manifest, synth_vibrato,
)
from vdlab.study import StudyConfig, run_study


@pytest.fixture
def verdict(capsys):
    def report(name, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return report


# ------------------------------------------------------------------ reference-set accuracy (optional)

REFERENCE_ACCURACY = {"fe": 87.9, "cnn": 86.8, "rnn": 87.5}


def test_reference_dataset_accuracy(verdict, tmp_path, capsys):
    root = os.environ.get("VDLAB_JAMENDO")
    if not root:
        with capsys.disabled():
            print("\n[acceptance] reference-set accuracy: SKIP (set VDLAB_JAMENDO to a directory with train/ and test/)")
        pytest.skip("reference audio not available")
    root = Path(root)
    results = {}
    for name, ref in REFERENCE_ACCURACY.items():
        model_dir, pred_dir, ev_dir = (tmp_path / f"{name}_{k}" for k in ("model", "pred", "eval"))
        assert main(["train", "--pipeline", name, "--data", str(root / "train"), "--out", str(model_dir)]) == 0
        assert main(["predict", "--model", str(model_dir / f"model_{name}.vdm"), "--input", str(root / "test"),
                     "--out", str(pred_dir)]) == 0
        assert main(["evaluate", "--predictions", str(pred_dir), "--data", str(root / "test"),
                     "--out", str(ev_dir)]) == 0
        micro = json.loads((ev_dir / "summary.json").read_text())["micro"]
        assert set(micro) == {"accuracy", "recall", "precision", "f_measure", "fpr", "fnr"}
        results[name] = micro["accuracy"]
    ok = all(abs(results[n] - REFERENCE_ACCURACY[n]) <= 3.0 for n in results)
    verdict("reference-set accuracy", ok, ", ".join(f"{n} {v:.1f}%" for n, v in results.items()))


# ------------------------------------------------------------------ feature contract

def test_feature_contract(verdict):
    rng = np.random.default_rng(0)
    widths = set()
    for seconds in (2.0, 3.7, 11.0):
        fm = assemble_features(AudioClip(0.1 * rng.standard_normal(int(seconds * SR)), SR))
        widths.add(fm.rows.shape[1])
        assert np.all(np.isfinite(fm.rows))
    sl = block_slices()
    blocks_ok = [n for _, n in BLOCKS] == [17, 17, 17, 5, 30, 30] and sl["delta_mfcc"] == (86, 116)
    clip = AudioClip(0.1 * rng.standard_normal(30 * SR), SR)
    t0 = time.perf_counter()
    fm = assemble_features(clip, FeatureConfig())
    dt = time.perf_counter() - t0
    ok = widths == {116} and fm.rows.shape[1] == 116 and blocks_ok and dt < 5.0
    verdict("feature contract", ok, f"widths {sorted(widths)}, 30 s clip in {dt:.2f} s")


# ------------------------------------------------------------------ vibrato grid

def test_vibrato_grid(verdict, tmp_path):
    t0 = time.perf_counter()
    rows = gen_vibrato_grid(3.0, SR, tmp_path)
    gen_seconds = time.perf_counter() - t0
    manifest = read_grid_manifest(tmp_path / "manifest.csv")
    wavs = sorted(tmp_path.glob("*.wav"))
    combos = {(r["rate"], r["deviation"], r["formant"]) for r in manifest}
    shape_ok = (len(rows) == len(wavs) == 336 and len(combos) == 336
                and {r for r, _, _ in combos} == set(map(float, RATES_HZ))
                and {d for _, d, _ in combos} == set(map(float, DEVIATIONS_ST))
                and {f for _, _, f in combos} == set(FORMANT_CONDITIONS))
    worst_rate = worst_dev = 0.0
    failures = []
    gated = [r for r in manifest if r["rate"] >= 1 and r["deviation"] >= 0.1]
    for r in gated:
        clip = read_wav(tmp_path / r["filename"])
        rate, dev = vibrato_parameters(clip.samples, clip.sample_rate)
        er = abs(rate - r["rate"]) / r["rate"]
        ed = abs(dev - r["deviation"]) / r["deviation"]
        worst_rate, worst_dev = max(worst_rate, er), max(worst_dev, ed)
        if er > 0.05 or ed > 0.10:
            failures.append(r["filename"])
    ok = shape_ok and not failures and gen_seconds < 120 and len(gated) == 252
    verdict("vibrato grid", ok, f"336 clips in {gen_seconds:.1f} s; {len(gated)} gated clips, worst rate error "
            f"{100 * worst_rate:.2f}%, worst deviation error {100 * worst_dev:.2f}%, failures {failures[:5]}")


# ------------------------------------------------------------------ SNR mixing

def test_snr_mixing(verdict):
    tracks = gen_synthetic_corpus(seed=21, n_tracks=4)
    worst = 0.0
    for tr in tracks:
        for target in (-12, -6, 0, 6, 12):
            _, v, i, rep = mix_at_snr(tr.vocal, tr.instrumental, SnrMixSpec(target, excerpt_seconds=None))
            worst = max(worst, abs(snr_brute(v.samples, i.samples, SR) - target),
                        abs(rep.achieved_snr_db - target))
    verdict("SNR mixing", worst <= 0.1, f"worst deviation {worst:.4f} dB over 4 tracks x 5 targets")


# ------------------------------------------------------------------ HPSS

def test_hpss(verdict):
    # masks rebuilt from brute-force medians, each one on its own
    rng = np.random.default_rng(0)
    mask_err = 0.0
    for power in (2.0, 8.0):
        mags = rng.random((40, 60)) * 10
        mags[:, :5] = 0.0
        out = hpss(Spectrogram(mags, 70.0, 1.0), 5, 7, power)
        pt = np.pad(mags, ((2, 2), (0, 0)), mode="edge")
        pf = np.pad(mags, ((0, 0), (3, 3)), mode="edge")
        h = np.array([[np.median(pt[t:t + 5, f]) for f in range(60)] for t in range(40)])
        pe = np.array([[np.median(pf[t, f:f + 7]) for f in range(60)] for t in range(40)])
        tot = h ** power + pe ** power
        m_h = np.where(tot > 0, h ** power / np.where(tot > 0, tot, 1), 0.5)
        m_p = np.where(tot > 0, pe ** power / np.where(tot > 0, tot, 1), 0.5)
        harm = out.harmonic.magnitudes
        perc = out.percussive.magnitudes
        mask_err = max(mask_err, float(np.max(np.abs(m_h + m_p - 1))),
                       float(np.max(np.abs(out.mask - m_h))), float(np.max(np.abs((1 - out.mask) - m_p))),
                       float(np.max(np.abs(harm + perc - mags))))

    def fractions(clip):
        o = hpss(stft(clip, 1024, 315))
        h, p = energy(o.harmonic.magnitudes), energy(o.percussive.magnitudes)
        return h / (h + p), p / (h + p)

    sine_h, _ = fractions(sine(220, 2.0))
    _, click_p = fractions(click_train(2.0))
    tone = synth_vibrato(VibratoSpec(rate=6, deviation=1, formant="a", duration=2.0), SR)
    clicks = click_train(2.0)
    clicks = AudioClip(clicks.samples * np.sqrt(energy(tone.samples) / energy(clicks.samples)), SR)
    _, _, masks = double_stage_hpss(AudioClip(tone.samples + clicks.samples, SR), return_masks=True)
    tone_h, _ = apply_double_stage(tone, masks)
    h2 = energy(tone_h) / stft_energy(tone, STAGE2)
    ok = mask_err <= 1e-6 and sine_h >= 0.9 and click_p >= 0.9 and h2 >= 0.6
    verdict("HPSS", ok, f"mask sum error {mask_err:.1e}, sine harmonic {sine_h:.3f}, "
            f"clicks percussive {click_p:.3f}, vowel tone in H2 {h2:.3f}")


# ------------------------------------------------------------------ gradient checks

def test_gradient_checks(verdict):
    import test_models as tm

    t0 = time.perf_counter()
    checks = [tm.test_cnn_gradient_check_toy, tm.test_cnn_gradient_check_two_pools,
              tm.test_rnn_gradient_check_toy, tm.test_rnn_gradient_check_stacked_masked]
    failed = []
    for check in checks:
        try:
            check()
        except AssertionError:
            failed.append(check.__name__)
    dt = time.perf_counter() - t0
    verdict("gradient checks", not failed and dt < 60, f"{len(checks)} configurations in {dt:.1f} s, failed {failed}")


# ------------------------------------------------------------------ end-to-end synthetic study

def test_synthetic_study(verdict):
    res = run_study(StudyConfig(seed=0, n_tracks=40, n_test=8))
    fe_ok = res.accuracy["fe"] >= 90.0 and res.train_seconds["fe"] < 600
    curves = {name: res.fnr_curve(name) for name in ("fe", "cnn", "rnn")}
    trend_ok = all(all(a > b for a, b in zip(c, c[1:])) for c in curves.values())
    singer, extreme = res.heatmap_regions("cnn")
    heat_ok = singer < extreme
    detail = (f"FE accuracy {res.accuracy['fe']:.2f}% after {res.train_seconds['fe']:.0f} s; FNR -12..+12 dB "
              + "; ".join(f"{n} " + "/".join(f"{v:.2f}" for v in c) for n, c in curves.items())
              + f"; CNN heatmap singer {singer:.3f} vs extreme {extreme:.3f}")
    verdict("synthetic study", fe_ok and trend_ok and heat_ok, detail)


# ------------------------------------------------------------------ metric oracle

def test_metric_oracle(verdict):
    rng = np.random.default_rng(123)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        p = rng.random(n) < rng.random()
        t = rng.random(n) < rng.random()
        tp = fp = tn = fn = 0
        for a, b in zip(p, t):
            tp += a and b
            fp += a and not b
            tn += (not a) and (not b)
            fn += (not a) and b
        c = confusion(FrameLabels(70.0, p), FrameLabels(70.0, t))
        m = metrics(c)
        expect = metrics(ConfusionCounts(tp, fp, tn, fn))
        if c != ConfusionCounts(tp, fp, tn, fn) or m != expect or m.accuracy != 100.0 * (tp + tn) / n:
            mismatches += 1
    w = smoothing_window(800, 70)
    verdict("metric oracle", mismatches == 0 and w == 57, f"{mismatches} mismatches in 1000 pairs; 800 ms at 70 fps -> {w}")


# ------------------------------------------------------------------ determinism

def _outputs(d):
    doc = json.loads((d / "run_manifest.json").read_text())["outputs"]
    doc.pop("config.ini")
    return doc


def test_determinism(verdict, tmp_path):
    def run(*args):
        assert main([str(a) for a in args]) == 0

    tiny = ["--set", "forest.n_trees=6", "--set", "cnn.model.n_mels=40", "--set", "cnn.model.channels=4,4,4,4",
            "--set", "cnn.model.dense=8", "--set", "cnn.train.epochs=1", "--set", "cnn.train.per_class_cap=150",
            "--set", "rnn.train.epochs=1", "--set", "rnn.model.hidden=6,6,6"]
    diffs = []
    corpora = []
    for k in (1, 2):
        d = tmp_path / f"corpus{k}"
        run("gen-corpus", "--seed", 4, "--n-tracks", 4, "--set", "corpus.duration=5", "--out", d)
        corpora.append(d)
    if _outputs(corpora[0]) != _outputs(corpora[1]):
        diffs.append("corpus")
    corpus = corpora[0]
    for jobs in (1, 8):
        base = tmp_path / f"jobs{jobs}"
        for name in ("fe", "cnn", "rnn"):
            run("extract", "--pipeline", name, "--input", corpus, "--out", base / f"feat_{name}", "--jobs", jobs, *tiny)
            run("train", "--pipeline", name, "--data", corpus, "--seed", 7, "--out", base / f"model_{name}",
                "--jobs", jobs, *tiny)
            run("predict", "--model", base / f"model_{name}" / f"model_{name}.vdm", "--input", corpus,
                "--out", base / f"pred_{name}", "--jobs", jobs)
            run("evaluate", "--predictions", base / f"pred_{name}", "--data", corpus, "--out", base / f"eval_{name}")
        run("stress-snr", "--data", corpus, "--levels", "-12,0,12", "--out", base / "snr", "--jobs", jobs,
            *[a for n in ("fe", "cnn", "rnn") for a in ("--model", base / f"model_{n}" / f"model_{n}.vdm")])
    a, b = tmp_path / "jobs1", tmp_path / "jobs8"
    compared = 0
    for sub in sorted(p.name for p in a.iterdir()):
        compared += len(_outputs(a / sub))
        if _outputs(a / sub) != _outputs(b / sub):
            diffs.append(sub)
    verdict("determinism", not diffs, f"{compared} artifacts compared across two runs and --jobs 1 vs 8; "
            f"differing: {diffs or 'none'}")

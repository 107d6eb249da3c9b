"""``vdlab`` command line: feature extraction, training, prediction, evaluation and stress tests.

Exit codes: 0 success, 1 invalid usage or configuration, 2 failure while running.
"""

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .audio_io import labels_to_frames, write_wav
from .config import ConfigError, load_config, write_config
from .datasets import load_audio, load_dataset, load_labels
from .evaluation import (
    METRIC_ORDER, per_song_report, snr_sweep, vibrato_heatmap, write_summary, write_sweep_csv,
)
from .gridio import write_grid
from .pipelines import (
    PIPELINES, load_detector, read_predictions_csv, represent, save_detector, train_detector,
    write_predictions_csv,
)
from .stressgen import (
    CorpusConfig, FormantTable, SnrMixSpec, gen_synthetic_corpus, gen_vibrato_grid, mix_at_snr,
    read_grid_manifest, write_corpus,
)

log = logging.getLogger("vdlab")

RUN_MANIFEST = "run_manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p, pipeline=False):
    p.add_argument("--config", help="experiment INI file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--seed", type=int, help="experiment seed (overrides the config)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes; results do not depend on it")
    p.add_argument("--out", help="output directory (overrides the config)")
    if pipeline:
        p.add_argument("--pipeline", choices=PIPELINES, help="detector pipeline")


def build_parser():
    parser = _Parser(prog="vdlab", description="Singing voice detection lab.")
    parser.add_argument("--version", action="version", version=f"vdlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="write model inputs (features, mel or HPSS mels) to disk")
    _common(p, pipeline=True)
    p.add_argument("--input", required=True, help="WAV file or dataset directory")

    p = sub.add_parser("train", help="train a detector on a labelled dataset")
    _common(p, pipeline=True)
    p.add_argument("--data", help="training dataset (defaults to the config's train_data)")

    p = sub.add_parser("predict", help="write per-frame predictions as CSV")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="WAV file or dataset directory")

    p = sub.add_parser("evaluate", help="score prediction CSVs against labels")
    _common(p)
    p.add_argument("--predictions", required=True, help="directory of NAME.csv prediction files")
    p.add_argument("--data", help="labelled dataset (defaults to the config's test_data)")

    p = sub.add_parser("gen-vibrato", help="write the 336-clip vibrato grid")
    _common(p)
    p.add_argument("--duration", type=float, help="clip length in seconds")

    p = sub.add_parser("gen-corpus", help="write a labelled synthetic corpus with stems")
    _common(p)
    p.add_argument("--n-tracks", type=int)

    p = sub.add_parser("mix-snr", help="remix a vocal and an instrumental stem at a target SNR")
    _common(p)
    p.add_argument("--vocal", required=True)
    p.add_argument("--instrumental", required=True)
    p.add_argument("--snr", type=float, required=True, help="target SNR in dB")
    p.add_argument("--normalize", action="store_true", help="peak-normalise a clipping mix")

    p = sub.add_parser("stress-vibrato", help="run a detector over the vibrato grid and draw heatmaps")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--grid", required=True, help="directory written by gen-vibrato")

    p = sub.add_parser("stress-snr", help="SNR sweep over stems for one or more detectors")
    _common(p)
    p.add_argument("--model", action="append", required=True, help="model file (repeatable)")
    p.add_argument("--data", required=True, help="dataset with vocal/instrumental stems and labels")
    p.add_argument("--levels", help="comma-separated SNRs in dB (default from config)")

    p = sub.add_parser("report", help="collect run summaries into one table")
    _common(p)
    p.add_argument("runs", nargs="+", help="run directories holding summary.json")
    return parser


# ------------------------------------------------------------------ plumbing

def _load(args):
    overrides = []
    for item in args.set:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides.append((key.strip(), value))
    for flag, key in (("seed", "seed"), ("out", "out"), ("pipeline", "pipeline")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides.append((key, str(v)))
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    return load_config(args.config, overrides), overrides


def _out_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out, args, cfg, overrides, argv):
    """Record what is needed to re-run the command: argv, resolved config, seed, versions, outputs."""
    write_config(cfg, out / "config.ini")
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != RUN_MANIFEST)
    doc = {
        "schema_version": 1,
        "command": args.command,
        "argv": list(argv),
        "overrides": [list(o) for o in overrides],
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "versions": {"vdlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "outputs": {str(p.relative_to(out)): _sha256(p) for p in files},
    }
    (out / RUN_MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _examples(items, sample_rate):
    return [(load_audio(it.audio, sample_rate), load_labels(it)) for it in items]


def _predict_one(job):
    det, path, sample_rate = job
    return det(load_audio(path, sample_rate))


def _predict_many(det, paths, jobs):
    work = [(det, p, _sample_rate(det.config)) for p in paths]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(min(jobs, len(work))) as ex:
            return list(ex.map(_predict_one, work))
    return [_predict_one(w) for w in work]


def _sample_rate(pcfg):
    return pcfg.features.sample_rate if hasattr(pcfg, "features") else pcfg.sample_rate


# ------------------------------------------------------------------ commands

def cmd_extract(args, cfg, out):
    pcfg = cfg.pipeline_config()
    for it in load_dataset(args.input):
        x, fps = represent(cfg.pipeline, load_audio(it.audio, _sample_rate(pcfg)), pcfg)
        grid = x.T if cfg.pipeline == "cnn" else x
        write_grid(out / f"{it.name}.{cfg.pipeline}.vdg", grid, fps)
        log.info("extracted %s: %d frames x %d", it.name, *grid.shape)


def cmd_train(args, cfg, out):
    data = args.data or cfg.train_data
    if not data:
        raise ConfigError("train needs --data or [experiment] train_data")
    pcfg = cfg.pipeline_config()
    items = load_dataset(data, need_labels=True)
    det = train_detector(cfg.pipeline, _examples(items, _sample_rate(pcfg)), pcfg, cfg.post, jobs=args.jobs)
    save_detector(out / f"model_{cfg.pipeline}.vdm", det)


def cmd_predict(args, cfg, out):
    det = load_detector(args.model)
    items = load_dataset(args.input)
    tracks = _predict_many(det, [it.audio for it in items], args.jobs)
    for it, tr in zip(items, tracks):
        write_predictions_csv(out / f"{it.name}.csv", tr)


def cmd_evaluate(args, cfg, out):
    data = args.data or cfg.test_data
    if not data:
        raise ConfigError("evaluate needs --data or [experiment] test_data")
    items = load_dataset(data, need_labels=True)
    rows = []
    for it in items:
        path = Path(args.predictions) / f"{it.name}.csv"
        if not path.is_file():
            raise FileNotFoundError(f"no predictions for {it.name!r} ({path})")
        pred = read_predictions_csv(path)
        truth = labels_to_frames(load_labels(it), pred.frame_rate, len(pred))
        rows.append((it.name, pred, truth))
    rep = per_song_report(rows)
    rep.write_csv(out / "per_song.csv")
    write_summary(out / "summary.json", "evaluate", {
        "songs": len(rows), "micro": rep.micro.as_dict(), "macro": rep.macro, "metric_order": list(METRIC_ORDER)})
    print(_table([("micro", rep.micro.as_dict()), ("macro", rep.macro)]))


def cmd_gen_vibrato(args, cfg, out):
    duration = args.duration or cfg.vibrato.duration
    table = FormantTable.from_config(cfg.vibrato.formant_table) if cfg.vibrato.formant_table else None
    rows = gen_vibrato_grid(duration, cfg.vibrato.sample_rate, out, table, cfg.vibrato.cutoff)
    print(f"wrote {len(rows)} clips to {out}")


def cmd_gen_corpus(args, cfg, out):
    n = args.n_tracks or cfg.corpus.n_tracks
    tracks = gen_synthetic_corpus(cfg.seed, n, cfg.corpus.sample_rate, CorpusConfig(duration=cfg.corpus.duration))
    write_corpus(tracks, out)
    print(f"wrote {len(tracks)} tracks to {out}")


def cmd_mix_snr(args, cfg, out):
    v, i = load_audio(args.vocal, cfg.corpus.sample_rate), load_audio(args.instrumental, cfg.corpus.sample_rate)
    spec = SnrMixSpec(args.snr, cfg.snr.excerpt_seconds or None, normalize=args.normalize)
    mix, sv, si, report = mix_at_snr(v, i, spec)
    for name, clip in (("mix", mix), ("vocal", sv), ("instrumental", si)):
        write_wav(out / f"{name}.wav", clip, encoding="float32")
    write_summary(out / "summary.json", "mix-snr", {"report": report.as_dict()})
    print(f"achieved {report.achieved_snr_db:+.3f} dB (target {args.snr:+g}), gain {report.gain:.4f}")


def cmd_stress_vibrato(args, cfg, out):
    det = load_detector(args.model)
    grid_dir = Path(args.grid)
    manifest = read_grid_manifest(grid_dir / "manifest.csv")
    tracks = _predict_many(det, [grid_dir / r["filename"] for r in manifest], args.jobs)
    heat = vibrato_heatmap(manifest, {r["filename"]: t for r, t in zip(manifest, tracks)})
    heat.write(out)
    write_summary(out / "summary.json", "stress-vibrato", {
        "pipeline": det.pipeline, "rates": list(heat.rates), "deviations": list(heat.deviations),
        "cells": {f: m.tolist() for f, m in heat.cells.items()}})


def cmd_stress_snr(args, cfg, out):
    levels = cfg.snr.levels
    if args.levels:
        try:
            levels = tuple(float(x) for x in args.levels.split(",") if x.strip())
        except ValueError:
            raise ConfigError(f"--levels expects comma-separated numbers, got {args.levels!r}") from None
    if not levels:
        raise ConfigError("need at least one SNR level")
    items = load_dataset(args.data, need_labels=True, need_stems=True)
    detectors = {}
    for path in args.model:
        det = load_detector(path)
        name = det.pipeline if det.pipeline not in detectors else Path(path).stem
        detectors[name] = det
    sr = cfg.corpus.sample_rate
    tracks = [_Stems(it.name, load_audio(it.vocal, sr), load_audio(it.instrumental, sr), load_labels(it))
              for it in items]
    rows = snr_sweep(tracks, detectors, list(levels), cfg.snr.excerpt_seconds or None, jobs=args.jobs)
    write_sweep_csv(rows, out / "sweep.csv")
    write_summary(out / "summary.json", "stress-snr", {"levels": list(levels), "rows": [
        {"model": r.model, "snr_db": r.snr_db, "fpr": r.fpr, "fnr": r.fnr, "error": r.error} for r in rows]})
    for r in rows:
        print(f"{r.model:4s} {r.snr_db:+6.1f} dB  FPR {_num(r.fpr)}  FNR {_num(r.fnr)}  error {_num(r.error)}")


class _Stems:
    def __init__(self, name, vocal, instrumental, labels):
        self.name, self.vocal, self.instrumental, self.labels = name, vocal, instrumental, labels


def cmd_report(args, cfg, out):
    lines = ["| run | kind | accuracy | recall | precision | F | FPR | FNR |", "|---|---|---|---|---|---|---|---|"]
    docs = {}
    for run in args.runs:
        path = Path(run) / "summary.json"
        if not path.is_file():
            raise FileNotFoundError(f"{run}: no summary.json")
        doc = json.loads(path.read_text())
        if doc.get("schema_version") != 1:
            raise ConfigError(f"{path}: unsupported summary schema {doc.get('schema_version')!r}")
        docs[str(run)] = doc
        m = doc.get("micro")
        cells = [_num(m[k]) for k in METRIC_ORDER] if m else [""] * 6
        lines.append(f"| {run} | {doc.get('kind', '?')} | " + " | ".join(cells) + " |")
    (out / "report.md").write_text("\n".join(lines) + "\n")
    write_summary(out / "summary.json", "report", {"runs": docs})
    print("\n".join(lines))


def _num(v):
    return "-" if v is None else f"{v:.2f}"


def _table(rows):
    head = "       " + " ".join(f"{k[:9]:>9s}" for k in METRIC_ORDER)
    return "\n".join([head] + [f"{name:6s} " + " ".join(f"{_num(d[k]):>9s}" for k in METRIC_ORDER)
                               for name, d in rows])


def _glue_negative_values(argv):
    # "--levels -12,-6" would read -12,-6 as a flag; bind it to its option instead
    out, i = [], 0
    while i < len(argv):
        if argv[i] in ("--levels", "--snr") and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


COMMANDS = {
    "extract": cmd_extract, "train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate,
    "gen-vibrato": cmd_gen_vibrato, "gen-corpus": cmd_gen_corpus, "mix-snr": cmd_mix_snr,
    "stress-vibrato": cmd_stress_vibrato, "stress-snr": cmd_stress_snr, "report": cmd_report,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    level = getattr(logging, os.environ.get("VDLAB_LOG", "WARNING").upper(), None)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(_glue_negative_values(argv))
        cfg, overrides = _load(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    try:
        out = _out_dir(cfg)
        COMMANDS[args.command](args, cfg, out)
        _write_manifest(out, args, cfg, overrides, argv)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, FloatingPointError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

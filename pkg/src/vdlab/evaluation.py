"""Frame-level metrics, per-song breakdowns, vibrato heatmaps and SNR sweeps."""

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import labels_to_frames
from .stressgen import DEVIATIONS_ST, FORMANT_CONDITIONS, RATES_HZ, SnrMixSpec, mix_at_snr

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METRIC_ORDER = ("accuracy", "recall", "precision", "f_measure", "fpr", "fnr")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class MetricsReport:
    """Percentages; ``None`` where the ratio's denominator is zero."""

    accuracy: float
    precision: float = None
    recall: float = None
    f_measure: float = None
    fpr: float = None
    fnr: float = None

    def as_dict(self):
        return {k: getattr(self, k) for k in METRIC_ORDER}


def _labels(x):
    return np.asarray(getattr(x, "labels", x), dtype=bool)


def confusion(pred, truth):
    """Frame-wise counts; ``pred`` and ``truth`` are FrameLabels (or PredictionTracks) at one rate."""
    rp, rt = getattr(pred, "frame_rate", None), getattr(truth, "frame_rate", None)
    if rp is not None and rt is not None and not np.isclose(rp, rt):
        raise ValueError(f"frame rates differ ({rp} vs {rt}); resample the labels first")
    p, t = _labels(pred), _labels(truth)
    if p.shape != t.shape:
        raise ValueError(f"prediction has {len(p)} frames, truth {len(t)}")
    return ConfusionCounts(int(np.sum(p & t)), int(np.sum(p & ~t)), int(np.sum(~p & ~t)), int(np.sum(~p & t)))


def _pct(num, den):
    return 100.0 * num / den if den else None


def metrics(c):
    if c.total == 0:
        raise ValueError("no frames counted")
    precision = _pct(c.tp, c.tp + c.fp)
    recall = _pct(c.tp, c.tp + c.fn)
    if precision is None or recall is None or precision + recall == 0:
        f = None
    else:
        f = 2 * precision * recall / (precision + recall)
    return MetricsReport(_pct(c.tp + c.tn, c.total), precision, recall, f,
                         _pct(c.fp, c.fp + c.tn), _pct(c.fn, c.fn + c.tp))


# ------------------------------------------------------------------ per song

@dataclass
class SongRow:
    song: str
    counts: ConfusionCounts
    report: MetricsReport


@dataclass
class SongReport:
    rows: list                       # sorted by accuracy, lowest first
    micro: MetricsReport
    macro: dict

    def lowest(self, k):
        return self.rows[:k]

    def highest(self, k):
        return self.rows[::-1][:k]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("song", "frames") + METRIC_ORDER)
            for r in self.rows:
                w.writerow([r.song, r.counts.total] + [_fmt(v) for v in r.report.as_dict().values()])
            w.writerow(["<micro>", sum(r.counts.total for r in self.rows)]
                       + [_fmt(v) for v in self.micro.as_dict().values()])
            w.writerow(["<macro>", ""] + [_fmt(self.macro[k]) for k in METRIC_ORDER])


def _fmt(v):
    return "" if v is None else f"{v:.4f}"


def per_song_report(tracks):
    """``tracks``: iterable of (song id, pred, truth)."""
    rows, seen = [], set()
    for song, pred, truth in tracks:
        if song in seen:
            raise ValueError(f"duplicate song id {song!r}")
        seen.add(song)
        c = confusion(pred, truth)
        rows.append(SongRow(song, c, metrics(c)))
    if not rows:
        raise ValueError("need at least one song")
    rows.sort(key=lambda r: (r.report.accuracy, r.song))
    total = ConfusionCounts()
    for r in rows:
        total = total + r.counts
    macro = {}
    for k in METRIC_ORDER:
        vals = [getattr(r.report, k) for r in rows if getattr(r.report, k) is not None]
        macro[k] = float(np.mean(vals)) if vals else None
    return SongReport(rows, metrics(total), macro)


# ------------------------------------------------------------------ vibrato heatmap

@dataclass
class HeatmapGrid:
    """Per formant condition a (rates x deviations) matrix of nonvocal-frame fractions."""

    cells: dict
    rates: tuple = RATES_HZ
    deviations: tuple = DEVIATIONS_ST

    def region_mean(self, formant, rate_ok, dev_ok):
        m = self.cells[formant]
        sel = np.outer([rate_ok(r) for r in self.rates], [dev_ok(d) for d in self.deviations])
        return float(m[sel].mean())

    def write(self, out_dir, scale=16):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for formant in FORMANT_CONDITIONS:
            m = self.cells[formant]
            csv_path = out / f"heatmap_{formant}.csv"
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["rate_hz/deviation_st"] + [f"{d:g}" for d in self.deviations])
                for r in reversed(range(len(self.rates))):
                    w.writerow([f"{self.rates[r]:g}"] + [f"{v:.6f}" for v in m[r]])
            pgm_path = out / f"heatmap_{formant}.pgm"
            write_pgm(pgm_path, m[::-1], scale)
            paths += [csv_path, pgm_path]
        return paths


def write_pgm(path, values, scale=1):
    """Plain (P2) grayscale image, 1.0 -> white; row 0 is the top."""
    img = np.kron(np.clip(values, 0, 1), np.ones((scale, scale)))
    pix = np.rint(img * 255).astype(int)
    lines = ["P2", f"{pix.shape[1]} {pix.shape[0]}", "255"]
    lines += [" ".join(map(str, row)) for row in pix]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path):
    tok = Path(path).read_text().split()
    if tok[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM")
    w, h, maxval = int(tok[1]), int(tok[2]), int(tok[3])
    return np.array(tok[4: 4 + w * h], dtype=int).reshape(h, w) / maxval


def vibrato_heatmap(manifest, predictions):
    """``manifest`` rows carry filename/rate/deviation/formant; ``predictions`` maps filename to labels."""
    missing = [r["filename"] for r in manifest if r["filename"] not in predictions]
    if missing:
        raise KeyError(f"{len(missing)} clips lack predictions: {', '.join(missing[:10])}"
                       + (" ..." if len(missing) > 10 else ""))
    sums = {f: np.zeros((len(RATES_HZ), len(DEVIATIONS_ST))) for f in FORMANT_CONDITIONS}
    counts = {f: np.zeros((len(RATES_HZ), len(DEVIATIONS_ST))) for f in FORMANT_CONDITIONS}
    for r in manifest:
        i = _grid_index(RATES_HZ, float(r["rate"]))
        j = _grid_index(DEVIATIONS_ST, float(r["deviation"]))
        acc = 1.0 - float(np.mean(_labels(predictions[r["filename"]])))
        sums[r["formant"]][i, j] += acc
        counts[r["formant"]][i, j] += 1
    for f in FORMANT_CONDITIONS:
        if np.any(counts[f] == 0):
            raise ValueError(f"formant {f!r} grid has empty cells")
    return HeatmapGrid({f: sums[f] / counts[f] for f in FORMANT_CONDITIONS})


def _grid_index(axis, v):
    for j, a in enumerate(axis):
        if np.isclose(a, v):
            return j
    raise ValueError(f"value {v} is not on the grid {axis}")


# ------------------------------------------------------------------ SNR sweep

@dataclass
class SweepRow:
    model: str
    snr_db: float
    counts: ConfusionCounts
    fpr: float
    fnr: float
    error: float


def snr_sweep(tracks, detectors, levels, excerpt_seconds=None, jobs=1):
    """Remix every track's stems at each level and score each detector.

    ``tracks`` expose ``name``, ``vocal``, ``instrumental`` and ``labels``;
    ``detectors`` map a name to a callable ``clip -> PredictionTrack``.
    Rows come back ordered by (detector, level) whatever ``jobs`` is.
    """
    if not levels:
        raise ValueError("need at least one SNR level")
    keys = [(name, float(level)) for name in detectors for level in levels]

    def run(key):
        name, level = key
        total = ConfusionCounts()
        for tr in tracks:
            mix, _, _, _ = mix_at_snr(tr.vocal, tr.instrumental,
                                      SnrMixSpec(level, excerpt_seconds, normalize=True))
            pred = detectors[name](mix)
            truth = labels_to_frames(tr.labels, pred.frame_rate, len(pred))
            total = total + confusion(pred, truth)
        m = metrics(total)
        log.info("sweep %s %+g dB: FPR %s FNR %s", name, level, _fmt(m.fpr), _fmt(m.fnr))
        return SweepRow(name, level, total, m.fpr, m.fnr, 100.0 * (total.fp + total.fn) / total.total)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            results = dict(zip(keys, ex.map(run, keys)))
    else:
        results = {k: run(k) for k in keys}
    return [results[k] for k in keys]


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "snr_db", "fpr", "fnr", "error", "tp", "fp", "tn", "fn"))
        for r in rows:
            c = r.counts
            w.writerow([r.model, f"{r.snr_db:g}", _fmt(r.fpr), _fmt(r.fnr), _fmt(r.error), c.tp, c.fp, c.tn, c.fn])


def write_summary(path, kind, payload):
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind, **payload}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    return doc


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "__dataclass_fields__"):
        return {k: getattr(o, k) for k in o.__dataclass_fields__}
    raise TypeError(f"cannot serialize {type(o).__name__}")

"""Stress-test generators: the synthetic vibrato grid, SNR remixing, and a
labelled synthetic corpus used for desk-scale training."""

import configparser
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, Interval, LabelTrack, VOCAL, labels_to_frames, write_wav
from .dsp import biquad_apply, biquad_design, onepole_lowpass

log = logging.getLogger(__name__)

RATES_HZ = (0.5, 1, 2, 4, 6, 8, 10)
DEVIATIONS_ST = (0.01, 0.1, 0.3, 0.6, 1, 2, 4, 8)
FORMANT_CONDITIONS = ("none", "a", "e", "i", "o", "u")
SNR_LEVELS_DB = (-12, -6, 0, 6, 12)

# average adult-male vowel formants (Hz) with bandwidths and linear gains
_DEFAULT_FORMANTS = {
    "a": ((730, 80, 1.0), (1090, 90, 0.5), (2440, 120, 0.25)),
    "e": ((530, 80, 1.0), (1840, 90, 0.5), (2480, 120, 0.25)),
    "i": ((270, 80, 1.0), (2290, 90, 0.5), (3010, 120, 0.25)),
    "o": ((570, 80, 1.0), (840, 90, 0.5), (2410, 120, 0.25)),
    "u": ((300, 80, 1.0), (870, 90, 0.5), (2240, 120, 0.25)),
}


@dataclass(frozen=True)
class FormantTable:
    """Per vowel: three ``(center_hz, bandwidth_hz, gain)`` resonators, F1 < F2 < F3."""

    vowels: dict = field(default_factory=lambda: dict(_DEFAULT_FORMANTS))

    def __post_init__(self):
        for vowel, rows in self.vowels.items():
            centers = [r[0] for r in rows]
            if len(rows) != 3 or not centers[0] < centers[1] < centers[2]:
                raise ValueError(f"vowel {vowel!r} needs three increasing formants")

    @classmethod
    def from_config(cls, path):
        """Read ``[a]`` ... ``[u]`` sections with ``f1 = center, bandwidth, gain`` keys."""
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise FileNotFoundError(path)
        vowels = {}
        for vowel in cp.sections():
            rows = []
            for key in ("f1", "f2", "f3"):
                c, b, g = (float(v) for v in cp[vowel][key].split(","))
                rows.append((c, b, g))
            vowels[vowel] = tuple(rows)
        return cls(vowels)

    def to_config(self, path):
        cp = configparser.ConfigParser()
        for vowel, rows in self.vowels.items():
            cp[vowel] = {f"f{i + 1}": ", ".join(f"{v:g}" for v in r) for i, r in enumerate(rows)}
        with open(path, "w") as fh:
            cp.write(fh)


@dataclass(frozen=True)
class VibratoSpec:
    rate: float
    deviation: float
    formant: str = "none"
    f0: float = 220.0
    duration: float = 3.0

    def __post_init__(self):
        if not (self.rate > 0 and self.deviation > 0 and self.f0 > 0):
            raise ValueError("rate, deviation and f0 must be positive")

    @property
    def freq_range(self):
        k = 2.0 ** (self.deviation / 12.0)
        return self.f0 / k, self.f0 * k


def instantaneous_frequency(t, f0, rate, deviation, phase=0.0):
    """``f0 * 2**(deviation * sin(2 pi rate t + phase) / 12)``; deviation is the peak excursion in semitones."""
    return f0 * 2.0 ** (deviation * np.sin(2 * np.pi * rate * t + phase) / 12.0)


def sawtooth_from_freq(freq, sample_rate, cutoff, amp_env=None):
    """Band-limited sawtooth (harmonic ``k`` at amplitude ``1/k``) following ``freq``.

    Harmonics are kept while ``k * max(freq) < cutoff``, so none of them pops in
    or out during the modulation.
    """
    phase = 2 * np.pi * np.cumsum(freq) / sample_rate
    n_harm = max(1, int(cutoff // np.max(freq)))
    out = np.zeros_like(phase)
    for k in range(1, n_harm + 1):
        out += np.sin(k * phase) / k
    if amp_env is not None:
        out *= amp_env
    return out


def apply_formants(x, vowel, sample_rate, table=None):
    table = table or FormantTable()
    if vowel not in table.vowels:
        raise ValueError(f"unknown vowel {vowel!r}")
    y = np.zeros_like(x)
    for center, bw, gain in table.vowels[vowel]:
        if center >= sample_rate / 2:
            raise ValueError(f"formant at {center} Hz unreachable at {sample_rate} Hz")
        y += gain * biquad_apply(biquad_design("bandpass_resonator", center, sample_rate, bandwidth=bw), x)
    return y


def synth_vibrato(spec, sample_rate=22050, cutoff=5000.0, table=None, peak=0.9):
    """Low-passed FM sawtooth, optionally through a vowel's three formant resonators."""
    if spec.freq_range[1] >= cutoff:
        raise ValueError(f"vibrato peak {spec.freq_range[1]:.1f} Hz is above the {cutoff} Hz cutoff")
    if cutoff >= sample_rate / 2:
        raise ValueError("low-pass cutoff must be below Nyquist")
    t = np.arange(int(round(spec.duration * sample_rate))) / sample_rate
    freq = instantaneous_frequency(t, spec.f0, spec.rate, spec.deviation)
    x = onepole_lowpass(sawtooth_from_freq(freq, sample_rate, cutoff), cutoff, sample_rate)
    if spec.formant != "none":
        x = apply_formants(x, spec.formant, sample_rate, table)
    m = np.max(np.abs(x))
    if m > 0:
        x = x * (peak / m)
    return AudioClip(x, sample_rate)


# ------------------------------------------------------------------ vibrato grid

MANIFEST_FIELDS = ("filename", "rate", "deviation", "formant", "label")


def grid_specs(duration=3.0, f0=220.0):
    """All 7 x 8 x 6 = 336 conditions in a fixed order (formant, rate, deviation)."""
    return [VibratoSpec(rate, dev, formant, f0, duration)
            for formant in FORMANT_CONDITIONS for rate in RATES_HZ for dev in DEVIATIONS_ST]


def clip_name(spec):
    return f"vib_{spec.formant}_r{spec.rate:g}_d{spec.deviation:g}.wav"


def gen_vibrato_grid(duration, sample_rate, out_dir, table=None, cutoff=5000.0):
    """Write the 336 grid clips as 16-bit WAV plus ``manifest.csv``; returns the manifest rows.

    Every clip is an instrument, so its ground truth is nonvocal throughout.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for spec in grid_specs(duration):
        name = clip_name(spec)
        write_wav(out / name, synth_vibrato(spec, sample_rate, cutoff, table))
        rows.append({"filename": name, "rate": f"{spec.rate:g}", "deviation": f"{spec.deviation:g}",
                     "formant": spec.formant, "label": "nonvocal"})
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, MANIFEST_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    log.info("wrote %d vibrato clips to %s", len(rows), out)
    return rows


def read_grid_manifest(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(MANIFEST_FIELDS[:4]) - set(rows[0]):
        raise ValueError(f"{path}: manifest lacks columns {MANIFEST_FIELDS[:4]}")
    for r in rows:
        r["rate"] = float(r["rate"])
        r["deviation"] = float(r["deviation"])
    return rows


# -------------------------------------------------------------------- SNR mixing

@dataclass(frozen=True)
class SnrMixSpec:
    target_snr_db: float
    excerpt_seconds: float = 30.0    # None keeps the whole stems
    active_dbfs: float = -60.0       # vocal frames quieter than this are ignored
    frame_seconds: float = 0.05
    normalize: bool = False          # peak-normalise the mix to 0.99 if it clips


@dataclass(frozen=True)
class SnrReport:
    target_snr_db: float
    input_snr_db: float
    gain: float
    achieved_snr_db: float
    active_fraction: float
    peak: float
    clipped: bool
    normalized: bool

    def as_dict(self):
        return dict(self.__dict__)


def _active_mask(vocal, frame_len, threshold_dbfs):
    # per-sample mask of frames whose mean-square level is above the threshold (0 dBFS = full-scale DC)
    n = len(vocal)
    n_frames = -(-n // frame_len)
    padded = np.zeros(n_frames * frame_len)
    padded[:n] = vocal
    ms = np.mean(padded.reshape(n_frames, frame_len) ** 2, axis=1)
    active = ms > 10.0 ** (threshold_dbfs / 10.0)
    return np.repeat(active, frame_len)[:n]


def measure_snr(vocal, instrumental, frame_len, threshold_dbfs=-60.0):
    """``10 log10(P_v / P_i)`` over frames where the vocal is active; also returns the active fraction."""
    mask = _active_mask(vocal, frame_len, threshold_dbfs)
    if not mask.any():
        raise ValueError("vocal stem is silent; SNR undefined")
    pv = np.mean(vocal[mask] ** 2)
    pi = np.mean(instrumental[mask] ** 2)
    if pi == 0:
        return np.inf, float(mask.mean())
    return 10 * np.log10(pv / pi), float(mask.mean())


def mix_at_snr(vocal, instrumental, spec):
    """Scale the vocal stem so its active-region SNR against the instrumental hits the target.

    Returns ``(mix, scaled_vocal, instrumental, report)``; the three clips share
    rate and length.
    """
    if vocal.sample_rate != instrumental.sample_rate:
        raise ValueError("stems have different sample rates")
    sr = vocal.sample_rate
    v, i = vocal.samples, instrumental.samples
    if spec.excerpt_seconds is not None:
        n = int(round(spec.excerpt_seconds * sr))
        v, i = v[:n], i[:n]
    if len(v) != len(i):
        raise ValueError(f"stems differ in length ({len(v)} vs {len(i)} samples)")
    frame_len = max(1, int(round(spec.frame_seconds * sr)))
    current, _ = measure_snr(v, i, frame_len, spec.active_dbfs)
    if not np.isfinite(current):
        raise ValueError("instrumental stem is silent where the vocal is active")
    # scaling can move quiet frames across the activity threshold, so refine the
    # gain on the re-measured SNR until it settles
    gain = 1.0 if current == spec.target_snr_db else 10.0 ** ((spec.target_snr_db - current) / 20.0)
    best = None
    for _ in range(8):
        vs = gain * v if gain != 1.0 else v
        mix = vs + i
        peak = float(np.max(np.abs(mix))) if len(mix) else 0.0
        scale = 0.99 / peak if (spec.normalize and peak > 1.0) else 1.0
        achieved, frac = measure_snr(vs * scale, i * scale, frame_len, spec.active_dbfs)
        err = abs(achieved - spec.target_snr_db)
        if best is None or err < best[0]:
            best = (err, gain, achieved, frac, peak, scale)
        if err < 1e-9:
            break
        gain *= 10.0 ** ((spec.target_snr_db - achieved) / 20.0)
    _, gain, achieved, frac, peak, scale = best
    v = gain * v if gain != 1.0 else v
    mix = v + i
    clipped = peak > 1.0
    normalized = scale != 1.0
    if clipped:
        log.warning("mix peaks at %.3f (%.2f dBFS)%s", peak, 20 * np.log10(peak),
                    ", normalised" if normalized else "")
    if normalized:
        v, i, mix = v * scale, i * scale, mix * scale
    report = SnrReport(float(spec.target_snr_db), float(current), float(gain), float(achieved),
                       frac, peak, clipped, normalized)
    return AudioClip(mix, sr), AudioClip(v, sr), AudioClip(i, sr), report


# ------------------------------------------------------------- synthetic corpus

@dataclass(frozen=True)
class CorpusConfig:
    duration: float = 20.0
    vocal_fraction: tuple = (0.35, 0.65)
    segment_seconds: tuple = (1.0, 4.0)
    vibrato_rate: tuple = (5.5, 8.0)
    vibrato_deviation: tuple = (0.6, 2.0)
    vocal_f0: tuple = (110.0, 400.0)
    note_seconds: tuple = (0.3, 0.9)
    note_gain_db: tuple = (-12.0, 0.0)
    mix_snr_db: tuple = (-2.0, 8.0)
    cutoff: float = 5000.0


@dataclass
class CorpusTrack:
    name: str
    mix: AudioClip
    vocal: AudioClip
    instrumental: AudioClip
    labels: LabelTrack
    snr_db: float
    report: SnrReport = None

    def frame_labels(self, frame_rate, n_frames):
        return labels_to_frames(self.labels, frame_rate, n_frames)


def _ramp(n, sr, seconds=0.02):
    k = min(n // 2, int(seconds * sr))
    env = np.ones(n)
    if k > 0:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(k) / k)
        env[:k] = r
        env[n - k:] = r[::-1]
    return env


def _vocal_segment(rng, n, sr, cfg, table):
    """Formant-filtered FM sawtooth: a few notes with vibrato and per-note gain."""
    rate = rng.uniform(*cfg.vibrato_rate)
    dev = rng.uniform(*cfg.vibrato_deviation)
    t = np.arange(n) / sr
    base = np.empty(n)
    gain = np.empty(n)
    pos = 0
    f_lo, f_hi = cfg.vocal_f0
    while pos < n:
        step = int(rng.uniform(*cfg.note_seconds) * sr)
        base[pos:pos + step] = np.exp(rng.uniform(np.log(f_lo), np.log(f_hi)))
        gain[pos:pos + step] = 10.0 ** (rng.uniform(*cfg.note_gain_db) / 20.0)
        pos += step
    # 30 ms glides between notes
    k = max(1, int(0.03 * sr)) | 1
    kernel = np.ones(k) / k
    base = np.exp(np.convolve(np.pad(np.log(base), k // 2, mode="edge"), kernel, "valid"))
    gain = np.convolve(np.pad(gain, k // 2, mode="edge"), kernel, "valid")
    freq = base * 2.0 ** (dev * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)) / 12.0)
    x = onepole_lowpass(sawtooth_from_freq(freq, sr, cfg.cutoff), cfg.cutoff, sr)
    x = apply_formants(x, str(rng.choice(FORMANT_CONDITIONS[1:])), sr, table)
    x = x * gain * _ramp(n, sr)
    return x / (np.sqrt(np.mean(x ** 2)) + 1e-12)


def _vocal_layout(rng, n, sr, cfg):
    """Sample ranges of the vocal segments; their total is an exact fraction of the track."""
    frac = rng.uniform(*cfg.vocal_fraction)
    total_v = int(round(frac * n))
    lo, hi = (int(s * sr) for s in cfg.segment_seconds)
    n_seg = max(1, int(round(total_v / ((lo + hi) / 2))))
    n_seg = min(n_seg, total_v // lo) or 1
    # segment lengths at least ``lo``; gaps (n_seg + 1 of them, ends may be empty) share the rest
    extra = rng.dirichlet(np.ones(n_seg)) * (total_v - n_seg * lo)
    seg = lo + np.floor(extra).astype(int)
    seg[-1] += total_v - seg.sum()
    gaps_total = n - total_v
    inner_min = min(int(0.5 * sr), gaps_total // max(1, n_seg + 1))
    free = gaps_total - inner_min * (n_seg - 1)
    gap = np.floor(rng.dirichlet(np.ones(n_seg + 1)) * free).astype(int)
    gap[1:-1] += inner_min
    gap[-1] += gaps_total - gap.sum()
    out, pos = [], 0
    for s, g in zip(seg, gap[:-1]):
        pos += g
        out.append((pos, pos + s))
        pos += s
    return out


def _instrumental_bed(rng, n, sr, cfg):
    t = np.arange(n) / sr
    # band-limited noise floor
    noise = rng.standard_normal(n)
    noise = biquad_apply(biquad_design("bandpass_resonator", rng.uniform(300, 3000), sr,
                                       bandwidth=rng.uniform(500, 2000)), noise)
    noise *= 0.3 / (np.sqrt(np.mean(noise ** 2)) + 1e-12)
    # steady harmonic tones, chord changes every 1.5-3 s, no vibrato
    tones = np.zeros(n)
    pos = 0
    while pos < n:
        step = min(n - pos, int(rng.uniform(1.5, 3.0) * sr))
        seg = np.zeros(step)
        for _ in range(rng.integers(2, 4)):
            f = np.exp(rng.uniform(np.log(80), np.log(600)))
            n_h = int(min(12, cfg.cutoff // f))
            decay = rng.uniform(0.5, 1.5)
            for k in range(1, n_h + 1):
                seg += np.sin(2 * np.pi * k * f * t[:step] + rng.uniform(0, 2 * np.pi)) / k ** decay
        tones[pos:pos + step] = seg * _ramp(step, sr, 0.01)
        pos += step
    tones *= 1.0 / (np.sqrt(np.mean(tones ** 2)) + 1e-12)
    # percussion: decaying noise bursts on a regular grid
    perc = np.zeros(n)
    period = int(rng.uniform(0.25, 0.5) * sr)
    burst_len = int(0.05 * sr)
    env = np.exp(-np.arange(burst_len) / (0.01 * sr))
    for start in range(int(rng.uniform(0, period)), n - burst_len, period):
        perc[start:start + burst_len] += env * rng.standard_normal(burst_len)
    perc *= 0.6 / (np.sqrt(np.mean(perc ** 2)) + 1e-12)
    return noise + tones + perc


def synth_corpus_track(seed, index, sample_rate=22050, config=None, table=None):
    cfg = config or CorpusConfig()
    rng = np.random.default_rng([seed, index])
    n = int(round(cfg.duration * sample_rate))
    layout = _vocal_layout(rng, n, sample_rate, cfg)
    vocal = np.zeros(n)
    for a, b in layout:
        vocal[a:b] = _vocal_segment(rng, b - a, sample_rate, cfg, table)
    bed = _instrumental_bed(rng, n, sample_rate, cfg)
    bed *= 0.05 / np.sqrt(np.mean(bed ** 2))
    snr = float(rng.uniform(*cfg.mix_snr_db))
    mix, v, i, report = mix_at_snr(AudioClip(vocal, sample_rate), AudioClip(bed, sample_rate),
                                   SnrMixSpec(snr, excerpt_seconds=None, normalize=True))
    ivs, prev = [], 0
    for a, b in layout:
        if a > prev:
            ivs.append(Interval(prev / sample_rate, a / sample_rate, "nonvocal"))
        ivs.append(Interval(a / sample_rate, b / sample_rate, VOCAL))
        prev = b
    if prev < n:
        ivs.append(Interval(prev / sample_rate, n / sample_rate, "nonvocal"))
    return CorpusTrack(f"track{index:03d}", mix, v, i, LabelTrack(tuple(ivs)), snr, report)


def gen_synthetic_corpus(seed, n_tracks, sample_rate=22050, config=None, table=None):
    """Deterministic list of labelled tracks; track ``k`` depends only on ``(seed, k)``."""
    if n_tracks < 4:
        raise ValueError("a corpus needs at least 4 tracks")
    return [synth_corpus_track(seed, k, sample_rate, config, table) for k in range(n_tracks)]


CORPUS_FIELDS = ("name", "mix", "vocal", "instrumental", "labels", "snr_db", "vocal_fraction")


def write_corpus(tracks, out_dir):
    """Mixes and stems as WAV, labels as .lab, plus ``manifest.csv``."""
    from .audio_io import write_lab

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for tr in tracks:
        files = {k: f"{tr.name}_{k}.wav" for k in ("mix", "vocal", "instrumental")}
        for k, clip in (("mix", tr.mix), ("vocal", tr.vocal), ("instrumental", tr.instrumental)):
            write_wav(out / files[k], clip, encoding="float32")
        write_lab(out / f"{tr.name}.lab", tr.labels)
        v = sum(b - a for a, b in tr.labels.vocal_intervals())
        rows.append({"name": tr.name, **files, "labels": f"{tr.name}.lab", "snr_db": f"{tr.snr_db:.4f}",
                     "vocal_fraction": f"{v / tr.mix.duration:.4f}"})
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, CORPUS_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows

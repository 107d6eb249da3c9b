"""Hand-engineered frame features for the random-forest detector.

116 values per frame, in this column order::

    fluctogram       17   per-band frame-to-frame pitch shift (log-frequency lag)
    flatness         17   per-band geometric / arithmetic mean
    contraction      17   per-band share of energy in the central half
    vocal_variance    5   short-time variance of MFCC 1..5
    mfcc             30
    delta_mfcc       30

The three band-wise blocks share one layout of 17 half-overlapping bands on a
log-frequency axis.
"""

from dataclasses import dataclass, field

import numpy as np

from .dsp import delta, mel_filterbank, mel_spectrogram, mfcc, stft_centered

BLOCKS = (("fluctogram", 17), ("flatness", 17), ("contraction", 17),
          ("vocal_variance", 5), ("mfcc", 30), ("delta_mfcc", 30))
N_FEATURES = sum(n for _, n in BLOCKS)
EPS = 1e-12


def block_slices():
    out, start = {}, 0
    for name, n in BLOCKS:
        out[name] = (start, start + n)
        start += n
    return out


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 22050
    fft_size: int = 2048
    hop: int = 315
    bins_per_semitone: int = 10
    fmin: float = 164.0
    fmax: float = 10548.0
    n_bands: int = 17
    band_overlap: float = 0.5
    max_lag: int = 5
    n_mels: int = 40
    n_mfcc: int = 30
    delta_span: int = 9
    vv_window: int = 11
    context: str = "delta"          # none | delta | stack
    context_frames: int = 38        # +-38 frames = 1.1 s at 70 fps
    stack_step: int = 19

    def __post_init__(self):
        if self.context not in ("none", "delta", "stack"):
            raise ValueError(f"unknown context mode {self.context!r}")
        if self.n_bands != 17 or self.n_mfcc != 30:
            raise ValueError("the 116-column layout needs 17 bands and 30 MFCCs")
        if self.n_mfcc > self.n_mels:
            raise ValueError("n_mfcc exceeds n_mels")


@dataclass(frozen=True)
class BandLayout:
    bands: tuple  # (lo, hi) column ranges on the log axis, hi exclusive
    n_columns: int

    @classmethod
    def overlapping(cls, n_columns, n_bands=17, overlap=0.5):
        """``n_bands`` equal bands, consecutive ones sharing ``overlap`` of their width."""
        width = n_columns / (1 + (n_bands - 1) * (1 - overlap))
        step = width * (1 - overlap)
        bands = []
        for b in range(n_bands):
            lo = int(round(b * step))
            hi = min(n_columns, int(round(b * step + width)))
            bands.append((lo, hi))
        if any(hi - lo < 2 for lo, hi in bands):
            raise ValueError(f"{n_columns} columns too few for {n_bands} bands")
        return cls(tuple(bands), n_columns)


@dataclass
class FeatureMatrix:
    rows: np.ndarray
    frame_rate: float
    slices: dict = field(default_factory=block_slices)

    def block(self, name):
        lo, hi = self.slices[name]
        return self.rows[:, lo:hi]


def log_axis(bins_per_semitone, fmin, fmax):
    if not 0 < fmin < fmax:
        raise ValueError(f"need 0 < fmin < fmax, got {fmin}, {fmax}")
    n = int(np.floor(12 * bins_per_semitone * np.log2(fmax / fmin))) + 1
    if n < 2:
        raise ValueError("empty log-frequency axis")
    return fmin * 2.0 ** (np.arange(n) / (12.0 * bins_per_semitone))


def log_resample(spec, bins_per_semitone=10, fmin=164.0, fmax=10548.0):
    """Linear interpolation of each frame onto a geometric frequency axis."""
    nyquist = spec.bin_hz * (spec.n_bins - 1)
    if fmax > nyquist + 1e-9:
        raise ValueError(f"fmax {fmax} above Nyquist {nyquist}")
    freqs = log_axis(bins_per_semitone, fmin, fmax)
    pos = freqs / spec.bin_hz
    i0 = np.minimum(np.floor(pos).astype(int), spec.n_bins - 2)
    w = pos - i0
    m = spec.magnitudes
    return m[:, i0] * (1 - w) + m[:, i0 + 1] * w


def _lag_order(max_lag):
    # argmax keeps the first maximum: 0, -1, +1, -2, +2, ...
    order = [0]
    for k in range(1, max_lag + 1):
        order += [-k, k]
    return np.array(order)


def fluctogram(grid, layout, max_lag=5):
    """Per band, the lag maximising correlation of frame ``t`` with frame ``t-1``.

    A positive lag means the content moved up: ``grid[t, i] ~ grid[t-1, i-lag]``.
    Correlations are zero-mean normalised over the band; a comparison where
    either side is flat (norm below 1e-9 of the grid's peak) scores 0.
    Frame 0 gets 0.
    """
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    grid = np.asarray(grid, dtype=float)
    n_frames, n_cols = grid.shape
    if layout.n_columns != n_cols or any(hi > n_cols for _, hi in layout.bands):
        raise ValueError("band layout wider than the grid")
    lags = _lag_order(max_lag)
    padded = np.pad(grid, ((0, 0), (max_lag, max_lag)))
    out = np.zeros((n_frames, len(layout.bands)))
    if n_frames < 2:
        return out
    floor = 1e-9 * np.abs(grid).max()
    for b, (lo, hi) in enumerate(layout.bands):
        cur = grid[1:, lo:hi]
        cur = cur - cur.mean(axis=1, keepdims=True)
        cur_norm = np.sqrt(np.sum(cur ** 2, axis=1))
        cur_norm = np.where(cur_norm > floor * np.sqrt(hi - lo), cur_norm, 0.0)
        scores = np.empty((len(lags), n_frames - 1))
        for j, lag in enumerate(lags):
            prev = padded[:-1, max_lag + lo - lag: max_lag + hi - lag]
            prev = prev - prev.mean(axis=1, keepdims=True)
            prev_norm = np.sqrt(np.sum(prev ** 2, axis=1))
            denom = cur_norm * np.where(prev_norm > floor * np.sqrt(hi - lo), prev_norm, 0.0)
            num = np.sum(cur * prev, axis=1)
            scores[j] = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)
        out[1:, b] = lags[np.argmax(scores, axis=0)]
    return out


def spectral_flatness(grid, layout):
    out = np.empty((grid.shape[0], len(layout.bands)))
    for b, (lo, hi) in enumerate(layout.bands):
        band = grid[:, lo:hi] + EPS
        out[:, b] = np.exp(np.mean(np.log(band), axis=1)) / np.mean(band, axis=1)
    return np.minimum(out, 1.0)


def spectral_contraction(grid, layout):
    """Energy in the central half of each band over the band's total energy."""
    out = np.empty((grid.shape[0], len(layout.bands)))
    for b, (lo, hi) in enumerate(layout.bands):
        e = (grid[:, lo:hi] + EPS) ** 2
        w = hi - lo
        c0, c1 = w // 4, w // 4 + w // 2
        out[:, b] = e[:, c0:c1].sum(axis=1) / e.sum(axis=1)
    return out


def vocal_variance(mfcc_rows, window=11):
    """Variance of MFCC 1..5 over a centered window, edges replicated."""
    if window % 2 == 0 or window < 1:
        raise ValueError("vocal variance window must be odd")
    rows = np.asarray(mfcc_rows)[:, 1:6]
    if window > len(rows):
        raise ValueError(f"window {window} larger than the {len(rows)}-frame track")
    half = window // 2
    padded = np.pad(rows, ((half, half), (0, 0)), mode="edge")
    view = np.lib.stride_tricks.sliding_window_view(padded, window, axis=0)
    return view.var(axis=-1)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows):
        rows = np.asarray(rows, dtype=float)
        std = rows.std(axis=0)
        return cls(rows.mean(axis=0), np.where(std > 0, std, 1.0))

    def apply(self, rows):
        if rows.shape[1] != len(self.mean):
            raise ValueError(f"standardizer fit on {len(self.mean)} columns, got {rows.shape[1]}")
        return (rows - self.mean) / self.std


def assemble_features(clip, config=None, standardizer=None):
    cfg = config or FeatureConfig()
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"clip at {clip.sample_rate} Hz, features configured for {cfg.sample_rate} Hz")
    if clip.duration < 2.0:
        raise ValueError(f"need at least 2 s of audio, got {clip.duration:.2f} s")
    spec = stft_centered(clip, cfg.fft_size, cfg.hop)
    grid = log_resample(spec, cfg.bins_per_semitone, cfg.fmin, cfg.fmax)
    layout = BandLayout.overlapping(grid.shape[1], cfg.n_bands, cfg.band_overlap)
    bank, edges = mel_filterbank(cfg.n_mels, 0.0, cfg.sample_rate / 2, cfg.fft_size, cfg.sample_rate)
    cep = mfcc(mel_spectrogram(spec, bank, edges), cfg.n_mfcc)
    rows = np.hstack([
        fluctogram(grid, layout, cfg.max_lag),
        spectral_flatness(grid, layout),
        spectral_contraction(grid, layout),
        vocal_variance(cep, cfg.vv_window),
        cep,
        delta(cep, cfg.delta_span),
    ])
    assert rows.shape[1] == N_FEATURES
    if standardizer is not None:
        rows = standardizer.apply(rows)
    return FeatureMatrix(rows, spec.frame_rate)


def add_context(rows, mode="delta", frames=38, step=19):
    """Widen each row with temporal context.

    ``delta`` appends the least-squares slope of every column over
    ``2 * frames + 1`` frames; ``stack`` appends copies of the rows at offsets
    ``-frames, -frames + step, ..., +frames`` (edges replicated).
    """
    rows = np.asarray(rows, dtype=float)
    if mode == "none":
        return rows
    if mode == "delta":
        span = 2 * frames + 1
        if span > len(rows):
            span = len(rows) if len(rows) % 2 else len(rows) - 1
        if span < 3:
            return np.hstack([rows, np.zeros_like(rows)])
        return np.hstack([rows, delta(rows, span)])
    if mode == "stack":
        idx = np.arange(len(rows))
        parts = [rows[np.clip(idx + off, 0, len(rows) - 1)] for off in range(-frames, frames + 1, step)]
        return np.hstack(parts)
    raise ValueError(f"unknown context mode {mode!r}")

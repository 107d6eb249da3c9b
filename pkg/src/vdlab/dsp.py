"""Time-frequency kernels shared by all three detectors."""

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import ndimage, signal

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude grid, ``n_frames x n_bins``.

    ``phase`` keeps the complex STFT when the caller asked for it; it is only
    needed for resynthesis between HPSS stages.
    """

    magnitudes: np.ndarray
    frame_rate: float
    bin_hz: float
    phase: np.ndarray = None

    @property
    def n_frames(self):
        return self.magnitudes.shape[0]

    @property
    def n_bins(self):
        return self.magnitudes.shape[1]


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray
    frame_rate: float
    band_edges: np.ndarray

    @property
    def n_mels(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class BiquadCoeffs:
    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def poles(self):
        return np.roots([1.0, self.a1, self.a2])

    def is_stable(self):
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, freq, sample_rate):
        z = np.exp(-1j * 2 * np.pi * np.asarray(freq, dtype=float) / sample_rate)
        return (self.b0 + self.b1 * z + self.b2 * z * z) / (1 + self.a1 * z + self.a2 * z * z)


# ------------------------------------------------------------------------- STFT

def frame_signal(x, frame_size, hop):
    n = 1 + (len(x) - frame_size) // hop
    return np.lib.stride_tricks.as_strided(
        x, shape=(n, frame_size), strides=(x.strides[0] * hop, x.strides[0]), writeable=False)


def stft(clip, fft_size=1024, hop=315, window="hann", keep_phase=False):
    """Magnitude STFT; frame ``t`` covers samples ``[t*hop, t*hop + fft_size)``."""
    if fft_size <= 0 or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    if not 0 < hop <= fft_size:
        raise ValueError(f"hop must be in (0, fft_size], got {hop}")
    if window != "hann":
        raise ValueError(f"unsupported window {window!r}")
    x = np.ascontiguousarray(clip.samples, dtype=np.float64)
    if len(x) < fft_size:
        raise ValueError(f"clip of {len(x)} samples is shorter than one {fft_size}-sample frame")
    win = signal.get_window("hann", fft_size)
    spec = np.fft.rfft(frame_signal(x, fft_size, hop) * win, axis=1)
    mags = np.abs(spec)
    return Spectrogram(mags, clip.sample_rate / hop, clip.sample_rate / fft_size,
                       spec if keep_phase else None)


def stft_centered(clip, fft_size=1024, hop=315, keep_phase=False):
    """STFT on a zero-padded copy so that frame ``i`` is centered on sample ``(i + 0.5) * hop``.

    Gives ``len(clip) // hop`` frames regardless of ``fft_size``, which puts
    every analysis resolution on the same frame grid as
    :func:`vdlab.audio_io.labels_to_frames`.
    """
    from .audio_io import AudioClip

    n = len(clip) // hop
    if n < 1:
        raise ValueError(f"clip of {len(clip)} samples is shorter than one {hop}-sample hop")
    left = fft_size // 2 - hop // 2
    right = (n - 1) * hop + fft_size - left - len(clip)
    x = np.pad(clip.samples, (left, max(right, 0)))
    spec = stft(AudioClip(x, clip.sample_rate), fft_size, hop, keep_phase=keep_phase)
    if spec.n_frames != n:
        spec = Spectrogram(spec.magnitudes[:n], spec.frame_rate, spec.bin_hz,
                           None if spec.phase is None else spec.phase[:n])
    return spec


def n_frames_for(n_samples, fft_size, hop):
    return (n_samples - fft_size) // hop + 1


# -------------------------------------------------------------------------- mel

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(n_mels, fmin, fmax, fft_size, sample_rate):
    """Triangular filters with centers equally spaced in mel; ``n_mels x (fft_size//2 + 1)``.

    Returns ``(bank, edges_hz)``; edges has ``n_mels + 2`` entries.
    """
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise ValueError(f"need 0 <= fmin < fmax <= {sample_rate / 2}, got {fmin}, {fmax}")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (center - lo)
    falling = (hi - freqs) / (hi - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(bank.max(axis=1) <= 0)
    if len(empty):
        raise ValueError(f"{n_mels} mel bands too many for {fft_size}-point FFT: "
                         f"bands {empty.tolist()} contain no FFT bin")
    return bank, edges


def mel_spectrogram(spec, bank, edges=None, floor=LOG_FLOOR):
    """``10*log10(max(bank @ power, floor))`` per frame."""
    if bank.shape[1] != spec.n_bins:
        raise ValueError(f"filterbank has {bank.shape[1]} columns, spectrogram {spec.n_bins} bins")
    power = spec.magnitudes ** 2
    values = 10.0 * np.log10(np.maximum(power @ bank.T, floor))
    return MelSpectrogram(values, spec.frame_rate, edges if edges is not None else np.array([]))


def mfcc(mel, n_coeffs):
    """Orthonormal DCT-II of each mel frame, coefficients ``0..n_coeffs-1``."""
    values = mel.values if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    if n_coeffs > values.shape[1]:
        raise ValueError(f"n_coeffs {n_coeffs} exceeds {values.shape[1]} mel bands")
    return sfft.dct(values, type=2, norm="ortho", axis=1)[:, :n_coeffs]


def delta(rows, span=9):
    """Least-squares slope over a centered ``span``-frame window, edges replicated."""
    rows = np.asarray(rows, dtype=float)
    if span < 3 or span % 2 == 0:
        raise ValueError(f"delta span must be odd and >= 3, got {span}")
    if span > len(rows):
        raise ValueError(f"delta span {span} exceeds track length {len(rows)}")
    half = span // 2
    padded = np.pad(rows, [(half, half)] + [(0, 0)] * (rows.ndim - 1), mode="edge")
    taps = np.arange(-half, half + 1, dtype=float)
    out = np.zeros_like(rows)
    for k, w in zip(range(span), taps):
        if w:
            out += w * padded[k: k + len(rows)]
    return out / np.sum(taps ** 2)


# ------------------------------------------------------------------- smoothing

def median_filter_1d(values, window):
    if window < 1 or window % 2 == 0:
        raise ValueError(f"median window must be odd and >= 1, got {window}")
    values = np.asarray(values)
    if window == 1:
        return values.copy()
    half = window // 2
    padded = np.pad(values, half, mode="edge")
    return np.median(np.lib.stride_tricks.sliding_window_view(padded, window), axis=1).astype(values.dtype)


def median_filter_2d(grid, time_window, freq_window):
    """Median over a ``time_window x freq_window`` neighbourhood (rows are frames)."""
    for w in (time_window, freq_window):
        if w < 1 or w % 2 == 0:
            raise ValueError(f"median windows must be odd and >= 1, got {w}")
    # explicit edge padding: ndimage mishandles axes shorter than the window
    ht, hf = time_window // 2, freq_window // 2
    padded = np.pad(np.asarray(grid), ((ht, ht), (hf, hf)), mode="edge")
    out = ndimage.median_filter(padded, size=(time_window, freq_window), mode="nearest")
    return out[ht: ht + grid.shape[0], hf: hf + grid.shape[1]]


# ---------------------------------------------------------------------- biquads

def biquad_design(kind, freq, sample_rate, q=None, bandwidth=None):
    """RBJ-cookbook second-order sections with ``a0`` normalised to 1.

    ``bandpass_resonator`` has unit gain at ``freq``; give either ``q`` or
    ``bandwidth`` (Hz, taken as ``freq / q``).  ``lowpass`` has unit DC gain and
    defaults to a Butterworth ``q``.
    """
    if not 0 < freq < sample_rate / 2:
        raise ValueError(f"frequency {freq} Hz outside (0, {sample_rate / 2})")
    if bandwidth is not None:
        if bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        q = freq / bandwidth
    if q is None:
        q = 1 / np.sqrt(2)
    if q <= 0:
        raise ValueError("q must be positive")
    w0 = 2 * np.pi * freq / sample_rate
    alpha = np.sin(w0) / (2 * q)
    cw = np.cos(w0)
    if kind == "bandpass_resonator":
        b = (alpha, 0.0, -alpha)
    elif kind == "lowpass":
        b = ((1 - cw) / 2, 1 - cw, (1 - cw) / 2)
    else:
        raise ValueError(f"unknown biquad kind {kind!r}")
    a0 = 1 + alpha
    coeffs = BiquadCoeffs(b[0] / a0, b[1] / a0, b[2] / a0, -2 * cw / a0, (1 - alpha) / a0)
    if not coeffs.is_stable():
        raise ValueError(f"unstable biquad for {kind} at {freq} Hz, q={q}")
    return coeffs


def biquad_apply(coeffs, x):
    """Transposed direct-form II filtering (``scipy.signal.lfilter``)."""
    from .audio_io import AudioClip

    if isinstance(x, AudioClip):
        return AudioClip(biquad_apply(coeffs, x.samples), x.sample_rate)
    b = [coeffs.b0, coeffs.b1, coeffs.b2]
    a = [1.0, coeffs.a1, coeffs.a2]
    return signal.lfilter(b, a, np.asarray(x, dtype=float))


def onepole_lowpass(x, cutoff, sample_rate):
    """``y[n] = (1 - p) x[n] + p y[n-1]`` with ``p = exp(-2 pi fc / fs)``; unit DC gain."""
    p = np.exp(-2 * np.pi * cutoff / sample_rate)
    return signal.lfilter([1 - p], [1, -p], np.asarray(x, dtype=float))

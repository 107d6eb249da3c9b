"""Median-filtering harmonic/percussive separation and its double-stage wrapper.

A single stage smooths the magnitude grid along time (harmonic estimate) and
along frequency (percussive estimate) and turns the two into complementary
soft masks.  The double-stage variant runs one stage at fine frequency
resolution, where a voice with vibrato smears and ends up percussive,
resynthesizes that percussive part with its own phase, and separates it again
at coarse resolution, where the same voice looks like a steady partial.
"""

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .audio_io import AudioClip
from .dsp import Spectrogram, median_filter_2d, stft


@dataclass(frozen=True)
class HpssOutput:
    harmonic: Spectrogram
    percussive: Spectrogram
    mask: np.ndarray  # harmonic mask; the percussive one is 1 - mask


def soft_masks(harm_est, perc_est, power=2.0):
    """``H^p / (H^p + P^p)`` with ``0/0`` resolved to 0.5."""
    hp = np.power(harm_est, power)
    pp = np.power(perc_est, power)
    total = hp + pp
    with np.errstate(invalid="ignore", divide="ignore"):
        mask = np.where(total > 0, hp / np.where(total > 0, total, 1.0), 0.5)
    return mask


def hpss(spec, harm_window=17, perc_window=17, power=2.0):
    if harm_window % 2 == 0 or perc_window % 2 == 0:
        raise ValueError("hpss median windows must be odd")
    if power < 1:
        raise ValueError("mask exponent must be >= 1")
    mags = spec.magnitudes
    harm_est = median_filter_2d(mags, harm_window, 1)
    perc_est = median_filter_2d(mags, 1, perc_window)
    mask = soft_masks(harm_est, perc_est, power)

    def part(m):
        phase = None if spec.phase is None else spec.phase * m
        return Spectrogram(mags * m, spec.frame_rate, spec.bin_hz, phase)

    return HpssOutput(part(mask), part(1.0 - mask), mask)


def istft(complex_spec, fft_size, hop, length):
    """Weighted overlap-add inverse of :func:`vdlab.dsp.stft` (Hann analysis and synthesis)."""
    win = signal.get_window("hann", fft_size)
    frames = np.fft.irfft(complex_spec, n=fft_size, axis=1) * win
    n = (len(frames) - 1) * hop + fft_size
    out = np.zeros(max(n, length))
    norm = np.zeros_like(out)
    for t, frame in enumerate(frames):
        out[t * hop: t * hop + fft_size] += frame
        norm[t * hop: t * hop + fft_size] += win ** 2
    nz = norm > 1e-8
    out[nz] /= norm[nz]
    return out[:length]


@dataclass(frozen=True)
class StageConfig:
    fft_size: int
    hop: int
    harm_window: int = 17
    perc_window: int = 17
    power: float = 2.0


# Stage 1 must be short enough (93 ms) for a 6 Hz vibrato to move between
# frames and narrow in frequency so that the moving partials read as
# percussive; the steep mask keeps their energy from splitting.
STAGE1 = StageConfig(2048, 256, harm_window=17, perc_window=5, power=8.0)
STAGE2 = StageConfig(512, 117, harm_window=17, perc_window=17, power=2.0)


def _pad(clip, fft_size):
    # zero margins keep the overlap-add fully weighted over the original samples
    half = fft_size // 2
    return AudioClip(np.pad(clip.samples, (half, half + fft_size)), clip.sample_rate)


def _unpad(complex_spec, clip, stage):
    half = stage.fft_size // 2
    y = istft(complex_spec, stage.fft_size, stage.hop, len(clip) + half)
    return AudioClip(y[half:], clip.sample_rate)


def double_stage_hpss(clip, stage1=None, stage2=None, return_masks=False):
    """Return ``(h, p)``: the voice-enhanced and percussive stage-2 spectrograms.

    ``stage1`` must have the larger FFT.  With ``return_masks`` the two stage
    masks are returned as well so that the same separation can be replayed on
    individual stems (see :func:`apply_double_stage`).
    """
    stage1 = stage1 or STAGE1
    stage2 = stage2 or STAGE2
    if not stage1.fft_size > stage2.fft_size:
        raise ValueError("stage 1 needs the finer frequency resolution (larger FFT)")
    if len(clip) < stage1.fft_size:
        raise ValueError(f"clip of {len(clip)} samples is shorter than one stage-1 frame")

    s1 = stft(_pad(clip, stage1.fft_size), stage1.fft_size, stage1.hop, keep_phase=True)
    out1 = hpss(s1, stage1.harm_window, stage1.perc_window, stage1.power)
    voice = _unpad(out1.percussive.phase, clip, stage1)
    s2 = stft(voice, stage2.fft_size, stage2.hop, keep_phase=True)
    out2 = hpss(s2, stage2.harm_window, stage2.perc_window, stage2.power)
    if return_masks:
        return out2.harmonic, out2.percussive, (out1.mask, out2.mask)
    return out2.harmonic, out2.percussive


def apply_double_stage(clip, masks, stage1=None, stage2=None):
    """Push ``clip`` through fixed stage masks; linear in ``clip``.

    Used to project a mixture's separation onto its known stems.
    """
    stage1 = stage1 or STAGE1
    stage2 = stage2 or STAGE2
    m1, m2 = masks
    s1 = stft(_pad(clip, stage1.fft_size), stage1.fft_size, stage1.hop, keep_phase=True)
    voice = _unpad(s1.phase * (1.0 - m1), clip, stage1)
    s2 = stft(voice, stage2.fft_size, stage2.hop, keep_phase=True)
    return s2.phase * m2, s2.phase * (1.0 - m2)

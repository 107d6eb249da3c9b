"""Pieces shared by the three detectors: prediction tracks, the median
post-filter, class-balanced sampling and a momentum SGD step."""

from dataclasses import dataclass

import numpy as np

from ..dsp import median_filter_1d


@dataclass(frozen=True)
class PredictionTrack:
    frame_rate: float
    probabilities: np.ndarray
    labels: np.ndarray = None

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1:
            raise ValueError("probabilities must be 1-D")
        if not np.all((p >= 0) & (p <= 1)):
            raise ValueError("probabilities outside [0, 1]")
        labels = p >= 0.5 if self.labels is None else np.asarray(self.labels, dtype=bool)
        if len(labels) != len(p):
            raise ValueError(f"{len(labels)} labels for {len(p)} probabilities")
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.probabilities)

    def times(self):
        return (np.arange(len(self)) + 0.5) / self.frame_rate


def smoothing_window(smooth_ms, frame_rate):
    """Nearest odd frame count to ``smooth_ms * frame_rate / 1000``; ties round up."""
    x = smooth_ms * frame_rate / 1000.0
    lo = 2 * np.floor((x - 1) / 2) + 1
    w = lo + 2 if (x - lo) >= (lo + 2 - x) else lo
    return max(1, int(w))


def postprocess(track, threshold=0.5, smooth_ms=800.0):
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    raw = track.probabilities >= threshold
    w = smoothing_window(smooth_ms, track.frame_rate)
    labels = median_filter_1d(raw.astype(np.int8), w).astype(bool)
    return PredictionTrack(track.frame_rate, track.probabilities, labels)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def bce(p, y, eps=1e-12):
    p = np.clip(p, eps, 1 - eps)
    return -(y * np.log(p) + (1 - y) * np.log(1 - p))


def balanced_indices(labels, rng, cap=None):
    """All minority-class indices plus as many random majority ones, shuffled.

    ``cap`` bounds the per-class count.
    """
    labels = np.asarray(labels, dtype=bool)
    pos, neg = np.flatnonzero(labels), np.flatnonzero(~labels)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("need frames of both classes")
    k = min(len(pos), len(neg))
    if cap is not None:
        k = min(k, cap)
    pick = np.concatenate([rng.choice(pos, k, replace=False), rng.choice(neg, k, replace=False)])
    return pick[rng.permutation(len(pick))]


class Momentum:
    """Plain momentum SGD over a dict of arrays, updated in place."""

    def __init__(self, params, lr, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        for k, g in grads.items():
            v = self.velocity[k]
            v *= self.momentum
            v -= self.lr * g
            params[k] += v


def clip_by_norm(grads, max_norm):
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm

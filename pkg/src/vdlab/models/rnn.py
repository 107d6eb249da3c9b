"""Stacked bi-directional LSTM with a shared per-frame sigmoid output.

Sequences are ``(batch, time, features)`` with a ``(batch, time)`` mask; masked
steps keep zero state, so zero-padded tails do not leak into the backward
direction. Gate order in the weight matrices is input, forget, output, cell.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .common import Momentum, bce, clip_by_norm, sigmoid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RnnConfig:
    n_inputs: int = 80
    hidden: tuple = (30, 20, 40)
    window: int = 218

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.n_inputs < 1 or not self.hidden or min(self.hidden) < 1 or self.window < 1:
            raise ValueError(f"invalid rnn config {self}")


@dataclass(frozen=True)
class RnnTrainParams:
    epochs: int = 30
    batch: int = 8
    lr: float = 0.05
    momentum: float = 0.9
    decay_every: int = 10
    decay: float = 0.5
    clip: float = 5.0
    train_hop: int = 109            # window hop when cutting training sequences
    seed: int = 0


@dataclass
class RnnModel:
    config: RnnConfig
    params: dict

    def hyperparams(self):
        return {"config": asdict(self.config)}


def init_rnn(config, seed=0):
    rng = np.random.default_rng(seed)
    p = {}
    d = config.n_inputs
    for layer, h in enumerate(config.hidden):
        for direction in ("f", "b"):
            k = f"l{layer}{direction}"
            scale = 1.0 / np.sqrt(d + h)
            p[k + ".W"] = rng.uniform(-scale, scale, (d, 4 * h))
            p[k + ".U"] = rng.uniform(-scale, scale, (h, 4 * h))
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0   # forget-gate bias
            p[k + ".b"] = b
        d = 2 * h
    p["out.w"] = rng.uniform(-1, 1, d) / np.sqrt(d)
    p["out.b"] = np.zeros(1)
    return RnnModel(config, p)


def lstm_forward(x, mask, W, U, b, reverse=False):
    """One direction over ``x`` (B, T, D); returns hidden states (B, T, H) and a cache."""
    bsz, t_len, _ = x.shape
    h_size = U.shape[0]
    xw = x @ W + b
    h = np.zeros((bsz, h_size))
    c = np.zeros((bsz, h_size))
    hs = np.zeros((bsz, t_len, h_size))
    cache = []
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    for t in steps:
        z = xw[:, t] + h @ U
        i = sigmoid(z[:, :h_size])
        f = sigmoid(z[:, h_size:2 * h_size])
        o = sigmoid(z[:, 2 * h_size:3 * h_size])
        g = np.tanh(z[:, 3 * h_size:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        m = mask[:, t, None]
        cache.append((t, h, c, i, f, o, g, tc, m))
        c = m * c_new
        h = m * (o * tc)
        hs[:, t] = h
    return hs, cache


def lstm_backward(x, dhs, cache, W, U):
    """Gradients for one direction given dL/dh at every step."""
    bsz, t_len, _ = x.shape
    h_size = U.shape[0]
    dz_all = np.zeros((bsz, t_len, 4 * h_size))
    dU = np.zeros_like(U)
    dh_next = np.zeros((bsz, h_size))
    dc_next = np.zeros((bsz, h_size))
    for t, h_prev, c_prev, i, f, o, g, tc, m in reversed(cache):
        dh = (dhs[:, t] + dh_next) * m
        dc = dc_next * m + dh * o * (1 - tc ** 2)
        do = dh * tc
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g ** 2)], axis=1)
        dz_all[:, t] = dz
        dU += h_prev.T @ dz
        dh_next = dz @ U.T
        dc_next = dc * f
    dW = np.tensordot(x, dz_all, axes=([0, 1], [0, 1]))
    db = dz_all.sum(axis=(0, 1))
    dx = dz_all @ W.T
    return dx, dW, dU, db


def _forward(model, x, mask):
    p = model.params
    caches = []
    h = x
    for layer in range(len(model.config.hidden)):
        k = f"l{layer}"
        hf, cf = lstm_forward(h, mask, p[k + "f.W"], p[k + "f.U"], p[k + "f.b"])
        hb, cb = lstm_forward(h, mask, p[k + "b.W"], p[k + "b.U"], p[k + "b.b"], reverse=True)
        caches.append((h, cf, cb))
        h = np.concatenate([hf, hb], axis=2)
    logit = h @ p["out.w"] + p["out.b"][0]
    return logit, h, caches


def _check(model, x, mask):
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[2] != model.config.n_inputs:
        raise ValueError(f"expected (batch, time, {model.config.n_inputs}) input, got {x.shape}")
    mask = np.ones(x.shape[:2]) if mask is None else np.asarray(mask, dtype=float)
    if mask.shape != x.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match input {x.shape[:2]}")
    return x, mask


def rnn_forward(model, x, mask=None):
    """Per-frame vocal probabilities, shape (batch, time)."""
    x, mask = _check(model, x, mask)
    return sigmoid(_forward(model, x, mask)[0])


def rnn_loss_and_grads(model, x, y, mask=None):
    """Mean cross-entropy over unmasked frames and its gradients."""
    x, mask = _check(model, x, mask)
    p = model.params
    logit, top, caches = _forward(model, x, mask)
    prob = sigmoid(logit)
    n = mask.sum()
    if n == 0:
        raise ValueError("mask selects no frames")
    loss = float(np.sum(bce(prob, y) * mask) / n)
    g = {}
    dlogit = (prob - y) * mask / n
    g["out.w"] = np.tensordot(top, dlogit, axes=([0, 1], [0, 1]))
    g["out.b"] = np.array([dlogit.sum()])
    dh = dlogit[:, :, None] * p["out.w"][None, None, :]
    for layer in reversed(range(len(model.config.hidden))):
        k = f"l{layer}"
        h_in, cf, cb = caches[layer]
        hsz = model.config.hidden[layer]
        dxf, g[k + "f.W"], g[k + "f.U"], g[k + "f.b"] = lstm_backward(h_in, dh[:, :, :hsz], cf, p[k + "f.W"], p[k + "f.U"])
        dxb, g[k + "b.W"], g[k + "b.U"], g[k + "b.b"] = lstm_backward(h_in, dh[:, :, hsz:], cb, p[k + "b.W"], p[k + "b.U"])
        dh = dxf + dxb
    return loss, g


def cut_windows(n_frames, window, hop):
    """Start indices covering ``n_frames``; the last window may run past the end."""
    starts = list(range(0, max(1, n_frames - window + 1), hop))
    if starts[-1] + window < n_frames:
        starts.append(n_frames - window if n_frames >= window else 0)
    return starts


def _gather(track, labels, start, window):
    d = track.shape[1]
    x = np.zeros((window, d))
    y = np.zeros(window)
    m = np.zeros(window)
    seg = track[start: start + window]
    x[: len(seg)] = seg
    m[: len(seg)] = 1
    if labels is not None:
        y[: len(seg)] = labels[start: start + window]
    return x, y, m


def rnn_train(tracks, labels, config=None, params=None, init=None):
    """Momentum SGD with gradient-norm clipping on fixed-length windows.

    ``tracks`` are standardized (T, features) arrays; ``labels`` boolean per frame.
    """
    config = config or RnnConfig(n_inputs=tracks[0].shape[1])
    params = params or RnnTrainParams()
    model = init or init_rnn(config, params.seed)
    windows = [(ti, s) for ti, tr in enumerate(tracks) for s in cut_windows(len(tr), config.window, params.train_hop)]
    if not windows:
        raise ValueError("no training windows")
    rng = np.random.default_rng([params.seed, 2])
    opt = Momentum(model.params, params.lr, params.momentum)
    it = 0
    for epoch in range(params.epochs):
        opt.lr = params.lr * params.decay ** (epoch // max(1, params.decay_every))
        order = rng.permutation(len(windows))
        losses = []
        for s in range(0, len(order), params.batch):
            batch = [_gather(tracks[windows[j][0]], np.asarray(labels[windows[j][0]], dtype=float),
                             windows[j][1], config.window) for j in order[s: s + params.batch]]
            xb, yb, mb = (np.stack(a) for a in zip(*batch))
            loss, grads = rnn_loss_and_grads(model, xb, yb, mb)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at iteration {it}")
            clip_by_norm(grads, params.clip)
            opt.step(model.params, grads)
            losses.append(loss)
            it += 1
        log.info("rnn epoch %d lr %.4g loss %.4f", epoch, opt.lr, float(np.mean(losses)))
    return model


def rnn_predict_track(model, track, hop=None):
    """Per-frame probabilities for a (T, features) track.

    Windows of ``config.window`` frames are cut every ``hop`` frames (default a
    quarter window) and overlapping outputs are averaged.
    """
    cfg = model.config
    hop = hop or max(1, cfg.window // 4)
    n = len(track)
    acc = np.zeros(n)
    cnt = np.zeros(n)
    starts = cut_windows(n, cfg.window, hop)
    for s in range(0, len(starts), 16):
        batch = [_gather(track, None, st, cfg.window) for st in starts[s: s + 16]]
        xb, _, mb = (np.stack(a) for a in zip(*batch))
        prob = rnn_forward(model, xb, mb)
        for st, pr in zip(starts[s: s + 16], prob):
            seg = slice(st, min(n, st + cfg.window))
            acc[seg] += pr[: seg.stop - seg.start]
            cnt[seg] += 1
    return acc / cnt

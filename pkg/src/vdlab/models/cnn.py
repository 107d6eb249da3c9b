"""Small convolutional detector on mel-spectrogram excerpts.

Valid 3x3 convolutions with ReLU, non-overlapping max-pooling after the
configured layers, then a ReLU dense layer and one sigmoid unit. Tensors are
``(batch, channels, mels, frames)``.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .common import Momentum, balanced_indices, bce, sigmoid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CnnConfig:
    n_mels: int = 80
    n_frames: int = 115
    channels: tuple = (32, 32, 64, 64)
    pool_after: tuple = (1, 3)      # zero-based conv indices followed by pooling
    pool: int = 3
    dense: int = 128

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "pool_after", tuple(int(i) for i in self.pool_after))
        self.shapes()

    def shapes(self):
        """(mels, frames) after every conv / pool, starting with the input."""
        h, w = self.n_mels, self.n_frames
        out = [(h, w)]
        for i in range(len(self.channels)):
            h, w = h - 2, w - 2
            out.append((h, w))
            if i in self.pool_after:
                h, w = h // self.pool, w // self.pool
                out.append((h, w))
            if h < 1 or w < 1:
                raise ValueError(f"input {self.n_mels}x{self.n_frames} too small for the conv stack")
        return out

    @property
    def flat_size(self):
        h, w = self.shapes()[-1]
        return h * w * self.channels[-1]


@dataclass(frozen=True)
class CnnTrainParams:
    epochs: int = 10
    batch: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    decay_every: int = 4            # epochs between learning-rate steps
    decay: float = 0.5
    per_class_cap: int = 0          # 0 = every minority frame each epoch
    seed: int = 0


@dataclass
class CnnModel:
    config: CnnConfig
    params: dict

    def hyperparams(self):
        return {"config": asdict(self.config)}


def init_cnn(config, seed=0):
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    p = {}
    c_in = 1
    for i, c in enumerate(config.channels):
        p[f"conv{i}.w"] = rng.standard_normal((c, c_in, 3, 3)) * np.sqrt(2.0 / (9 * c_in))
        p[f"conv{i}.b"] = np.zeros(c)
        c_in = c
    p["dense.w"] = rng.standard_normal((config.flat_size, config.dense)) * np.sqrt(2.0 / config.flat_size)
    p["dense.b"] = np.zeros(config.dense)
    p["out.w"] = rng.standard_normal(config.dense) * np.sqrt(1.0 / config.dense)
    p["out.b"] = np.zeros(1)
    return CnnModel(config, p)


def conv_forward(x, w, b):
    # x (B, C, H, W), w (O, C, 3, 3) -> (B, O, H-2, W-2); one matmul per kernel tap
    h, wd = x.shape[2] - 2, x.shape[3] - 2
    out = np.zeros((w.shape[0], x.shape[0], h, wd))
    for i in range(3):
        for j in range(3):
            out += np.tensordot(w[:, :, i, j], x[:, :, i:i + h, j:j + wd], axes=([1], [1]))
    return out.transpose(1, 0, 2, 3) + b[None, :, None, None]


def conv_backward(x, w, dout):
    h, wd = dout.shape[2], dout.shape[3]
    dw = np.empty_like(w)
    dx = np.zeros((x.shape[1], x.shape[0], x.shape[2], x.shape[3]))
    for i in range(3):
        for j in range(3):
            dw[:, :, i, j] = np.tensordot(dout, x[:, :, i:i + h, j:j + wd], axes=([0, 2, 3], [0, 2, 3]))
            dx[:, :, i:i + h, j:j + wd] += np.tensordot(w[:, :, i, j], dout, axes=([0], [1]))
    return dx.transpose(1, 0, 2, 3), dw, dout.sum(axis=(0, 2, 3))


def pool_forward(x, k):
    b, c, h, w = x.shape
    ho, wo = h // k, w // k
    blocks = x[:, :, :ho * k, :wo * k].reshape(b, c, ho, k, wo, k)
    out = blocks.max(axis=(3, 5))
    # first maximum of each block takes the gradient
    flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    return out, arg


def pool_backward(dout, arg, shape, k):
    b, c, h, w = shape
    ho, wo = dout.shape[2], dout.shape[3]
    flat = np.zeros((b, c, ho, wo, k * k))
    np.put_along_axis(flat, arg[..., None], dout[..., None], axis=-1)
    blocks = flat.reshape(b, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * k, wo * k)
    dx = np.zeros(shape)
    dx[:, :, :ho * k, :wo * k] = blocks
    return dx


def _forward(model, x):
    cfg, p = model.config, model.params
    cache = []
    h = x[:, None] if x.ndim == 3 else x
    for i in range(len(cfg.channels)):
        z = conv_forward(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
        a = np.maximum(z, 0)
        cache.append(("conv", i, h, z))
        h = a
        if i in cfg.pool_after:
            out, arg = pool_forward(h, cfg.pool)
            cache.append(("pool", i, h.shape, arg))
            h = out
    flat = h.reshape(len(h), -1)
    zd = flat @ p["dense.w"] + p["dense.b"]
    ad = np.maximum(zd, 0)
    logit = ad @ p["out.w"] + p["out.b"][0]
    return logit, (cache, h.shape, flat, zd, ad)


def cnn_forward(model, x):
    """Vocal probability for each window in ``x`` (``(B, mels, frames)`` or one ``(mels, frames)``)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1:] != (model.config.n_mels, model.config.n_frames):
        raise ValueError(f"expected windows of {model.config.n_mels}x{model.config.n_frames}, got {x.shape[1:]}")
    p = sigmoid(_forward(model, x)[0])
    return float(p[0]) if single else p


def cnn_loss_and_grads(model, x, y):
    """Mean binary cross-entropy over the batch and its gradient for every parameter."""
    p = model.params
    logit, (cache, pooled_shape, flat, zd, ad) = _forward(model, x)
    prob = sigmoid(logit)
    loss = float(np.mean(bce(prob, y)))
    g = {}
    dlogit = (prob - y) / len(y)
    g["out.w"] = ad.T @ dlogit
    g["out.b"] = np.array([dlogit.sum()])
    dad = np.outer(dlogit, p["out.w"])
    dzd = dad * (zd > 0)
    g["dense.w"] = flat.T @ dzd
    g["dense.b"] = dzd.sum(axis=0)
    dh = (dzd @ p["dense.w"].T).reshape(pooled_shape)
    for kind, i, a, b in reversed(cache):
        if kind == "pool":
            dh = pool_backward(dh, b, a, model.config.pool)
        else:
            dz = dh * (b > 0)
            dh, g[f"conv{i}.w"], g[f"conv{i}.b"] = conv_backward(a, p[f"conv{i}.w"], dz)
    return loss, g


def window_batch(tracks, refs, n_frames):
    """Stack ``n_frames`` windows centred on ``refs`` = (track, frame) pairs; tracks are (mels, T), zero-padded."""
    half = n_frames // 2
    out = np.zeros((len(refs), tracks[0].shape[0], n_frames))
    for j, (t, c) in enumerate(refs):
        m = tracks[t]
        lo, hi = c - half, c - half + n_frames
        a, b = max(lo, 0), min(hi, m.shape[1])
        out[j, :, a - lo: b - lo] = m[:, a:b]
    return out


def cnn_train(tracks, labels, config=None, params=None, init=None):
    """Mini-batch momentum SGD on class-balanced centre-frame windows.

    ``tracks`` are standardized (mels, T) arrays, ``labels`` the matching boolean
    frame labels. Deterministic given ``params.seed``.
    """
    config = config or CnnConfig(n_mels=tracks[0].shape[0])
    params = params or CnnTrainParams()
    model = init or init_cnn(config, params.seed)
    refs = np.array([(t, c) for t, lab in enumerate(labels) for c in range(len(lab))])
    y_all = np.concatenate([np.asarray(lab, dtype=bool) for lab in labels])
    if len(refs) == 0:
        raise ValueError("no training frames")
    rng = np.random.default_rng([params.seed, 1])
    opt = Momentum(model.params, params.lr, params.momentum)
    it = 0
    for epoch in range(params.epochs):
        opt.lr = params.lr * params.decay ** (epoch // max(1, params.decay_every))
        order = balanced_indices(y_all, rng, params.per_class_cap or None)
        losses = []
        for s in range(0, len(order), params.batch):
            idx = order[s: s + params.batch]
            xb = window_batch(tracks, refs[idx], config.n_frames)
            loss, grads = cnn_loss_and_grads(model, xb, y_all[idx].astype(float))
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at iteration {it}")
            opt.step(model.params, grads)
            losses.append(loss)
            it += 1
        log.info("cnn epoch %d lr %.4g loss %.4f", epoch, opt.lr, float(np.mean(losses)))
    return model


def _dense_head(model, flat):
    p = model.params
    return sigmoid(np.maximum(flat @ p["dense.w"] + p["dense.b"], 0) @ p["out.w"] + p["out.b"][0])


def cnn_predict_track(model, track):
    """Probability for every frame of a (mels, T) track, each frame at its window's centre.

    Equivalent to running :func:`cnn_forward` on every zero-padded window, but
    the convolutions run once over the whole track; each pooling layer is
    evaluated at all of its phase offsets and a window reads the branch
    matching its start position.
    """
    cfg, p = model.config, model.params
    track = np.asarray(track, dtype=float)
    if track.shape[0] != cfg.n_mels:
        raise ValueError(f"expected {cfg.n_mels} mel bands, got {track.shape[0]}")
    n = track.shape[1]
    half = cfg.n_frames // 2
    padded = np.zeros((cfg.n_mels, n + cfg.n_frames - 1))
    padded[:, half: half + n] = track
    branches = {(): padded[None, None]}
    for i in range(len(cfg.channels)):
        branches = {k: np.maximum(conv_forward(v, p[f"conv{i}.w"], p[f"conv{i}.b"]), 0)
                    for k, v in branches.items()}
        if i in cfg.pool_after:
            branches = {k + (ph,): pool_forward(v[..., ph:], cfg.pool)[0]
                        for k, v in branches.items() for ph in range(cfg.pool)}
    width = cfg.shapes()[-1][1]
    # route each window start to its branch and offset
    pos = np.arange(n)
    keys = [()] * n
    for _ in cfg.pool_after:
        ph = pos % cfg.pool
        keys = [k + (int(f),) for k, f in zip(keys, ph)]
        pos = (pos - ph) // cfg.pool
    out = np.empty(n)
    groups = {}
    for j, k in enumerate(keys):
        groups.setdefault(k, []).append(j)
    for k, idx in groups.items():
        fmap = branches[k][0]                       # C, H, W
        idx = np.array(idx)
        cols = pos[idx][:, None] + np.arange(width)[None, :]
        feats = fmap[:, :, cols].transpose(2, 0, 1, 3).reshape(len(idx), -1)
        out[idx] = _dense_head(model, feats)
    return out

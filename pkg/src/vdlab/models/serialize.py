"""Versioned binary model container.

Layout (little-endian)::

    magic b"VDMD" | u16 version | u16 len + kind (utf-8) | u32 len + hyperparams JSON
    u32 n_blobs, then per blob: u16 len + name | u8 ndim | ndim x u64 shape | float64 data
"""

import json
import struct
from dataclasses import asdict

import numpy as np

from .cnn import CnnConfig, CnnModel
from .forest import ForestModel, ForestParams, Tree
from .rnn import RnnConfig, RnnModel

MAGIC = b"VDMD"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _pack_str(s, fmt):
    b = s.encode("utf-8")
    return struct.pack(fmt, len(b)) + b


def write_container(path, kind, hyperparams, blobs):
    parts = [MAGIC, struct.pack("<H", VERSION), _pack_str(kind, "<H"),
             _pack_str(json.dumps(hyperparams, sort_keys=True), "<I"), struct.pack("<I", len(blobs))]
    for name in sorted(blobs):
        a = np.ascontiguousarray(blobs[name], dtype="<f8")
        parts.append(_pack_str(name, "<H"))
        parts.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_container(path):
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ModelFormatError(f"{path}: truncated model file")
        out = data[pos: pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise ModelFormatError(f"{path}: not a model file")
    (version,) = struct.unpack("<H", take(2))
    if version != VERSION:
        raise ModelFormatError(f"{path}: container version {version}, expected {VERSION}")
    (n,) = struct.unpack("<H", take(2))
    kind = take(n).decode("utf-8")
    (n,) = struct.unpack("<I", take(4))
    hyper = json.loads(take(n).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    blobs = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        name = take(n).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        blobs[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).copy()
    if pos != len(data):
        raise ModelFormatError(f"{path}: trailing bytes after last blob")
    return kind, hyper, blobs


def _forest_blobs(model):
    sizes = np.array([t.n_nodes for t in model.trees], dtype=float)
    cat = lambda attr: np.concatenate([getattr(t, attr) for t in model.trees]).astype(float)
    return {"tree_sizes": sizes, "feature": cat("feature"), "threshold": cat("threshold"),
            "left": cat("left"), "right": cat("right"), "value": cat("value")}


def save_model(path, model, extra=None, extra_blobs=None):
    """Write any of the three detectors; ``extra`` (JSON) and ``extra_blobs`` ride along."""
    if isinstance(model, ForestModel):
        kind, hyper = "forest", {"params": asdict(model.params), "n_features": model.n_features}
        blobs = _forest_blobs(model)
    elif isinstance(model, CnnModel):
        kind, hyper, blobs = "cnn", model.hyperparams(), dict(model.params)
    elif isinstance(model, RnnModel):
        kind, hyper, blobs = "rnn", model.hyperparams(), dict(model.params)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    hyper = dict(hyper, extra=extra or {})
    for k, v in (extra_blobs or {}).items():
        blobs["extra/" + k] = v
    write_container(path, kind, hyper, blobs)


def load_model(path):
    """Returns ``(model, extra, extra_blobs)``."""
    kind, hyper, blobs = read_container(path)
    extra_blobs = {k[6:]: v for k, v in blobs.items() if k.startswith("extra/")}
    blobs = {k: v for k, v in blobs.items() if not k.startswith("extra/")}
    if kind == "forest":
        sizes = blobs["tree_sizes"].astype(int)
        edges = np.concatenate([[0], np.cumsum(sizes)])
        trees = []
        for a, b in zip(edges[:-1], edges[1:]):
            trees.append(Tree(blobs["feature"][a:b].astype(np.int64), blobs["threshold"][a:b],
                              blobs["left"][a:b].astype(np.int64), blobs["right"][a:b].astype(np.int64),
                              blobs["value"][a:b]))
        model = ForestModel(trees, int(hyper["n_features"]), ForestParams(**hyper["params"]))
    elif kind == "cnn":
        model = CnnModel(CnnConfig(**hyper["config"]), blobs)
    elif kind == "rnn":
        model = RnnModel(RnnConfig(**hyper["config"]), blobs)
    else:
        raise ModelFormatError(f"{path}: unknown model kind {kind!r}")
    return model, hyper.get("extra", {}), extra_blobs

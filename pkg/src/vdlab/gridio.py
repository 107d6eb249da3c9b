"""On-disk formats for frame-by-column grids (spectrograms, features).

Binary layout, little-endian::

    magic   4 bytes  b"VDGR"
    n_rows  uint32
    n_cols  uint32
    frame_rate float64
    data    n_rows * n_cols float32, row-major
"""

import csv
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VDGR"
_HEADER = struct.Struct("<4sIId")


def write_grid(path, grid, frame_rate):
    grid = np.asarray(grid, dtype="<f4")
    if grid.ndim != 2:
        raise ValueError("grid must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, grid.shape[0], grid.shape[1], float(frame_rate)))
        fh.write(np.ascontiguousarray(grid).tobytes())


def read_grid(path):
    """Return ``(grid float32, frame_rate)``."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated grid header")
    magic, rows, cols, frame_rate = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = data[_HEADER.size:]
    if len(body) != rows * cols * 4:
        raise ValueError(f"{path}: expected {rows * cols} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).copy(), frame_rate


def write_grid_csv(path, grid, frame_rate, columns=None):
    grid = np.asarray(grid)
    columns = columns or [f"c{j}" for j in range(grid.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s"] + list(columns))
        for i, row in enumerate(grid):
            w.writerow([f"{i / frame_rate:.6f}"] + [f"{v:.7g}" for v in row])


def write_descriptor(path, slices):
    """Sidecar naming column slices: one ``name start stop`` line per block."""
    with open(path, "w", encoding="utf-8") as fh:
        for name, (start, stop) in slices.items():
            fh.write(f"{name} {start} {stop}\n")


def read_descriptor(path):
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            name, start, stop = line.split()
            out[name] = (int(start), int(stop))
    return out

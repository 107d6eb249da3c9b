"""Audio and annotation IO.

WAV files are parsed directly from their RIFF chunks so that the three failure
modes (missing file, malformed header, unsupported encoding) surface as
distinct exceptions.  Annotation intervals are half-open ``[start, end)``.
"""

import csv
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal


class WavFormatError(ValueError):
    """The file is not a well-formed RIFF/WAVE container."""


class UnsupportedEncodingError(ValueError):
    """The WAVE container holds an encoding other than PCM16 or float32."""


class AnnotationError(ValueError):
    """Bad annotation content; carries the offending line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("AudioClip holds mono samples only")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


VOCAL = "vocal"
NONVOCAL = "nonvocal"


@dataclass(frozen=True)
class Interval:
    start: float
    end: float
    label: str


@dataclass(frozen=True)
class LabelTrack:
    intervals: tuple = field(default_factory=tuple)

    def __post_init__(self):
        prev_end = 0.0
        for iv in self.intervals:
            if not 0 <= iv.start < iv.end:
                raise AnnotationError(f"bad interval [{iv.start}, {iv.end})")
            if iv.start < prev_end:
                raise AnnotationError(f"interval at {iv.start} overlaps its predecessor")
            if iv.label not in (VOCAL, NONVOCAL):
                raise AnnotationError(f"unknown label {iv.label!r}")
            prev_end = iv.end

    def vocal_intervals(self):
        return [(iv.start, iv.end) for iv in self.intervals if iv.label == VOCAL]


@dataclass(frozen=True)
class FrameLabels:
    frame_rate: float
    labels: np.ndarray

    def __post_init__(self):
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=bool))

    def __len__(self):
        return len(self.labels)


# --------------------------------------------------------------------------- WAV

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def _iter_chunks(data):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8: pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"chunk {cid!r} truncated")
        yield cid, body
        pos += 8 + size + (size & 1)


def read_wav(path):
    """Read a PCM16 or float32 WAV file as a mono :class:`AudioClip`.

    Stereo input is downmixed by the channel mean; 16-bit samples are scaled by
    1/32768 (the type's maximum magnitude).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such audio file: {path}")
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: missing RIFF/WAVE header")

    fmt = None
    payload = None
    for cid, body in _iter_chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: short fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE and len(body) >= 26:
                sub = struct.unpack_from("<H", body, 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            payload = body
    if fmt is None or payload is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedEncodingError(f"{path}: {channels} channels (expected 1 or 2)")
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        x = np.frombuffer(payload[: len(payload) // 2 * 2], dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        x = np.frombuffer(payload[: len(payload) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"{path}: format tag {tag} with {bits} bits")
    if rate <= 0:
        raise WavFormatError(f"{path}: sample rate {rate}")

    n = len(x) // channels
    if n == 0:
        raise WavFormatError(f"{path}: no samples")
    x = x[: n * channels].reshape(n, channels).mean(axis=1)
    return AudioClip(x, rate)


def write_wav(path, clip, encoding="pcm16"):
    """Write a mono clip as PCM16 (clipped to [-1, 1)) or float32."""
    x = clip.samples
    if encoding == "pcm16":
        q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        tag, bits = _WAVE_FORMAT_PCM, 16
    elif encoding == "float32":
        q = x.astype("<f4")
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise UnsupportedEncodingError(f"cannot write encoding {encoding!r}")
    payload = q.tobytes()
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, clip.sample_rate, clip.sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def resample(clip, target_rate, quality=8.6):
    """Band-limited rate conversion with a Kaiser-windowed sinc.

    ``quality`` is the Kaiser beta; larger values trade a wider transition band
    for more stop-band rejection.
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    ratio = Fraction(target_rate, clip.sample_rate)
    y = signal.resample_poly(clip.samples, ratio.numerator, ratio.denominator,
                             window=("kaiser", quality))
    n_out = int(np.ceil(len(clip.samples) * target_rate / clip.sample_rate))
    return AudioClip(y[:n_out], target_rate)


# ------------------------------------------------------------------ annotations

def _merge(intervals):
    """Sort, reject overlaps, merge touching same-label intervals.

    ``intervals`` holds ``(start, end, label, line)`` tuples.
    """
    intervals = sorted(intervals, key=lambda iv: (iv[0], iv[1]))
    out = []
    for start, end, label, line in intervals:
        if out and start < out[-1][1]:
            raise AnnotationError(f"interval [{start}, {end}) overlaps previous one", line)
        if out and out[-1][2] == label and out[-1][1] == start:
            out[-1][1] = end
        else:
            out.append([start, end, label])
    return LabelTrack(tuple(Interval(s, e, lab) for s, e, lab in out))


def parse_lab(path, vocal_aliases=("sing",)):
    """Parse a ``start end label`` annotation file (Jamendo style)."""
    aliases = set(vocal_aliases)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise AnnotationError("expected 'start end label'", lineno)
            try:
                start, end = float(parts[0]), float(parts[1])
            except ValueError:
                raise AnnotationError(f"non-numeric bounds {parts[0]!r} {parts[1]!r}", lineno) from None
            if not 0 <= start < end:
                raise AnnotationError(f"start {start} not before end {end}", lineno)
            label = VOCAL if parts[2] in aliases else NONVOCAL
            rows.append((start, end, label, lineno))
    return _merge(rows)


def read_activations_csv(path):
    """Read an ``instrument,start,end`` CSV (header row required)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["instrument", "start", "end"]:
            raise AnnotationError("expected header 'instrument,start,end'", 1)
        for lineno, row in enumerate(reader, 2):
            if not row or not "".join(row).strip():
                continue
            try:
                out.append((row[0].strip(), float(row[1]), float(row[2])))
            except (ValueError, IndexError):
                raise AnnotationError(f"malformed row {row!r}", lineno) from None
    return out


def activations_to_labels(activations, vocal_instruments):
    """Union of the vocal instruments' activity as a :class:`LabelTrack`.

    Everything outside the union is nonvocal (left implicit as gaps).
    """
    vocal_instruments = set(vocal_instruments)
    spans = []
    for i, (name, start, end) in enumerate(activations, 1):
        if not 0 <= start < end:
            raise AnnotationError(f"start {start} not before end {end}", i)
        if name in vocal_instruments:
            spans.append((start, end))
    spans.sort()
    merged = []
    for start, end in spans:
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return LabelTrack(tuple(Interval(s, e, VOCAL) for s, e in merged))


def labels_to_frames(track, frame_rate, n_frames):
    """Frame ``i`` is vocal iff its center ``(i + 0.5) / frame_rate`` is in a vocal interval."""
    if not frame_rate > 0:
        raise ValueError("frame_rate must be positive")
    if int(n_frames) <= 0:
        raise ValueError("n_frames must be positive")
    centers = (np.arange(int(n_frames)) + 0.5) / frame_rate
    labels = np.zeros(int(n_frames), dtype=bool)
    for start, end in track.vocal_intervals():
        labels |= (centers >= start) & (centers < end)
    return FrameLabels(frame_rate, labels)


def frames_to_track(labels, frame_rate):
    """Inverse of :func:`labels_to_frames` at frame resolution (runs of vocal frames)."""
    labels = np.asarray(labels, dtype=bool)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], labels.astype(np.int8), [0]])))
    ivs = [Interval(s / frame_rate, e / frame_rate, VOCAL) for s, e in zip(edges[::2], edges[1::2])]
    return LabelTrack(tuple(ivs))


def write_lab(path, track, vocal_label="sing", nonvocal_label="nosing"):
    with open(path, "w", encoding="utf-8") as fh:
        for iv in track.intervals:
            name = vocal_label if iv.label == VOCAL else nonvocal_label
            fh.write(f"{iv.start:.6f} {iv.end:.6f} {name}\n")

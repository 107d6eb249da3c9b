"""Local dataset directories: a ``manifest.csv`` or plain ``*.wav`` + ``*.lab`` pairs."""

import csv
from dataclasses import dataclass
from pathlib import Path

from .audio_io import parse_lab, read_wav, resample


@dataclass(frozen=True)
class Item:
    name: str
    audio: Path
    labels: Path = None
    vocal: Path = None
    instrumental: Path = None


def load_dataset(path, need_labels=False, need_stems=False):
    """Items sorted by name.

    A ``manifest.csv`` needs ``name`` and ``mix`` (or ``audio``) columns;
    ``labels``, ``vocal`` and ``instrumental`` are optional, relative to the
    directory. Without a manifest every ``X.wav`` is an item, labelled by
    ``X.lab`` when present.
    """
    root = Path(path)
    if root.is_file():
        lab = root.with_suffix(".lab")
        items = [Item(root.stem, root, lab if lab.is_file() else None)]
    elif (root / "manifest.csv").is_file():
        items = _from_manifest(root)
    elif root.is_dir():
        items = []
        for wav in sorted(root.glob("*.wav")):
            lab = wav.with_suffix(".lab")
            items.append(Item(wav.stem, wav, lab if lab.is_file() else None))
    else:
        raise FileNotFoundError(f"dataset {root} does not exist")
    if not items:
        raise ValueError(f"dataset {root} holds no audio")
    names = [it.name for it in items]
    if len(set(names)) != len(names):
        raise ValueError(f"dataset {root} repeats item names")
    for it in items:
        if need_labels and it.labels is None:
            raise ValueError(f"item {it.name!r} has no label file")
        if need_stems and (it.vocal is None or it.instrumental is None):
            raise ValueError(f"item {it.name!r} lacks vocal/instrumental stems")
        for p in (it.audio, it.labels, it.vocal, it.instrumental):
            if p is not None and not p.is_file():
                raise FileNotFoundError(f"item {it.name!r}: missing file {p}")
    return sorted(items, key=lambda it: it.name)


def _from_manifest(root):
    with open(root / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        audio = r.get("mix") or r.get("audio") or r.get("filename")
        if not audio:
            raise ValueError(f"{root / 'manifest.csv'}: rows need a mix, audio or filename column")
        opt = lambda k: root / r[k] if r.get(k) else None
        name = r.get("name") or Path(audio).stem
        out.append(Item(name, root / audio, opt("labels"), opt("vocal"), opt("instrumental")))
    return out


def load_audio(path, sample_rate):
    clip = read_wav(path)
    return resample(clip, sample_rate) if clip.sample_rate != sample_rate else clip


def load_labels(item):
    return parse_lab(item.labels)

"""Experiment configuration: INI files with one section per component, plus overrides."""

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .pipelines import PIPELINES, CnnPipelineConfig, FePipelineConfig, PostConfig, RnnPipelineConfig
from .stressgen import SNR_LEVELS_DB


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class VibratoGridConfig:
    duration: float = 3.0
    sample_rate: int = 22050
    cutoff: float = 5000.0
    formant_table: str = ""         # INI with [a]..[u] sections; empty = built-in table


@dataclass(frozen=True)
class SnrConfig:
    levels: tuple = SNR_LEVELS_DB
    excerpt_seconds: float = 30.0   # 0 keeps whole stems


@dataclass(frozen=True)
class CorpusGenConfig:
    n_tracks: int = 40
    sample_rate: int = 22050
    duration: float = 20.0


@dataclass(frozen=True)
class ExperimentConfig:
    pipeline: str = "fe"
    seed: int = 0
    out: str = "runs"
    train_data: str = ""            # dataset directory (manifest.csv or wav + lab pairs)
    test_data: str = ""
    fe: FePipelineConfig = field(default_factory=FePipelineConfig)
    cnn: CnnPipelineConfig = field(default_factory=CnnPipelineConfig)
    rnn: RnnPipelineConfig = field(default_factory=RnnPipelineConfig)
    post: PostConfig = field(default_factory=PostConfig)
    vibrato: VibratoGridConfig = field(default_factory=VibratoGridConfig)
    snr: SnrConfig = field(default_factory=SnrConfig)
    corpus: CorpusGenConfig = field(default_factory=CorpusGenConfig)

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {', '.join(PIPELINES)}, got {self.pipeline!r}")

    def pipeline_config(self, pipeline=None):
        """The chosen pipeline's config with the experiment seed pushed into every model seed."""
        p = pipeline or self.pipeline
        cfg = getattr(self, p)
        if p == "fe":
            return replace(cfg, forest=replace(cfg.forest, seed=self.seed))
        return replace(cfg, train=replace(cfg.train, seed=self.seed))

    def as_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        blob = json.dumps(self.as_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()


# section name -> path of attribute names from the root config
SECTIONS = {
    "experiment": (),
    "features": ("fe", "features"),
    "forest": ("fe", "forest"),
    "cnn": ("cnn",),
    "cnn.model": ("cnn", "cnn"),
    "cnn.train": ("cnn", "train"),
    "rnn": ("rnn",),
    "rnn.model": ("rnn", "rnn"),
    "rnn.train": ("rnn", "train"),
    "post": ("post",),
    "vibrato": ("vibrato",),
    "snr": ("snr",),
    "corpus": ("corpus",),
}


def _coerce(raw, default, where):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(_element(p.strip(), kind) for p in raw.split(",") if p.strip())
        if default is None or isinstance(default, str):
            return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {type(default).__name__}") from None
    raise ConfigError(f"{where}: unsupported value type {type(default).__name__}")


def _element(p, kind):
    if kind is str:
        return p
    v = float(p)
    return int(v) if kind is int and v.is_integer() else v


def _set(obj, path, key, raw, where):
    if path:
        child = _set(getattr(obj, path[0]), path[1:], key, raw, where)
        try:
            return replace(obj, **{path[0]: child})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{where}: {e}") from None
    names = {f.name for f in fields(obj) if not dataclasses.is_dataclass(getattr(obj, f.name))}
    if key not in names:
        raise ConfigError(f"{where}: unknown key {key!r} (expected one of {', '.join(sorted(names))})")
    value = _coerce(raw, getattr(obj, key), where)
    changes = {key: value}
    if isinstance(obj, RnnPipelineConfig) and key == "n_mels":
        # the model input width follows the mel count
        changes["rnn"] = replace(obj.rnn, n_inputs=2 * value)
    try:
        return replace(obj, **changes)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def apply_override(cfg, dotted, raw):
    """``dotted`` is ``section.key`` (e.g. ``cnn.train.epochs``) or a bare experiment key."""
    section, _, key = dotted.rpartition(".")
    section = section or "experiment"
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section [{section}]")
    return _set(cfg, SECTIONS[section], key, raw, f"[{section}] {key}")


def load_config(path=None, overrides=()):
    """Defaults, then the INI file, then ``overrides`` (``(dotted key, raw value)`` pairs)."""
    cfg = ExperimentConfig()
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read(path)
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from None
        base = path.parent
        for section in cp.sections():
            if section not in SECTIONS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in cp[section].items():
                try:
                    cfg = _set(cfg, SECTIONS[section], key, raw, f"[{section}] {key}")
                except ConfigError as e:
                    raise ConfigError(f"{path}: {e}") from None
    for dotted, raw in overrides:
        cfg = apply_override(cfg, dotted, raw)
    return _resolve_paths(cfg, base)


def _resolve_paths(cfg, base):
    out = {}
    for name in ("train_data", "test_data"):
        v = getattr(cfg, name)
        if v:
            p = Path(v) if Path(v).is_absolute() else base / v
            if not p.exists():
                raise ConfigError(f"{name} path {p} does not exist")
            out[name] = str(p)
    ft = cfg.vibrato.formant_table
    if ft:
        p = Path(ft) if Path(ft).is_absolute() else base / ft
        if not p.is_file():
            raise ConfigError(f"formant table {p} does not exist")
        cfg = replace(cfg, vibrato=replace(cfg.vibrato, formant_table=str(p)))
    return replace(cfg, **out)


def write_config(cfg, path):
    """Write every non-default-able value back as INI; loading it gives an equal config."""
    cp = configparser.ConfigParser(interpolation=None)
    for section, attr_path in SECTIONS.items():
        obj = cfg
        for a in attr_path:
            obj = getattr(obj, a)
        values = {}
        for f in fields(obj):
            v = getattr(obj, f.name)
            if dataclasses.is_dataclass(v):
                continue
            values[f.name] = ", ".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v) \
                if isinstance(v, tuple) else (repr(v) if isinstance(v, float) else str(v))
        if values:
            cp[section] = values
    with open(path, "w") as fh:
        cp.write(fh)


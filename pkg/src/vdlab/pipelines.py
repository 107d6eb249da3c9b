"""The three detectors end to end: audio -> input representation -> model -> PredictionTrack."""

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .audio_io import AudioClip, labels_to_frames
from .dsp import mel_filterbank, mel_spectrogram, stft_centered
from .features import FeatureConfig, Standardizer, add_context, assemble_features
from .hpss import STAGE1, STAGE2, double_stage_hpss
from .models.cnn import CnnConfig, CnnTrainParams, cnn_predict_track, cnn_train
from .models.common import PredictionTrack, postprocess
from .models.forest import ForestParams, forest_predict, forest_train
from .models.rnn import RnnConfig, RnnTrainParams, rnn_predict_track, rnn_train
from .models.serialize import load_model, save_model

log = logging.getLogger(__name__)

PIPELINES = ("fe", "cnn", "rnn")


@dataclass(frozen=True)
class FePipelineConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    forest: ForestParams = field(default_factory=ForestParams)


@dataclass(frozen=True)
class CnnPipelineConfig:
    sample_rate: int = 22050
    fft_size: int = 1024
    hop: int = 315
    fmin: float = 27.5
    fmax: float = 8000.0
    cnn: CnnConfig = field(default_factory=CnnConfig)
    train: CnnTrainParams = field(default_factory=CnnTrainParams)


@dataclass(frozen=True)
class RnnPipelineConfig:
    sample_rate: int = 22050
    n_mels: int = 40                # per component; the model sees 2 * n_mels
    pool: int = 3                   # stage-2 frames averaged per model frame
    fmin: float = 0.0
    fmax: float = 11025.0
    rnn: RnnConfig = field(default_factory=lambda: RnnConfig(n_inputs=80))
    train: RnnTrainParams = field(default_factory=RnnTrainParams)

    def __post_init__(self):
        if self.rnn.n_inputs != 2 * self.n_mels:
            raise ValueError(f"rnn.n_inputs must be 2 * n_mels = {2 * self.n_mels}, got {self.rnn.n_inputs}")


@dataclass(frozen=True)
class PostConfig:
    threshold: float = 0.5
    smooth_ms: float = 800.0


DEFAULT_CONFIGS = {"fe": FePipelineConfig, "cnn": CnnPipelineConfig, "rnn": RnnPipelineConfig}


# ------------------------------------------------------------------ representations

def fe_input(clip, cfg):
    fm = assemble_features(clip, cfg.features)
    rows = add_context(fm.rows, cfg.features.context, cfg.features.context_frames, cfg.features.stack_step)
    return rows, fm.frame_rate


def cnn_input(clip, cfg):
    """Log-mel, ``(n_mels, T)``, frame ``i`` centred on sample ``(i + 0.5) * hop``."""
    _check_rate(clip, cfg.sample_rate)
    spec = stft_centered(clip, cfg.fft_size, cfg.hop)
    bank, edges = mel_filterbank(cfg.cnn.n_mels, cfg.fmin, cfg.fmax, cfg.fft_size, clip.sample_rate)
    mel = mel_spectrogram(spec, bank, edges)
    return mel.values.T, spec.frame_rate


def rnn_input(clip, cfg):
    """Concatenated log-mels of the double-stage harmonic and percussive parts, ``(T, 2 * n_mels)``.

    Stage-2 frames are pooled ``cfg.pool`` at a time; the clip is shifted so
    that pooled frame ``k`` is centred on sample ``(k + 0.5) * pool * hop``,
    the same convention as the label grid.
    """
    _check_rate(clip, cfg.sample_rate)
    hop = STAGE2.hop * cfg.pool
    # pooled frame k is centred on sample hop*k + (pool//2)*hop2 + fft/2 of the input
    shift = STAGE2.hop * (cfg.pool // 2) + STAGE2.fft_size // 2 - hop / 2
    lead = int(round(shift))
    x = np.concatenate([np.zeros(lead), clip.samples, np.zeros(STAGE1.fft_size)])
    h, p = double_stage_hpss(AudioClip(x, clip.sample_rate))
    bank, _ = mel_filterbank(cfg.n_mels, cfg.fmin, cfg.fmax, STAGE2.fft_size, clip.sample_rate)
    n_out = len(clip) // hop
    parts = []
    for s in (h, p):
        power = (s.magnitudes ** 2) @ bank.T
        m = power[: n_out * cfg.pool]
        if len(m) < n_out * cfg.pool:
            m = np.vstack([m, np.zeros((n_out * cfg.pool - len(m), cfg.n_mels))])
        pooled = m.reshape(n_out, cfg.pool, cfg.n_mels).mean(axis=1)
        parts.append(10.0 * np.log10(np.maximum(pooled, 1e-10)))
    return np.hstack(parts), clip.sample_rate / hop


def _check_rate(clip, rate):
    if clip.sample_rate != rate:
        raise ValueError(f"clip at {clip.sample_rate} Hz, pipeline configured for {rate} Hz")


def represent(pipeline, clip, cfg):
    """``(array, frame_rate)``; rows are frames except for the CNN, whose columns are."""
    return {"fe": fe_input, "cnn": cnn_input, "rnn": rnn_input}[_check_name(pipeline)](clip, cfg)


def _check_name(pipeline):
    if pipeline not in PIPELINES:
        raise ValueError(f"unknown pipeline {pipeline!r}; choose from {', '.join(PIPELINES)}")
    return pipeline


# ------------------------------------------------------------------ detectors

@dataclass
class Detector:
    pipeline: str
    config: object
    model: object
    standardizer: Standardizer
    post: PostConfig = field(default_factory=PostConfig)

    def probabilities(self, clip):
        x, fps = represent(self.pipeline, clip, self.config)
        if self.pipeline == "fe":
            prob = forest_predict(self.model, self.standardizer.apply(x))
        elif self.pipeline == "cnn":
            prob = cnn_predict_track(self.model, self.standardizer.apply(x.T).T)
        else:
            prob = rnn_predict_track(self.model, self.standardizer.apply(x))
        return PredictionTrack(fps, np.clip(prob, 0.0, 1.0))

    def __call__(self, clip):
        return postprocess(self.probabilities(clip), self.post.threshold, self.post.smooth_ms)


def prepare(pipeline, examples, cfg):
    """Representations and frame labels for ``(clip, LabelTrack)`` pairs."""
    xs, ys = [], []
    for clip, labels in examples:
        x, fps = represent(pipeline, clip, cfg)
        n = x.shape[1] if pipeline == "cnn" else len(x)
        xs.append(x)
        ys.append(labels_to_frames(labels, fps, n).labels)
    return xs, ys


def train_detector(pipeline, examples, cfg=None, post=None, jobs=1, prepared=None):
    """Fit one pipeline on ``(clip, LabelTrack)`` pairs."""
    cfg = cfg or DEFAULT_CONFIGS[_check_name(pipeline)]()
    xs, ys = prepared if prepared is not None else prepare(pipeline, examples, cfg)
    if pipeline == "fe":
        rows = np.vstack(xs)
        std = Standardizer.fit(rows)
        model = forest_train(std.apply(rows), np.concatenate(ys), cfg.forest, jobs=jobs)
    elif pipeline == "cnn":
        std = Standardizer.fit(np.hstack(xs).T)
        model = cnn_train([std.apply(x.T).T for x in xs], ys, cfg.cnn, cfg.train)
    else:
        std = Standardizer.fit(np.vstack(xs))
        model = rnn_train([std.apply(x) for x in xs], ys, cfg.rnn, cfg.train)
    return Detector(pipeline, cfg, model, std, post or PostConfig())


# ------------------------------------------------------------------ persistence

def _config_dict(cfg):
    return asdict(cfg)


def config_from_dict(pipeline, d):
    if pipeline == "fe":
        return FePipelineConfig(FeatureConfig(**d["features"]), ForestParams(**d["forest"]))
    if pipeline == "cnn":
        rest = {k: v for k, v in d.items() if k not in ("cnn", "train")}
        c = dict(d["cnn"], channels=tuple(d["cnn"]["channels"]), pool_after=tuple(d["cnn"]["pool_after"]))
        return CnnPipelineConfig(**rest, cnn=CnnConfig(**c), train=CnnTrainParams(**d["train"]))
    if pipeline == "rnn":
        rest = {k: v for k, v in d.items() if k not in ("rnn", "train")}
        r = dict(d["rnn"], hidden=tuple(d["rnn"]["hidden"]))
        return RnnPipelineConfig(**rest, rnn=RnnConfig(**r), train=RnnTrainParams(**d["train"]))
    raise ValueError(f"unknown pipeline {pipeline!r}")


def save_detector(path, det):
    extra = {"pipeline": det.pipeline, "config": _config_dict(det.config), "post": asdict(det.post)}
    save_model(path, det.model, extra, {"std_mean": det.standardizer.mean, "std_scale": det.standardizer.std})


def load_detector(path):
    model, extra, blobs = load_model(path)
    if "pipeline" not in extra:
        raise ValueError(f"{path}: model file carries no pipeline description")
    pipeline = extra["pipeline"]
    cfg = config_from_dict(pipeline, extra["config"])
    return Detector(pipeline, cfg, model, Standardizer(blobs["std_mean"], blobs["std_scale"]),
                    PostConfig(**extra["post"]))


def write_predictions_csv(path, track):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("time_s", "probability", "label"))
        for t, p, lab in zip(track.times(), track.probabilities, track.labels):
            w.writerow((f"{t:.9f}", f"{p:.9f}", int(lab)))


def read_predictions_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(("time_s", "probability", "label")) - set(rows[0]):
        raise ValueError(f"{path}: expected columns time_s,probability,label")
    t = np.array([float(r["time_s"]) for r in rows])
    prob = np.array([float(r["probability"]) for r in rows])
    lab = np.array([r["label"].strip() in ("1", "True", "true") for r in rows])
    # times are frame centres (i + 0.5) / fps
    fps = (len(t) - 1) / (t[-1] - t[0]) if len(t) > 1 else 0.5 / t[0]
    return PredictionTrack(float(fps), prob, lab)

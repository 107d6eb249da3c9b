"""Desk-scale synthetic study: train all three detectors on a generated corpus,
score them on held-out tracks, sweep the mixing SNR and map vibrato confusions."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .audio_io import labels_to_frames
from .evaluation import confusion, metrics, snr_sweep, vibrato_heatmap
from .models.cnn import CnnConfig, CnnTrainParams
from .models.forest import ForestParams
from .models.rnn import RnnTrainParams
from .pipelines import CnnPipelineConfig, FePipelineConfig, RnnPipelineConfig, prepare, train_detector
from .stressgen import clip_name, gen_synthetic_corpus, grid_specs, synth_vibrato

log = logging.getLogger(__name__)

SINGER_RATES = (4.0, 8.0)
SINGER_DEVIATIONS = (0.6, 2.0)


def desk_configs(seed=0):
    """Capacity and epochs sized for a single CPU core."""
    return {
        "fe": FePipelineConfig(forest=ForestParams(n_trees=30, max_depth=20, seed=seed)),
        "cnn": CnnPipelineConfig(cnn=CnnConfig(n_mels=40, channels=(8, 8, 16, 16), dense=32),
                                 train=CnnTrainParams(epochs=4, batch=32, lr=0.01, decay_every=2,
                                                      per_class_cap=2000, seed=seed)),
        "rnn": RnnPipelineConfig(train=RnnTrainParams(epochs=12, batch=8, lr=0.05, decay_every=6, seed=seed)),
    }


@dataclass
class StudyConfig:
    seed: int = 0
    n_tracks: int = 40
    n_test: int = 8
    levels: tuple = (-12.0, -6.0, 0.0, 6.0, 12.0)
    grid_duration: float = 3.0
    pipelines: tuple = ("fe", "cnn", "rnn")
    heatmap_pipelines: tuple = ("cnn",)
    configs: dict = field(default_factory=dict)


@dataclass
class StudyResult:
    accuracy: dict          # pipeline -> held-out frame accuracy (%)
    train_seconds: dict
    sweep: list             # SweepRow
    heatmaps: dict          # pipeline -> HeatmapGrid
    detectors: dict

    def fnr_curve(self, pipeline):
        return [r.fnr for r in self.sweep if r.model == pipeline]

    def heatmap_regions(self, pipeline):
        """Mean cell accuracy over the singer range and over the extremes, pooled over formants."""
        grid = self.heatmaps[pipeline]
        singer = lambda r, d: SINGER_RATES[0] <= r <= SINGER_RATES[1] and SINGER_DEVIATIONS[0] <= d <= SINGER_DEVIATIONS[1]
        extreme = lambda r, d: r <= 1.0 or d >= 4.0
        means = []
        for sel in (singer, extreme):
            mask = np.array([[sel(r, d) for d in grid.deviations] for r in grid.rates])
            means.append(float(np.mean([m[mask].mean() for m in grid.cells.values()])))
        return tuple(means)


def run_study(cfg=None, jobs=1):
    cfg = cfg or StudyConfig()
    configs = dict(desk_configs(cfg.seed), **cfg.configs)
    tracks = gen_synthetic_corpus(cfg.seed, cfg.n_tracks)
    train, test = tracks[: -cfg.n_test], tracks[-cfg.n_test:]
    examples = [(t.mix, t.labels) for t in train]
    detectors, accuracy, seconds = {}, {}, {}
    for name in cfg.pipelines:
        t0 = time.perf_counter()
        prepared = prepare(name, examples, configs[name])
        det = train_detector(name, examples, configs[name], jobs=jobs, prepared=prepared)
        seconds[name] = time.perf_counter() - t0
        total = None
        for t in test:
            pred = det(t.mix)
            c = confusion(pred, labels_to_frames(t.labels, pred.frame_rate, len(pred)))
            total = c if total is None else total + c
        accuracy[name] = metrics(total).accuracy
        detectors[name] = det
        log.info("%s: trained in %.1f s, held-out accuracy %.2f%%", name, seconds[name], accuracy[name])
    sweep = snr_sweep(test, detectors, list(cfg.levels))
    heatmaps = {}
    if cfg.heatmap_pipelines:
        specs = grid_specs(cfg.grid_duration)
        manifest = [{"filename": clip_name(s), "rate": s.rate, "deviation": s.deviation, "formant": s.formant}
                    for s in specs]
        clips = [synth_vibrato(s) for s in specs]
        for name in cfg.heatmap_pipelines:
            preds = {m["filename"]: detectors[name](c) for m, c in zip(manifest, clips)}
            heatmaps[name] = vibrato_heatmap(manifest, preds)
    return StudyResult(accuracy, seconds, sweep, heatmaps, detectors)

"""Frame-level vocal detectors: random forest, CNN and bi-directional LSTM."""

from .common import PredictionTrack, postprocess, smoothing_window

__all__ = ["PredictionTrack", "postprocess", "smoothing_window"]

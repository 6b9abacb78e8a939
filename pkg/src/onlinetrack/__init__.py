"""Siamese matching fused with an online-trained classifier for visual tracking.

Hot kernels run under numba when available; set ``ONLINETRACK_NO_NUMBA=1`` for
the pure-numpy path.
"""
from ._accel import backend
from .featmap import FeatureMap, Rect, ScoreMap, iou
from .tracker import ConfigError, Tracker, TrackerConfig, init, step

__version__ = "0.1.0"

__all__ = ["backend", "FeatureMap", "Rect", "ScoreMap", "iou", "ConfigError", "Tracker",
           "TrackerConfig", "init", "step", "__version__"]

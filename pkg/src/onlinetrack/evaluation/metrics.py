"""OTB-style success and precision scores."""
from __future__ import annotations

import numpy as np

from ..featmap import Rect, iou

THRESHOLDS = np.linspace(0.0, 1.0, 101)


def success_curve(ious):
    """Fraction of frames with ``iou > t`` for each of the 101 thresholds."""
    a = np.asarray(ious, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("need at least one IoU value")
    if np.any((a < 0) | (a > 1)) or not np.all(np.isfinite(a)):
        raise ValueError("IoU values must lie in [0, 1]")
    return (a[None, :] > THRESHOLDS[:, None]).mean(axis=1)


def success_auc(ious) -> float:
    return float(success_curve(ious).mean())


def center_errors(centers_pred, centers_gt):
    p = np.asarray(centers_pred, dtype=np.float64).reshape(-1, 2)
    g = np.asarray(centers_gt, dtype=np.float64).reshape(-1, 2)
    if len(p) != len(g):
        raise ValueError(f"{len(p)} predicted centers vs {len(g)} ground-truth centers")
    if len(p) == 0:
        raise ValueError("need at least one frame")
    return np.hypot(*(p - g).T)


def precision_at(centers_pred, centers_gt, radius_px: float = 20.0) -> float:
    """Fraction of frames whose center error is at most ``radius_px``."""
    if not radius_px > 0:
        raise ValueError("radius_px must be positive")
    return float(np.mean(center_errors(centers_pred, centers_gt) <= radius_px))


def frame_ious(pred, gt):
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predicted boxes vs {len(gt)} ground-truth boxes")
    return [iou(p, g) for p, g in zip(pred, gt)]


def summarize(pred: list[Rect], gt: list[Rect], radius_px: float = 20.0) -> dict:
    ious = frame_ious(pred, gt)
    return {
        "auc": success_auc(ious),
        "precision": precision_at([(r.cx, r.cy) for r in pred], [(r.cx, r.cy) for r in gt], radius_px),
        "mean_iou": float(np.mean(ious)),
    }

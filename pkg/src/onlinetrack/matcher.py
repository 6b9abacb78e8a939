"""Template matching by correlation, three-scale size estimation and the template switch."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .featmap import FeatureMap, Rect, ScoreMap, blend_window, iou, xcorr2d

SCALE_STEP = 1.0375
SCALE_PENALTY = 0.995
SCALE_DAMPING = 0.6


def _centred(feat: FeatureMap):
    return feat.data - feat.data.mean(axis=(1, 2), keepdims=True)


def normalize_template(feat: FeatureMap, reference: FeatureMap | None = None) -> FeatureMap:
    """Per-channel zero-mean template scaled so that matching its own content scores 1.

    With ``reference`` (the unscaled template of a pyramid) the result is
    instead ``z / (|z| |z_ref|)``: matching ``reference`` still scores about 1
    and, at any fixed cell, the scaled templates rank like cosine similarity.
    """
    z = _centred(feat)
    norm = float(np.linalg.norm(z))
    ref = norm if reference is None else float(np.linalg.norm(_centred(reference)))
    if norm > 0 and ref > 0:
        z = z / (norm * ref)
    return feat.with_data(z)


@dataclass(frozen=True)
class ScalePyramid:
    factors: tuple = (1.0 / SCALE_STEP, 1.0, SCALE_STEP)

    def __post_init__(self):
        f = tuple(float(v) for v in self.factors)
        if len(f) != 3 or list(f) != sorted(f) or f[1] != 1.0 or f[0] <= 0:
            raise ValueError(f"need three sorted positive factors with 1 in the middle, got {f}")
        object.__setattr__(self, "factors", f)


@dataclass(frozen=True)
class TemplateBank:
    """Long-term template ``z1``, optional short-term ``zs``, and their rescaled copies.

    ``z1_scaled`` / ``zs_scaled`` hold one template per pyramid factor (the
    middle one being the template itself). When absent, the unscaled template
    stands in for every factor.
    """

    z1: FeatureMap
    zs: FeatureMap | None = None
    zs_frame: int = -1
    bias: float = 0.0
    z1_scaled: tuple | None = None
    zs_scaled: tuple | None = None

    def __post_init__(self):
        if self.zs is not None and self.zs.data.shape != self.z1.data.shape:
            raise ValueError(f"short-term template shape {self.zs.data.shape} != {self.z1.data.shape}")
        for scaled in (self.z1_scaled, self.zs_scaled):
            if scaled is not None and any(t.data.shape != self.z1.data.shape for t in scaled):
                raise ValueError("scaled templates must match z1's shape")

    def template(self, which):
        if which == "long":
            return self.z1
        if which == "short":
            if self.zs is None:
                raise ValueError("short-term template is not set")
            return self.zs
        raise ValueError(f"which must be 'long' or 'short', got {which!r}")

    def scaled(self, which, n=3):
        z = self.template(which)
        bank = self.z1_scaled if which == "long" else self.zs_scaled
        return tuple(bank) if bank is not None else (z,) * n

    def with_short_term(self, zs, frame, zs_scaled=None):
        return replace(self, zs=zs, zs_frame=frame, zs_scaled=zs_scaled)


def _correlate(search: FeatureMap, z: FeatureMap, bias: float) -> ScoreMap:
    if z.channels != search.channels:
        raise ValueError(f"template channels {z.channels} != search channels {search.channels}")
    m = xcorr2d(search, z, "valid")
    return m.with_data(m.data + bias) if bias else m


def match_cls(search: FeatureMap, bank: TemplateBank, which: str = "long") -> ScoreMap:
    """Valid correlation of ``search`` with the chosen template, plus the bias."""
    return _correlate(search, bank.template(which), bank.bias)


def scale_responses(search: FeatureMap, bank: TemplateBank, pyr: ScalePyramid, which: str = "long"):
    """``[(factor, response), ...]`` for every pyramid factor."""
    return [(f, _correlate(search, z, bank.bias)) for f, z in zip(pyr.factors, bank.scaled(which))]


@dataclass(frozen=True)
class ScaleMatch:
    rect: Rect
    score: float
    factor: float
    response: ScoreMap


def match_reg_fc(search: FeatureMap, bank: TemplateBank, pyr: ScalePyramid, prev: Rect,
                 which: str = "long", window: ScoreMap | None = None,
                 window_strength: float = 0.0) -> ScaleMatch:
    """Best (scale, cell) over the three scaled templates.

    Responses of non-unit scales are multiplied by ``SCALE_PENALTY``; ties go
    to the smallest row, then column, then the factor closest to 1. The box is
    ``prev`` recentred on the refined peak with its size moved ``SCALE_DAMPING``
    of the way toward ``factor * size``. ``score`` is the raw response there.
    """
    best = None
    for factor, resp in scale_responses(search, bank, pyr, which):
        ranked = resp if window is None else blend_window(resp, window, window_strength)
        pen = 1.0 if factor == 1.0 else SCALE_PENALTY
        r, c = ranked.argmax()
        key = (-pen * ranked.data[r, c], r, c, abs(math.log(factor)))
        if best is None or key < best[0]:
            best = (key, factor, resp, ranked, r, c)
    _, factor, resp, ranked, r, c = best
    rr, cc, _ = ranked.refined_peak()
    cy, cx = resp.cell_to_image(rr, cc)
    grow = SCALE_DAMPING * factor + (1.0 - SCALE_DAMPING)
    rect = Rect(cx, cy, prev.w * grow, prev.h * grow)
    return ScaleMatch(rect, float(resp.data[r, c]), factor, resp)


def select_template(candidate_box_s: Rect, candidate_box_1: Rect, score_s: float, score_1: float,
                    ur: float, uc: float) -> str:
    """``'short'`` when the two templates agree on the box and the short one scores clearly higher."""
    if not (0.0 <= ur <= 1.0 and 0.0 <= uc <= 1.0):
        raise ValueError("ur and uc must lie in [0, 1]")
    if iou(candidate_box_s, candidate_box_1) >= ur and (score_s - score_1) >= uc:
        return "short"
    return "long"

"""The per-frame tracking loop: online classifier fused with template matching."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import classifier as clf
from .featmap import FeatureMap, Rect, ScoreMap, blend_window, gaussian_label, penalty_window, resample_onto
from .features import FeatureConfig, augment_with_shifts, crop_geometry, extract_features, extract_patch
from .matcher import (SCALE_DAMPING, SCALE_PENALTY, ScalePyramid, TemplateBank, match_reg_fc, normalize_template,
                      scale_responses, select_template)
from .optimizer import SampleMemory, update_filter

log = logging.getLogger(__name__)

SEARCH_SIZE = 255
TEMPLATE_SIZE = 127
INIT_SCHEDULE = (6, 10)
UPDATE_SCHEDULE = (1, 5)
FINETUNE_STEPS = 60
FINETUNE_LR = 0.01
LABEL_SIGMA_FACTOR = 0.25


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrackerConfig:
    lambda_fusion: float = 0.8
    update_interval: int = 10
    template_interval: int = 5
    tau_c: float = 0.75
    ur: float = 0.6
    uc: float = 0.5
    memory_rate: float = 0.01
    add_threshold: float = 0.25
    absence_threshold: float = 0.25
    distractor_ratio: float = 0.5
    window_strength: float = 0.4
    template_update: bool = True
    attention: bool = True
    augment_count: int = 30
    memory_capacity: int = 250

    def __post_init__(self):
        for name in ("lambda_fusion", "tau_c", "ur", "uc", "memory_rate", "add_threshold",
                     "absence_threshold", "distractor_ratio", "window_strength"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        for name in ("update_interval", "template_interval", "augment_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 < self.memory_rate < 0.5:
            raise ConfigError("memory_rate must lie in (0, 0.5) so that doubling stays below 1")
        if self.memory_capacity < self.augment_count + 1:
            raise ConfigError("memory_capacity must exceed augment_count")


def _coerce(name, typ, text):
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


def parse_config(text: str, base: TrackerConfig = TrackerConfig()) -> TrackerConfig:
    """Flat ``key=value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    types = {f.name: type(f.default) for f in dataclasses.fields(TrackerConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, types[key], val)
    return dataclasses.replace(base, **values)


def load_config(path) -> TrackerConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(cfg: TrackerConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in dataclasses.fields(cfg))


# ------------------------------------------------------------------------ state

@dataclass(frozen=True)
class TargetState:
    rect: Rect
    confidence: float
    target_absent: bool = False
    distractor_present: bool = False
    updated: bool = False
    template: str = "long"


@dataclass
class BufferEntry:
    frame_index: int
    score: float
    rect: Rect
    frame: np.ndarray


@dataclass
class TrackerState:
    frame_index: int
    target: TargetState
    bank: TemplateBank
    memory: SampleMemory
    params: clf.ClassifierParams
    frame_shape: tuple
    interval_buffer: list = field(default_factory=list)
    flags: dict = field(default_factory=lambda: {"distractor_present": False, "target_absent": False})
    feature_cfg: FeatureConfig = FeatureConfig()
    pyramid: ScalePyramid = ScalePyramid()
    update_frames: list = field(default_factory=list)


# --------------------------------------------------------------------- geometry

def template_side(rect: Rect) -> float:
    """Crop side with half-sum-of-dims context."""
    p = (rect.w + rect.h) / 2.0
    return math.sqrt((rect.w + p) * (rect.h + p))


def _aligned_crop(img, rect: Rect, size, side, cell):
    """Crop of nominal ``size`` px grown symmetrically to a multiple of ``cell``.

    The pixel pitch stays ``side / size``, so the feature grid is centred on
    ``rect`` instead of being padded on one side.
    """
    n = size + (-size % cell)
    scale = side * n / size / math.sqrt(rect.w * rect.h)
    patch = extract_patch(img, rect, scale, n)
    top, left, step = crop_geometry(rect, scale, n)
    return patch, top, left, step


def search_features(img, rect: Rect, fcfg: FeatureConfig, size=SEARCH_SIZE, side=None):
    """Features of the square crop around ``rect`` in image geometry (stride/origin in pixels)."""
    side = template_side(rect) * SEARCH_SIZE / TEMPLATE_SIZE if side is None else side
    patch, top, left, step = _aligned_crop(img, rect, size, side, fcfg.cell_size)
    fm = extract_features(patch, fcfg)
    return FeatureMap(fm.data, fm.stride * step, (top, left)), patch


def build_templates(img, rect: Rect, fcfg: FeatureConfig, pyr: ScalePyramid):
    """Normalised templates for every pyramid factor; the middle one is the plain template."""
    feats = [search_features(img, rect, fcfg, TEMPLATE_SIZE, template_side(rect) / f)[0] for f in pyr.factors]
    ref = feats[1]
    out = tuple(normalize_template(f, ref) for f in feats)
    return out[1], out


def _label_for(score_geom: ScoreMap, shape, center_yx, rect: Rect):
    sigma = LABEL_SIGMA_FACTOR * math.sqrt(rect.w * rect.h) / score_geom.stride[0]
    cell = score_geom.image_to_cell(*center_yx)
    return gaussian_label(shape[0], shape[1], cell, sigma, score_geom.stride, score_geom.origin_offset)


def _online_geometry(feat: FeatureMap, params):
    stride, origin = clf.score_geometry(feat, params)
    return ScoreMap(np.zeros((1, 1)), stride, origin)


# ------------------------------------------------------------------------- init

def init(first, s1: Rect, cfg: TrackerConfig = TrackerConfig(), seed: int = 0,
         feature_cfg: FeatureConfig = FeatureConfig()) -> TrackerState:
    first = np.asarray(first, dtype=np.float64)
    if not (s1.w > 0 and s1.h > 0):
        raise ValueError("degenerate initial box")
    H, W = first.shape[:2]
    if not (0 <= s1.cx < W and 0 <= s1.cy < H):
        raise ValueError(f"initial box center ({s1.cx}, {s1.cy}) lies outside the {W}x{H} image")
    pyr = ScalePyramid()
    z1, z1_scaled = build_templates(first, s1, feature_cfg, pyr)
    bank = TemplateBank(z1=z1, z1_scaled=z1_scaled)

    side = template_side(s1) * SEARCH_SIZE / TEMPLATE_SIZE
    patch, top, left, step = _aligned_crop(first, s1, SEARCH_SIZE, side, feature_cfg.cell_size)
    params = clf.init_params(feature_cfg.channels, seed, attention=cfg.attention)

    samples = []
    for img, (dy, dx) in augment_with_shifts(patch, cfg.augment_count, seed):
        fm = extract_features(img, feature_cfg)
        feat = FeatureMap(fm.data, fm.stride * step, (top, left))
        geom = _online_geometry(feat, params)
        center = (s1.cy + dy * step, s1.cx + dx * step)
        samples.append((feat, _label_for(geom, fm.data.shape[1:], center, s1)))

    weight = 1.0 / len(samples)
    params = clf.finetune_init([(f, y, weight) for f, y in samples], params, FINETUNE_STEPS, FINETUNE_LR,
                              dtype=np.float32)
    memory = SampleMemory(cfg.memory_capacity).add_initial(samples, frame_index=1)
    params = update_filter(memory, params, *INIT_SCHEDULE)
    target = TargetState(s1, 1.0)
    return TrackerState(frame_index=1, target=target, bank=bank, memory=memory, params=params,
                        frame_shape=first.shape, feature_cfg=feature_cfg, pyramid=pyr)


# ----------------------------------------------------------------------- fusion

def normalize_score(m: ScoreMap) -> ScoreMap:
    """Clamp to [0, 1]; both subnets score a perfect target near 1 by construction."""
    return m.with_data(np.clip(m.data, 0.0, 1.0))


def fuse_scores(online: ScoreMap, siamese: ScoreMap, lam: float) -> ScoreMap:
    """``lam * online + (1 - lam) * siamese`` on the siamese grid.

    The online map is resampled bicubically at the siamese cells' image points.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    on = resample_onto(normalize_score(online), siamese)
    si = normalize_score(siamese)
    return si.with_data(lam * on.data + (1.0 - lam) * si.data)


@dataclass(frozen=True)
class Peaks:
    row: float
    col: float
    value: float
    target_absent: bool
    distractor_present: bool
    secondary: tuple | None = None


def local_maxima(a):
    """Cells >= all 8 neighbours and > at least one of them."""
    p = np.pad(a, 1, constant_values=-np.inf)
    H, W = a.shape
    ge = np.ones_like(a, dtype=bool)
    gt = np.zeros_like(a, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            nb = p[1 + dr:1 + dr + H, 1 + dc:1 + dc + W]
            ge &= a >= nb
            gt |= a > nb
    return ge & gt


def detect_peaks(fused: ScoreMap, cfg: TrackerConfig, target_cells: float = 0.0) -> Peaks:
    """Primary peak plus absence / distractor flags.

    A distractor is a local maximum of at least ``distractor_ratio`` times the
    global maximum lying outside a disc of radius ``max(3, 0.5*target_cells)``.
    """
    a = fused.data
    r, c = fused.argmax()
    top = float(a[r, c])
    rr, cc, _ = fused.refined_peak()
    absent = top < cfg.absence_threshold
    radius = max(3.0, 0.5 * target_cells)
    secondary = None
    if top > 0:
        ys, xs = np.nonzero(local_maxima(a))
        far = (ys - r) ** 2 + (xs - c) ** 2 > radius ** 2
        cand = [(a[y, x], y, x) for y, x in zip(ys[far], xs[far]) if a[y, x] >= cfg.distractor_ratio * top]
        if cand:
            v, y, x = max(cand, key=lambda t: (t[0], -t[1], -t[2]))
            secondary = (int(y), int(x), float(v))
    return Peaks(rr, cc, top, absent, secondary is not None, secondary)


# ------------------------------------------------------------------------- step

def _choose_template(ts: TrackerState, search: FeatureMap, prev: Rect, cfg: TrackerConfig, window) -> str:
    if ts.bank.zs is None:
        return "long"
    args = (search, ts.bank, ts.pyramid, prev)
    kw = dict(window=window, window_strength=cfg.window_strength)
    long_fit = match_reg_fc(*args, which="long", **kw)
    short_fit = match_reg_fc(*args, which="short", **kw)
    return select_template(short_fit.rect, long_fit.rect, short_fit.score, long_fit.score, cfg.ur, cfg.uc)


@dataclass(frozen=True)
class ScaleChoice:
    factor: float
    cell: tuple          # chosen cell on the shared grid
    fused: ScoreMap      # windowed fused map at this factor
    siamese: ScoreMap    # raw matching response at this factor


def fuse_over_scales(online: ScoreMap, responses, cfg: TrackerConfig, window) -> ScaleChoice:
    """Fuse the online map with each scale's matching response and keep the best scale.

    All scales share one window reference (the overall fused maximum). At
    each scale the fused argmax is snapped to the strongest matching cell
    next to it and scored there. Matching responses at non-unit scales are
    multiplied by ``SCALE_PENALTY`` before fusion; ties go to the smaller row,
    then column, then the factor closest to 1. The online map is the same at
    every scale, so with ``lambda_fusion = 1`` the size never changes.
    """
    maps = []
    for factor, resp in responses:
        pen = 1.0 if factor == 1.0 else SCALE_PENALTY
        maps.append((factor, resp, fuse_scores(online, resp.with_data(pen * resp.data), cfg.lambda_fusion)))
    top = max(float(m.data.max()) for _, _, m in maps)
    best = None
    for factor, resp, fused in maps:
        fused = blend_window(fused, window, cfg.window_strength, peak=top)
        r, c = resp.best_near(*fused.argmax())
        key = (-fused.data[r, c], r, c, abs(math.log(factor)))
        if best is None or key < best[0]:
            best = (key, ScaleChoice(factor, (r, c), fused, resp))
    return best[1]


def step(ts: TrackerState, frame, cfg: TrackerConfig = TrackerConfig()):
    """Track one frame; mutates and returns ``ts`` together with the new target state."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != ts.frame_shape:
        raise ValueError(f"frame shape {frame.shape} differs from the sequence's {ts.frame_shape}")
    t = ts.frame_index + 1
    prev = ts.target.rect
    search, _ = search_features(frame, prev, ts.feature_cfg)

    online, _ = clf.forward(search, ts.params)
    z1 = ts.bank.z1
    window = penalty_window(search.height - z1.height + 1, search.width - z1.width + 1,
                            "gaussian", cfg.window_strength)
    which = _choose_template(ts, search, prev, cfg, window)
    choice = fuse_over_scales(online, scale_responses(search, ts.bank, ts.pyramid, which), cfg, window)
    fused = choice.fused
    target_cells = math.sqrt(prev.w * prev.h) / fused.stride[0]
    peaks = detect_peaks(fused, cfg, target_cells)
    confidence = float(np.clip(online.data.max(), 0.0, 1.0))

    if peaks.target_absent:
        rect = prev
    else:
        # the fused map picks the candidate; the matching response refines it
        rr, cc, _ = choice.siamese.refined_peak(near=choice.cell)
        cy, cx = choice.siamese.cell_to_image(rr, cc)
        H, W = frame.shape[:2]
        grow = SCALE_DAMPING * choice.factor + (1.0 - SCALE_DAMPING)
        rect = Rect(float(np.clip(cx, 0.0, W)), float(np.clip(cy, 0.0, H)), prev.w * grow, prev.h * grow)

    updated = False
    if confidence >= cfg.add_threshold and not peaks.target_absent:
        rate = cfg.memory_rate * (2.0 if peaks.distractor_present else 1.0)
        label = _label_for(online, online.data.shape, (rect.cy, rect.cx), rect)
        ts.memory.add(search, label, rate, frame_index=t)
        if t % cfg.update_interval == 0:
            ts.params = update_filter(ts.memory, ts.params, *UPDATE_SCHEDULE)
            ts.update_frames.append(t)
            updated = True

    ts.frame_index = t
    ts.flags = {"distractor_present": peaks.distractor_present, "target_absent": peaks.target_absent}
    ts.target = TargetState(rect, confidence, peaks.target_absent, peaks.distractor_present, updated, which)
    if cfg.template_update:
        ts.interval_buffer.append(BufferEntry(t, confidence, rect, frame))
        if t % cfg.template_interval == 0:
            propose_short_term(ts, cfg)
    return ts, ts.target


def propose_short_term(ts: TrackerState, cfg: TrackerConfig = TrackerConfig()) -> TrackerState:
    """Promote the best-scoring buffered frame above ``tau_c`` to short-term template, then clear."""
    best = None
    for entry in ts.interval_buffer:
        if entry.score > cfg.tau_c and (best is None or entry.score > best.score):
            best = entry
    if best is not None:
        zs, zs_scaled = build_templates(best.frame, best.rect, ts.feature_cfg, ts.pyramid)
        ts.bank = ts.bank.with_short_term(zs, best.frame_index, zs_scaled)
    ts.interval_buffer = []
    return ts


class Tracker:
    """Convenience wrapper holding config and state."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig(), seed: int = 0,
                 feature_cfg: FeatureConfig = FeatureConfig()):
        self.cfg = cfg
        self.seed = seed
        self.feature_cfg = feature_cfg
        self.state = None

    def init(self, first, rect: Rect) -> TargetState:
        self.state = init(first, rect, self.cfg, self.seed, self.feature_cfg)
        return self.state.target

    def update(self, frame) -> TargetState:
        if self.state is None:
            raise RuntimeError("init() must be called before update()")
        _, target = step(self.state, frame, self.cfg)
        return target

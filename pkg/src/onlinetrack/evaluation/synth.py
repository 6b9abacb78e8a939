"""Deterministic synthetic sequences with exact ground truth.

A high-contrast block-textured target moves over a smooth low-contrast
background. Presets add a look-alike distractor, aspect deformation, a
full-occlusion bar, or steady zoom.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..featmap import Rect

PRESETS = ("static", "distractor", "deform", "occlusion", "zoom")
# perpendicular offset of the distractor path at closest approach, in target sizes
DISTRACTOR_MISS = 0.6


@dataclass(frozen=True)
class SynthSpec:
    preset: str = "static"
    frames: int = 50
    seed: int = 0
    image_size: int = 256
    target_size: int = 32
    motion_amplitude: float = 40.0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {PRESETS}")
        if self.frames < 2:
            raise ValueError("need at least 2 frames")
        if self.image_size < 64 or self.target_size < 8 or self.target_size * 3 > self.image_size:
            raise ValueError("image_size/target_size out of range")
        if self.motion_amplitude < 0:
            raise ValueError("motion_amplitude must be >= 0")


@dataclass
class Sequence:
    frames: list
    groundtruth: list
    name: str = "sequence"
    occluded: tuple = ()

    def __post_init__(self):
        if len(self.frames) != len(self.groundtruth):
            raise ValueError(f"{len(self.frames)} frames but {len(self.groundtruth)} boxes")
        if len(self.frames) < 2:
            raise ValueError("a sequence needs at least 2 frames")

    def __len__(self):
        return len(self.frames)


def block_texture(rng, cells=6, upsample=8, lo=0.1, hi=0.9):
    """Random grey-level blocks: a ``cells`` x ``cells`` grid upsampled by nearest neighbour."""
    grid = rng.uniform(lo, hi, size=(cells, cells))
    return np.kron(grid, np.ones((upsample, upsample)))


def smooth_background(rng, size, sigma=6.0, mean=0.5, std=0.04):
    noise = ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma, mode="wrap")
    noise = (noise - noise.mean()) / (noise.std() + 1e-12)
    return np.clip(mean + std * noise, 0.0, 1.0)


def paste(img, tex, rect: Rect):
    """Draw ``tex`` stretched over ``rect``; pixels whose centers fall inside are covered."""
    H, W = img.shape
    y0 = max(0, int(math.ceil(rect.cy - rect.h / 2 - 0.5)))
    y1 = min(H, int(math.ceil(rect.cy + rect.h / 2 - 0.5)))
    x0 = max(0, int(math.ceil(rect.cx - rect.w / 2 - 0.5)))
    x1 = min(W, int(math.ceil(rect.cx + rect.w / 2 - 0.5)))
    if y1 <= y0 or x1 <= x0:
        return img
    th, tw = tex.shape
    v = ((np.arange(y0, y1) + 0.5) - (rect.cy - rect.h / 2)) / rect.h
    u = ((np.arange(x0, x1) + 0.5) - (rect.cx - rect.w / 2)) / rect.w
    ti = np.clip((v * th).astype(int), 0, th - 1)
    tj = np.clip((u * tw).astype(int), 0, tw - 1)
    img[y0:y1, x0:x1] = tex[ti[:, None], tj[None, :]]
    return img


def _path(rng, n, center, amp):
    t = np.arange(n)
    ph = rng.uniform(0, 2 * np.pi, size=2)
    periods = rng.uniform(60, 120, size=2)
    dy = amp * 0.5 * np.sin(2 * np.pi * t / periods[0] + ph[0])
    dx = amp * np.sin(2 * np.pi * t / periods[1] + ph[1])
    return center + dy - dy[0], center + dx - dx[0]


def _render(spec: SynthSpec, with_target=True):
    rng = np.random.default_rng(spec.seed)
    S, n, ts = spec.image_size, spec.frames, float(spec.target_size)
    bg = smooth_background(rng, S)
    tex = block_texture(rng)
    mid = S / 2.0
    cy, cx = _path(rng, n, mid, spec.motion_amplitude)
    w = np.full(n, ts)
    h = np.full(n, ts)
    occluder = None
    dtex = None
    dpath = None
    if spec.preset == "static":
        cy[:] = mid
        cx[:] = mid
    elif spec.preset == "deform":
        a = 0.25
        k = 1.0 + a * np.sin(2 * np.pi * np.arange(n) / 40.0)
        w, h = ts * k, ts / k
    elif spec.preset == "zoom":
        growth = 1.6 ** (np.arange(n) / max(n - 1, 1))
        w, h = ts * growth, ts * growth
        cy[:] = mid + (cy - mid) * 0.3
        cx[:] = mid + (cx - mid) * 0.3
    elif spec.preset == "occlusion":
        # horizontal sweep behind a vertical bar in the middle of the image
        # slow enough that the whole box stays inside the image
        speed = min(2.0, (S - 1.5 * ts) / max(n - 1, 1))
        span = speed * (n - 1)
        cx = mid - span / 2 + speed * np.arange(n)
        cy = np.full(n, mid)
        hidden = max(5, n // 5)
        occluder = (mid - (ts + speed * hidden) / 2, mid + (ts + speed * hidden) / 2)
    elif spec.preset == "distractor":
        # look-alike: same block statistics, a few blocks re-drawn
        grid = tex[::8, ::8].copy()
        flip = rng.choice(grid.size, size=grid.size // 6, replace=False)
        grid.flat[flip] = rng.uniform(0.1, 0.9, size=flip.size)
        dtex = np.kron(grid, np.ones((8, 8)))
        t = np.arange(n)
        start = rng.uniform(0.6, 0.9) * ts * 2.0
        side = rng.choice([-1.0, 1.0])
        # passes in front of the target around the middle of the sequence,
        # covering part of it at the closest approach
        along = side * (start - 2 * start * t / (n - 1))
        miss = DISTRACTOR_MISS * ts / math.sqrt(1.25)
        dpath = (cy + 0.5 * along + miss, cx + along - 0.5 * miss)
        # slow approach: the pair grows by a third over the sequence
        grow = (4.0 / 3.0) ** (t / max(n - 1, 1))
        w, h = ts * grow, ts * grow
    noise_rng = np.random.default_rng(spec.seed + 7919)
    frames, gts = [], []
    for i in range(n):
        img = bg.copy()
        rect = Rect(float(cx[i]), float(cy[i]), float(w[i]), float(h[i]))
        if with_target:
            paste(img, tex, rect)
        if dpath is not None:
            paste(img, dtex, Rect(float(dpath[1][i]), float(dpath[0][i]), float(w[i]), float(h[i])))
        if occluder is not None:
            x0, x1 = occluder
            img[:, int(round(x0)):int(round(x1))] = 0.3
        img = np.clip(img + noise_rng.normal(0.0, 0.01, size=img.shape), 0.0, 1.0)
        frames.append(img)
        gts.append(rect)
    occluded = ()
    if occluder is not None:
        x0, x1 = int(round(occluder[0])), int(round(occluder[1]))
        occluded = tuple(i for i, r in enumerate(gts)
                         if r.cx - r.w / 2 >= x0 and r.cx + r.w / 2 <= x1)
    return frames, gts, occluded


def gen_synthetic(spec: SynthSpec) -> Sequence:
    frames, gts, occluded = _render(spec)
    return Sequence(frames, gts, f"{spec.preset}-{spec.seed:04d}", occluded)


def render_background_only(spec: SynthSpec):
    """The same frames with the target left out (distractor and occluder kept)."""
    return _render(spec, with_target=False)[0]

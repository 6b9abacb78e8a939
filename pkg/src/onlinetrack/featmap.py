"""Dense maps, correlation, resampling, labels, windows and box geometry.

Image coordinates are continuous ``(row, col)`` = ``(y, x)`` with pixel ``k``
covering ``[k, k+1)``. A map cell ``(r, c)`` sits at image point
``origin + (r + 0.5, c + 0.5) * stride``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels


def _pair(v):
    if np.ndim(v) == 0:
        return (float(v), float(v))
    a, b = v
    return (float(a), float(b))


@dataclass(frozen=True)
class FeatureMap:
    """C x H x W feature tensor with square cells of ``stride`` image pixels."""

    data: np.ndarray
    stride: float = 1.0
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"FeatureMap needs a non-empty (C, H, W) array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("FeatureMap data must be finite")
        if not self.stride > 0:
            raise ValueError(f"stride must be positive, got {self.stride}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "stride", float(self.stride))
        object.__setattr__(self, "origin", _pair(self.origin))

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def with_data(self, data):
        return FeatureMap(data, self.stride, self.origin)


@dataclass(frozen=True)
class ScoreMap:
    """Single-channel response map with its placement in the image."""

    data: np.ndarray
    stride: tuple = (1.0, 1.0)
    origin_offset: tuple = (0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or min(data.shape) < 1:
            raise ValueError(f"ScoreMap needs a non-empty (H, W) array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("ScoreMap data must be finite")
        stride = _pair(self.stride)
        if min(stride) <= 0:
            raise ValueError(f"stride must be positive, got {stride}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "stride", stride)
        object.__setattr__(self, "origin_offset", _pair(self.origin_offset))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def with_data(self, data):
        return ScoreMap(data, self.stride, self.origin_offset)

    def cell_to_image(self, r, c):
        return (self.origin_offset[0] + (r + 0.5) * self.stride[0],
                self.origin_offset[1] + (c + 0.5) * self.stride[1])

    def image_to_cell(self, y, x):
        return ((y - self.origin_offset[0]) / self.stride[0] - 0.5,
                (x - self.origin_offset[1]) / self.stride[1] - 0.5)

    def argmax(self):
        """Integer argmax; ties go to the smallest row, then smallest column."""
        idx = int(np.argmax(self.data))
        return divmod(idx, self.width)

    def best_near(self, r, c):
        """Largest cell of the 3x3 neighbourhood of ``(r, c)`` (first in row-major order on ties)."""
        r, c = int(r), int(c)
        if not (0 <= r < self.height and 0 <= c < self.width):
            raise ValueError(f"cell ({r}, {c}) outside a {self.height}x{self.width} map")
        rs, cs = slice(max(r - 1, 0), r + 2), slice(max(c - 1, 0), c + 2)
        block = self.data[rs, cs]
        dr, dc = divmod(int(np.argmax(block)), block.shape[1])
        return rs.start + dr, cs.start + dc

    def refined_peak(self, near=None):
        """Sub-cell peak ``(row, col, value)`` from a quadratic fit around the argmax.

        With ``near=(r, c)`` the fit is centred on :meth:`best_near` of that
        cell instead of the global argmax.
        """
        r, c = self.argmax() if near is None else self.best_near(*near)
        dr, dc = _quadratic_offset(self.data, r, c)
        return r + dr, c + dc, float(self.data[r, c])


@dataclass(frozen=True)
class Rect:
    """Center-based box in image pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"Rect needs positive size, got w={self.w} h={self.h}")
        for v in (self.cx, self.cy, self.w, self.h):
            if not math.isfinite(v):
                raise ValueError("Rect fields must be finite")

    @classmethod
    def from_xywh(cls, x, y, w, h):
        return cls(x + w / 2.0, y + h / 2.0, w, h)

    def to_xywh(self):
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h)

    def area(self):
        return self.w * self.h


def _quadratic_offset(data, r, c):
    H, W = data.shape
    if 0 < r < H - 1 and 0 < c < W - 1:
        patch = data[r - 1:r + 2, c - 1:c + 2]
        # least-squares fit of a + b x + c y + d x^2 + e x y + f y^2 on the 3x3 grid
        ys, xs = np.mgrid[-1:2, -1:2]
        ys = ys.ravel().astype(float)
        xs = xs.ravel().astype(float)
        A = np.stack([np.ones(9), xs, ys, xs * xs, xs * ys, ys * ys], axis=1)
        coef = np.linalg.lstsq(A, patch.ravel(), rcond=None)[0]
        _, bx, by, dxx, exy, fyy = coef
        hess = np.array([[2 * fyy, exy], [exy, 2 * dxx]])
        grad = np.array([by, bx])
        if np.linalg.det(hess) > 1e-12 and hess[0, 0] < 0:
            off = -np.linalg.solve(hess, grad)
            if np.all(np.abs(off) <= 1.0):
                return float(np.clip(off[0], -0.5, 0.5)), float(np.clip(off[1], -0.5, 0.5))
    return _parabola(data[:, c], r), _parabola(data[r, :], c)


def _parabola(line, i):
    if i <= 0 or i >= len(line) - 1:
        return 0.0
    left, mid, right = line[i - 1], line[i], line[i + 1]
    denom = left - 2.0 * mid + right
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


# ----------------------------------------------------------------- correlation

def xcorr2d(inp: FeatureMap, kernel: FeatureMap, mode: str = "valid") -> ScoreMap:
    """Channel-summed sliding inner product of ``kernel`` over ``inp``.

    ``same`` zero-pads ``(kh-1)//2`` before and the rest after, so the output has
    the input's spatial size.
    """
    if kernel.channels != inp.channels:
        raise ValueError(f"channel mismatch: input {inp.channels} vs kernel {kernel.channels}")
    kh, kw = kernel.height, kernel.width
    x = inp.data
    if mode == "valid":
        if kh > inp.height or kw > inp.width:
            raise ValueError(f"kernel {kh}x{kw} larger than input {inp.height}x{inp.width}")
        shift_r, shift_c = (kh - 1) / 2.0, (kw - 1) / 2.0
    elif mode == "same":
        pt, pl = (kh - 1) // 2, (kw - 1) // 2
        x = np.pad(x, ((0, 0), (pt, kh - 1 - pt), (pl, kw - 1 - pl)))
        shift_r, shift_c = (kh - 1) / 2.0 - pt, (kw - 1) / 2.0 - pl
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out = kernels.xcorr_valid(x, kernel.data)
    s = inp.stride
    origin = (inp.origin[0] + shift_r * s, inp.origin[1] + shift_c * s)
    return ScoreMap(out, s, origin)


# ------------------------------------------------------------------- resampling

def cubic_weights(positions, n, a=-0.5):
    """Rows of Catmull-Rom interpolation weights for sampling ``n`` samples.

    Out-of-range taps are clamped to the edge sample.
    """
    positions = np.asarray(positions, dtype=np.float64)
    base = np.floor(positions).astype(np.int64)
    t = positions - base
    W = np.zeros((len(positions), n))
    rows = np.arange(len(positions))
    for k in range(-1, 3):
        d = np.abs(t - k)
        wk = np.where(d <= 1,
                      (a + 2) * d ** 3 - (a + 3) * d ** 2 + 1,
                      np.where(d < 2, a * d ** 3 - 5 * a * d ** 2 + 8 * a * d - 4 * a, 0.0))
        idx = np.clip(base + k, 0, n - 1)
        np.add.at(W, (rows, idx), wk)
    return W


def resize_cubic(m: ScoreMap, out_h: int, out_w: int) -> ScoreMap:
    """Bicubic resize that keeps the map's image footprint."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    H, W = m.data.shape
    if (out_h, out_w) == (H, W):
        return m
    sr, sc = H / out_h, W / out_w
    wr = cubic_weights((np.arange(out_h) + 0.5) * sr - 0.5, H)
    wc = cubic_weights((np.arange(out_w) + 0.5) * sc - 0.5, W)
    data = wr @ m.data @ wc.T
    return ScoreMap(data, (m.stride[0] * sr, m.stride[1] * sc), m.origin_offset)


def resample_onto(m: ScoreMap, ref: ScoreMap) -> ScoreMap:
    """Bicubic samples of ``m`` at the image points of ``ref``'s cells."""
    rows = [m.image_to_cell(ref.cell_to_image(r, 0)[0], 0.0)[0] for r in range(ref.height)]
    cols = [m.image_to_cell(0.0, ref.cell_to_image(0, c)[1])[1] for c in range(ref.width)]
    wr = cubic_weights(rows, m.height)
    wc = cubic_weights(cols, m.width)
    return ScoreMap(wr @ m.data @ wc.T, ref.stride, ref.origin_offset)


# --------------------------------------------------------------- labels/windows

def gaussian_label(h, w, center, sigma, stride=1.0, origin=(0.0, 0.0)) -> ScoreMap:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = np.arange(h)[:, None] - center[0]
    c = np.arange(w)[None, :] - center[1]
    return ScoreMap(np.exp(-(r * r + c * c) / (2.0 * sigma * sigma)), stride, origin)


def penalty_window(h, w, kind="gaussian", strength=1.0) -> ScoreMap:
    """Centered window in [0, 1] peaking at 1.

    ``strength`` is carried only for validation; apply with :func:`blend_window`.
    """
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"strength must lie in [0, 1], got {strength}")
    if kind == "gaussian":
        r = np.arange(h) - (h - 1) / 2.0
        c = np.arange(w) - (w - 1) / 2.0
        wr = np.exp(-r ** 2 / (2.0 * (h / 4.0) ** 2))
        wc = np.exp(-c ** 2 / (2.0 * (w / 4.0) ** 2))
    elif kind == "cosine":
        wr = np.hanning(h) if h > 1 else np.ones(1)
        wc = np.hanning(w) if w > 1 else np.ones(1)
    else:
        raise ValueError(f"unknown window kind {kind!r}")
    win = np.outer(wr, wc)
    return ScoreMap(win / win.max())


def blend_window(score: ScoreMap, window: ScoreMap, strength: float, peak=None) -> ScoreMap:
    """``(1 - s) * score + s * window * max(score, 0)``; never raises the peak.

    ``peak`` replaces ``max(score)`` so several maps can share one reference.
    """
    if strength == 0:
        return score
    scale = max(float(score.data.max() if peak is None else peak), 0.0)
    return score.with_data((1.0 - strength) * score.data + strength * window.data * scale)


# ---------------------------------------------------------------------- boxes

def iou(a: Rect, b: Rect) -> float:
    iw = min(a.cx + a.w / 2, b.cx + b.w / 2) - max(a.cx - a.w / 2, b.cx - b.w / 2)
    ih = min(a.cy + a.h / 2, b.cy + b.h / 2) - max(a.cy - a.h / 2, b.cy - b.h / 2)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return float(min(1.0, inter / (a.area() + b.area() - inter)))

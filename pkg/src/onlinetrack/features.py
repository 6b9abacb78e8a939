"""Hand-crafted feature extraction, patch cropping and first-frame augmentation.

Stands in for a learned backbone: every ``cell_size`` x ``cell_size`` block of a
patch becomes one feature cell holding soft-binned gradient-orientation energy
(L2-normalised per cell) plus, optionally, the block's mean intensity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .featmap import FeatureMap, Rect


@dataclass(frozen=True)
class FeatureConfig:
    cell_size: int = 8
    num_orientations: int = 8
    include_intensity: bool = True
    norm_eps: float = 0.02

    def __post_init__(self):
        if self.cell_size < 1:
            raise ValueError("cell_size must be >= 1")
        if self.num_orientations < 1:
            raise ValueError("num_orientations must be >= 1")
        if self.norm_eps < 0:
            raise ValueError("norm_eps must be >= 0")

    @property
    def channels(self):
        return self.num_orientations + int(self.include_intensity)


def as_image(pixels) -> np.ndarray:
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3) or img.size == 0:
        raise ValueError(f"expected an (H, W) or (H, W, 3) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def load_image(path) -> np.ndarray:
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64)
    return arr / 255.0


def save_image(path, img):
    from PIL import Image as PILImage

    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr).save(path)


def to_gray(img):
    return img if img.ndim == 2 else img.mean(axis=2)


# -------------------------------------------------------------------- cropping

def crop_geometry(state: Rect, context_scale: float, out_size: int):
    """``(top, left, step)``: image corner of the crop and image pixels per patch pixel."""
    side = context_scale * math.sqrt(state.w * state.h)
    return state.cy - side / 2.0, state.cx - side / 2.0, side / out_size


def extract_patch(img, state: Rect, context_scale: float, out_size: int) -> np.ndarray:
    """Square crop of side ``context_scale*sqrt(w*h)`` around ``state``, resampled to ``out_size``.

    Area outside the image takes the image mean.
    """
    if out_size < 32:
        raise ValueError(f"out_size must be >= 32, got {out_size}")
    if not context_scale > 0:
        raise ValueError(f"context_scale must be positive, got {context_scale}")
    if not (state.w > 0 and state.h > 0):
        raise ValueError("degenerate state")
    top, left, step = crop_geometry(state, context_scale, out_size)
    # index of the pixel whose center lies at continuous coordinate t is t - 0.5
    row0 = top + 0.5 * step - 0.5
    col0 = left + 0.5 * step - 0.5
    if img.ndim == 2:
        return kernels.sample_bilinear(img, row0, col0, step, out_size, out_size, img.mean())
    planes = [kernels.sample_bilinear(img[..., ch], row0, col0, step, out_size, out_size, img[..., ch].mean())
              for ch in range(img.shape[2])]
    return np.stack(planes, axis=-1)


# -------------------------------------------------------------------- features

def gradients(gray):
    """Central differences with replicated borders."""
    p = np.pad(gray, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return gx, gy


def extract_features(patch, cfg: FeatureConfig = FeatureConfig(), pad: bool = False) -> FeatureMap:
    """Feature map with stride ``cfg.cell_size`` (in patch pixels).

    With ``pad=True`` the patch is edge-replicated up to the next multiple of the
    cell size (255 -> 256 for the default search patch); otherwise indivisible
    sizes are rejected.
    """
    gray = to_gray(np.asarray(patch, dtype=np.float64))
    cell = cfg.cell_size
    H, W = gray.shape
    ph, pw = (-H) % cell, (-W) % cell
    if ph or pw:
        if not pad:
            raise ValueError(f"patch {H}x{W} not divisible by cell size {cell}")
        gray = np.pad(gray, ((0, ph), (0, pw)), mode="edge")
    gx, gy = gradients(gray)
    hist = kernels.orientation_cells(gx, gy, cfg.num_orientations, cell)
    norm = np.sqrt((hist * hist).sum(axis=0, keepdims=True))
    if cfg.norm_eps > 0:
        hist = hist / (norm + cfg.norm_eps)
    else:
        hist = np.divide(hist, norm, out=np.zeros_like(hist), where=norm > 0)
    planes = [hist]
    if cfg.include_intensity:
        my, mx = kernels.tent_matrix(gray.shape[0], cell), kernels.tent_matrix(gray.shape[1], cell)
        planes.append((my @ gray @ mx.T / my.sum(axis=1)[:, None] / mx.sum(axis=1)[None, :])[None])
    return FeatureMap(np.concatenate(planes, axis=0), stride=cell)


# ---------------------------------------------------------------- augmentation

def _blur(img, times):
    k = np.array([0.25, 0.5, 0.25])
    for _ in range(times):
        img = ndimage.convolve1d(img, k, axis=0, mode="nearest")
        img = ndimage.convolve1d(img, k, axis=1, mode="nearest")
    return img


def augment_with_shifts(patch, count: int, seed: int):
    """Like :func:`augment_initial` but also returns each variant's (dy, dx) shift."""
    if count < 1:
        raise ValueError("count must be >= 1")
    patch = np.asarray(patch, dtype=np.float64)
    rng = np.random.default_rng(seed)
    out = [(patch, (0.0, 0.0))]
    for i in range(1, count):
        kind = (i - 1) % 3
        if kind == 0:
            dy, dx = (float(v) for v in rng.integers(-8, 9, size=2))
            shift = (dy, dx) + (0,) * (patch.ndim - 2)
            img = ndimage.shift(patch, shift, order=1, mode="nearest")
            out.append((img, (dy, dx)))
        elif kind == 1:
            angle = float(rng.uniform(-15.0, 15.0))
            img = ndimage.rotate(patch, angle, axes=(1, 0), reshape=False, order=1, mode="nearest")
            out.append((img, (0.0, 0.0)))
        else:
            img = _blur(patch, int(rng.integers(1, 4)))
            out.append((img, (0.0, 0.0)))
    return [(np.clip(img, 0.0, 1.0), s) for img, s in out]


def augment_initial(patch, count: int, seed: int):
    """Seeded translated / rotated / blurred variants; element 0 is ``patch`` itself."""
    return [img for img, _ in augment_with_shifts(patch, count, seed)]

"""Hot inner loops, each with a numba and a pure-numpy implementation.

The public names (``xcorr_valid``, ``sample_bilinear``, ``orientation_cells``)
dispatch on :data:`onlinetrack._accel.USE_NUMBA`. Both variants are importable
under ``*_nb`` / ``*_np`` so tests and benchmarks can compare them directly.
"""
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _accel
from ._accel import njit


# ---------------------------------------------------------------- correlation

def xcorr_valid_np(x, k):
    """Channel-summed valid cross-correlation of (C,H,W) with (C,kh,kw)."""
    win = sliding_window_view(x, k.shape[1:], axis=(1, 2))
    return np.einsum("cijkl,ckl->ij", win, k, optimize=True)


@njit
def xcorr_valid_nb(x, k):
    C, H, W = x.shape
    _, kh, kw = k.shape
    oh = H - kh + 1
    ow = W - kw + 1
    out = np.zeros((oh, ow))
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                v = k[c, i, j]
                if v == 0.0:
                    continue
                for r in range(oh):
                    for q in range(ow):
                        out[r, q] += v * x[c, r + i, q + j]
    return out


def xcorr_valid(x, k):
    x = np.ascontiguousarray(x, dtype=np.float64)
    k = np.ascontiguousarray(k, dtype=np.float64)
    if _accel.USE_NUMBA:
        return xcorr_valid_nb(x, k)
    return xcorr_valid_np(x, k)


# ------------------------------------------------------------------ resampling

def sample_bilinear_np(img, row0, col0, step, out_h, out_w, fill):
    """Bilinear samples of a 2-D array on a regular grid.

    Output cell (i, j) reads index-space position ``(row0 + i*step, col0 + j*step)``.
    Neighbours outside the array contribute ``fill``.
    """
    H, W = img.shape
    rows = row0 + step * np.arange(out_h)
    cols = col0 + step * np.arange(out_w)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]

    def gather(ri, ci):
        ok_r = (ri >= 0) & (ri < H)
        ok_c = (ci >= 0) & (ci < W)
        vals = img[np.clip(ri, 0, H - 1)[:, None], np.clip(ci, 0, W - 1)[None, :]]
        return np.where(ok_r[:, None] & ok_c[None, :], vals, fill)

    v00 = gather(r0, c0)
    v01 = gather(r0, c0 + 1)
    v10 = gather(r0 + 1, c0)
    v11 = gather(r0 + 1, c0 + 1)
    top = v00 * (1.0 - fc) + v01 * fc
    bot = v10 * (1.0 - fc) + v11 * fc
    return top * (1.0 - fr) + bot * fr


@njit
def _pixel_or_fill(img, r, c, fill):
    if 0 <= r < img.shape[0] and 0 <= c < img.shape[1]:
        return img[r, c]
    return fill


@njit
def sample_bilinear_nb(img, row0, col0, step, out_h, out_w, fill):
    out = np.empty((out_h, out_w))
    for i in range(out_h):
        r = row0 + step * i
        ri = int(math.floor(r))
        fr = r - ri
        for j in range(out_w):
            c = col0 + step * j
            ci = int(math.floor(c))
            fc = c - ci
            top = _pixel_or_fill(img, ri, ci, fill) * (1.0 - fc) + _pixel_or_fill(img, ri, ci + 1, fill) * fc
            bot = _pixel_or_fill(img, ri + 1, ci, fill) * (1.0 - fc) + _pixel_or_fill(img, ri + 1, ci + 1, fill) * fc
            out[i, j] = top * (1.0 - fr) + bot * fr
    return out


def sample_bilinear(img, row0, col0, step, out_h, out_w, fill):
    img = np.ascontiguousarray(img, dtype=np.float64)
    args = (float(row0), float(col0), float(step), int(out_h), int(out_w), float(fill))
    if _accel.USE_NUMBA:
        return sample_bilinear_nb(img, *args)
    return sample_bilinear_np(img, *args)


# ------------------------------------------------------- oriented gradient bins

def tent_matrix(n, cell):
    """(n // cell, n) weights spreading each pixel linearly over its two nearest cell centres."""
    u = (np.arange(n) + 0.5) / cell - 0.5
    lo = np.floor(u).astype(np.int64)
    frac = u - lo
    m = np.zeros((n // cell, n))
    for idx, wt in ((lo, 1.0 - frac), (lo + 1, frac)):
        ok = (idx >= 0) & (idx < n // cell)
        m[idx[ok], np.nonzero(ok)[0]] += wt[ok]
    return m


def orientation_cells_np(gx, gy, nbins, cell):
    """Gradient magnitude soft-binned by unsigned orientation and position.

    Bin ``k`` is centred on orientation ``k*pi/nbins``; each pixel splits its
    magnitude linearly between the two nearest bin centres and, along each
    axis, between the two nearest cell centres. Divided by ``cell**2`` so an
    interior cell holds the mean.
    """
    H, W = gx.shape
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    pos = theta * (nbins / np.pi)
    lo = np.floor(pos)
    frac = pos - lo
    b0 = lo.astype(np.int64) % nbins
    b1 = (b0 + 1) % nbins
    planes = np.zeros((nbins, H, W))
    for b in range(nbins):
        planes[b] = np.where(b0 == b, mag * (1.0 - frac), 0.0) + np.where(b1 == b, mag * frac, 0.0)
    my, mx = tent_matrix(H, cell), tent_matrix(W, cell)
    return (my @ planes @ mx.T) / (cell * cell)


@njit
def _tent(p, cell, n):
    u = (p + 0.5) / cell - 0.5
    lo = math.floor(u)
    return int(lo), u - lo, n // cell


@njit
def orientation_cells_nb(gx, gy, nbins, cell):
    H, W = gx.shape
    out = np.zeros((nbins, H // cell, W // cell))
    scale = nbins / np.pi
    for r in range(H):
        r0, fr, nr = _tent(r, cell, H)
        for c in range(W):
            x = gx[r, c]
            y = gy[r, c]
            mag = math.hypot(x, y)
            if mag == 0.0:
                continue
            c0, fc, nc = _tent(c, cell, W)
            theta = math.atan2(y, x) % np.pi
            pos = theta * scale
            lo = math.floor(pos)
            frac = pos - lo
            b0 = int(lo) % nbins
            b1 = (b0 + 1) % nbins
            for dr in range(2):
                rr = r0 + dr
                if rr < 0 or rr >= nr:
                    continue
                wr = fr if dr else 1.0 - fr
                for dc in range(2):
                    cc = c0 + dc
                    if cc < 0 or cc >= nc:
                        continue
                    wv = mag * wr * (fc if dc else 1.0 - fc)
                    out[b0, rr, cc] += wv * (1.0 - frac)
                    out[b1, rr, cc] += wv * frac
    return out / (cell * cell)


def orientation_cells(gx, gy, nbins, cell):
    gx = np.ascontiguousarray(gx, dtype=np.float64)
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    if _accel.USE_NUMBA:
        return orientation_cells_nb(gx, gy, int(nbins), int(cell))
    return orientation_cells_np(gx, gy, int(nbins), int(cell))

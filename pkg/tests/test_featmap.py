import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onlinetrack.featmap import (FeatureMap, Rect, ScoreMap, blend_window, gaussian_label, iou,
                                 penalty_window, resize_cubic, xcorr2d)


def naive_xcorr(x, k):
    C, H, W = x.shape
    _, kh, kw = k.shape
    out = np.zeros((H - kh + 1, W - kw + 1))
    for r in range(out.shape[0]):
        for c in range(out.shape[1]):
            s = 0.0
            for ch in range(C):
                for i in range(kh):
                    for j in range(kw):
                        s += x[ch, r + i, c + j] * k[ch, i, j]
            out[r, c] = s
    return out


def catmull_rom(d, a=-0.5):
    d = abs(d)
    if d <= 1:
        return (a + 2) * d ** 3 - (a + 3) * d ** 2 + 1
    if d < 2:
        return a * d ** 3 - 5 * a * d ** 2 + 8 * a * d - 4 * a
    return 0.0


def reference_bicubic(src, out_h, out_w):
    H, W = src.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        y = (i + 0.5) * H / out_h - 0.5
        for j in range(out_w):
            x = (j + 0.5) * W / out_w - 0.5
            acc = 0.0
            for m in range(math.floor(y) - 1, math.floor(y) + 3):
                for n in range(math.floor(x) - 1, math.floor(x) + 3):
                    v = src[min(max(m, 0), H - 1), min(max(n, 0), W - 1)]
                    acc += v * catmull_rom(y - m) * catmull_rom(x - n)
            out[i, j] = acc
    return out


# ------------------------------------------------------------------- types

def test_featuremap_rejects_nonfinite_and_bad_stride():
    with pytest.raises(ValueError):
        FeatureMap(np.array([[[np.nan]]]))
    with pytest.raises(ValueError):
        FeatureMap(np.zeros((1, 2, 2)), stride=0)
    with pytest.raises(ValueError):
        FeatureMap(np.zeros((2, 2)))


def test_scoremap_cell_image_roundtrip(rng):
    m = ScoreMap(np.zeros((7, 9)), (8.0, 8.0), (-3.25, 11.5))
    for r, c in rng.uniform(-2, 10, size=(20, 2)):
        y, x = m.cell_to_image(r, c)
        r2, c2 = m.image_to_cell(y, x)
        assert abs(r2 - r) < 1e-9 and abs(c2 - c) < 1e-9
    assert m.cell_to_image(0, 0) == (-3.25 + 4.0, 11.5 + 4.0)


def test_rect_rejects_degenerate():
    with pytest.raises(ValueError):
        Rect(0, 0, 0, 1)
    r = Rect.from_xywh(10, 20, 4, 6)
    assert (r.cx, r.cy) == (12, 23) and r.to_xywh() == (10, 20, 4, 6)


def test_argmax_ties_and_refined_peak():
    a = np.zeros((5, 5))
    a[1, 3] = a[3, 1] = 1.0
    assert ScoreMap(a).argmax() == (1, 3)
    # symmetric bump at a cell centre refines to that cell
    y, x = np.mgrid[0:9, 0:9]
    bump = np.exp(-((y - 4.3) ** 2 + (x - 3.8) ** 2) / 4.0)
    r, c, v = ScoreMap(bump).refined_peak()
    assert abs(r - 4.3) < 0.1 and abs(c - 3.8) < 0.1 and v == bump[4, 4]


# ------------------------------------------------------------------ xcorr

def test_xcorr_worked_example(backend):
    x = FeatureMap(np.arange(1, 10, dtype=float).reshape(1, 3, 3))
    k = FeatureMap(np.array([[[1.0, 0.0], [0.0, 1.0]]]))
    np.testing.assert_array_equal(xcorr2d(x, k, "valid").data, [[6, 8], [12, 14]])


@pytest.mark.parametrize("mode", ["valid", "same"])
def test_xcorr_identity_and_zero_kernel(backend, mode, rng):
    x = FeatureMap(rng.standard_normal((1, 6, 5)))
    np.testing.assert_array_equal(xcorr2d(x, FeatureMap(np.ones((1, 1, 1))), mode).data, x.data[0])
    assert not np.any(xcorr2d(x, FeatureMap(np.zeros((1, 3, 2))), mode).data)


def test_xcorr_errors():
    x = FeatureMap(np.zeros((2, 4, 4)))
    with pytest.raises(ValueError, match="channel"):
        xcorr2d(x, FeatureMap(np.zeros((3, 2, 2))))
    with pytest.raises(ValueError, match="larger"):
        xcorr2d(x, FeatureMap(np.zeros((2, 5, 2))))


def test_xcorr_same_shape_and_padding(backend, rng):
    x = rng.standard_normal((3, 7, 6))
    k = rng.standard_normal((3, 4, 4))
    out = xcorr2d(FeatureMap(x), FeatureMap(k), "same").data
    assert out.shape == (7, 6)
    padded = np.pad(x, ((0, 0), (1, 2), (1, 2)))
    np.testing.assert_allclose(out, naive_xcorr(padded, k), rtol=1e-12, atol=1e-12)


def test_xcorr_matches_naive_on_random(backend, rng):
    for _ in range(10):
        C = int(rng.integers(1, 4))
        H, W = (int(v) for v in rng.integers(4, 17, size=2))
        kh, kw = int(rng.integers(1, H + 1)), int(rng.integers(1, W + 1))
        x, k = rng.standard_normal((C, H, W)), rng.standard_normal((C, kh, kw))
        ref = naive_xcorr(x, k)
        np.testing.assert_allclose(xcorr2d(FeatureMap(x), FeatureMap(k)).data, ref,
                                   rtol=1e-9, atol=1e-9 * np.abs(ref).max())


def test_xcorr_bilinear(backend, rng):
    X, Y, K = rng.standard_normal((3, 2, 9, 9))
    K = K[:, :3, :3]
    a, b = 1.7, -0.4
    lhs = xcorr2d(FeatureMap(a * X + b * Y), FeatureMap(K)).data
    rhs = a * xcorr2d(FeatureMap(X), FeatureMap(K)).data + b * xcorr2d(FeatureMap(Y), FeatureMap(K)).data
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)


# ----------------------------------------------------------------- resize

def test_resize_identity_and_constant():
    m = ScoreMap(np.arange(12.0).reshape(3, 4), 2.0, (1.0, 1.0))
    assert resize_cubic(m, 3, 4) is m
    c = resize_cubic(ScoreMap(np.full((3, 5), 0.7)), 11, 2)
    np.testing.assert_allclose(c.data, 0.7, atol=1e-12)


def test_resize_matches_reference_bicubic():
    src = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = resize_cubic(ScoreMap(src), 4, 4).data
    ref = reference_bicubic(src, 4, 4)
    np.testing.assert_allclose(out[1:3, 1:3], ref[1:3, 1:3], atol=1e-9)
    np.testing.assert_allclose(out, ref, atol=1e-9)


def test_resize_keeps_footprint():
    m = ScoreMap(np.zeros((8, 8)), 4.0, (10.0, 20.0))
    big = resize_cubic(m, 16, 32)
    assert big.stride == (2.0, 1.0)
    # the map's outer corners land on the same image points
    assert big.cell_to_image(-0.5, -0.5) == m.cell_to_image(-0.5, -0.5)
    assert big.cell_to_image(15.5, 31.5) == m.cell_to_image(7.5, 7.5)


def test_resize_down_up_smooth_map():
    y, x = np.mgrid[0:32, 0:32] / 32.0
    smooth = np.sin(2 * np.pi * y) * np.cos(2 * np.pi * x)
    m = ScoreMap(smooth)
    up = resize_cubic(m, 128, 128)
    back = resize_cubic(up, 32, 32)
    assert np.max(np.abs(back.data - smooth)) < 1e-3


# ---------------------------------------------------------- labels/windows

def test_gaussian_label_examples():
    y = gaussian_label(7, 7, (3, 3), 1.5).data
    assert y[3, 3] == 1.0
    np.testing.assert_allclose(y[3, 3 + 2], y[3, 3 - 2])
    np.testing.assert_allclose(y[3 + 1, 3 - 2], y[3 - 1, 3 + 2])
    assert abs(gaussian_label(9, 9, (4, 4), 2.0).data[4, 6] - math.exp(-0.5)) < 1e-12
    with pytest.raises(ValueError):
        gaussian_label(3, 3, (1, 1), 0.0)


@given(st.floats(-5, 15), st.floats(-5, 15), st.floats(0.3, 6))
@settings(max_examples=50, deadline=None)
def test_gaussian_label_decreases_along_rays(r0, c0, sigma):
    y = gaussian_label(11, 11, (r0, c0), sigma).data
    assert np.all(y <= 1.0) and np.all(y >= 0.0)
    row = y[int(np.clip(round(r0), 0, 10))]
    right = row[int(np.clip(math.ceil(c0), 0, 10)):]
    assert np.all(np.diff(right) <= 0)


def test_penalty_window_examples(rng):
    g = penalty_window(17, 17, "gaussian", 0.4).data
    assert g[8, 8] == 1.0 and g.max() == 1.0 and g.min() >= 0
    cosw = penalty_window(9, 9, "cosine", 1.0).data
    assert np.all(cosw[0] == 0.0) and cosw[4, 4] == 1.0
    s = ScoreMap(rng.random((17, 17)))
    assert blend_window(s, ScoreMap(g), 0.0) is s
    with pytest.raises(ValueError):
        penalty_window(3, 3, "gaussian", 1.5)


def test_blend_window_never_raises_peak(rng):
    s = ScoreMap(rng.random((9, 9)))
    w = penalty_window(9, 9, "gaussian", 0.4)
    assert blend_window(s, w, 0.4).data.max() <= s.data.max() + 1e-15


# ------------------------------------------------------------------- iou

def test_iou_examples():
    a = Rect(1, 1, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, Rect(10, 10, 2, 2)) == 0.0
    assert abs(iou(a, Rect(2, 1, 2, 2)) - 1.0 / 3.0) < 1e-12


rects = st.builds(Rect, st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 40), st.floats(0.1, 40))


@given(rects, rects)
@settings(max_examples=200, deadline=None)
def test_iou_symmetric_bounded(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou(b, a), abs=1e-12)

"""Online classification subnet: 1x1 compression, dual attention and a 4x4 filter.

Pipeline for a (C, H, W) feature map ``X``::

    U = relu(Wc X + bc)                                # compression
    s = sigmoid(F2 relu(F1 mean_hw(U) + b1) + b2)      # GAP -> FC -> FC gate
    V = s * U
    A = softmax_hw(mean_c(V))                          # softmax after channel averaging
    Z = V * (1 + H*W*A)                                # residual spatial gate
    f = Z (*) w                                        # same-mode 4x4 correlation

Everything up to ``Z`` is fitted on the first frame only; afterwards the score
is linear in the filter ``w``, which is what the optimizer exploits.
"""
from __future__ import annotations

import struct
from types import SimpleNamespace
from dataclasses import dataclass, field, replace

import numpy as np

from .featmap import FeatureMap, ScoreMap

BLOCKS = ("compress_w", "compress_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b", "filter_w")
FROZEN_BLOCKS = BLOCKS[:-1]


@dataclass(frozen=True)
class ClassifierParams:
    compress_w: np.ndarray   # (K, C_in)
    compress_b: np.ndarray   # (K,)
    fc1_w: np.ndarray        # (K // r, K)
    fc1_b: np.ndarray
    fc2_w: np.ndarray        # (K, K // r)
    fc2_b: np.ndarray
    filter_w: np.ndarray     # (K, kh, kw), single output channel
    reg_lambda: dict = field(default_factory=lambda: {"filter_w": 1e-2})
    attention: bool = True

    def __post_init__(self):
        for name in BLOCKS:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, arr)
        lam = dict(self.reg_lambda)
        for k, v in lam.items():
            if k not in BLOCKS:
                raise ValueError(f"unknown parameter block {k!r} in reg_lambda")
            if v < 0:
                raise ValueError(f"reg_lambda[{k!r}] must be >= 0")
        object.__setattr__(self, "reg_lambda", lam)
        if self.filter_w.ndim != 3 or self.filter_w.shape[0] != self.compress_w.shape[0]:
            raise ValueError("filter_w must be (K, kh, kw) with one output channel")

    @property
    def in_channels(self):
        return self.compress_w.shape[1]

    @property
    def kernel_size(self):
        return self.filter_w.shape[1:]

    def blocks(self):
        return {name: getattr(self, name) for name in BLOCKS}

    def with_blocks(self, **blocks):
        return replace(self, **blocks)

    def with_filter(self, w):
        return replace(self, filter_w=np.asarray(w, dtype=np.float64).reshape(self.filter_w.shape))

    def lam(self, name):
        return float(self.reg_lambda.get(name, 0.0))


def init_params(in_channels, seed, compressed=64, reduction=4, kernel=4,
                reg_lambda=None, attention=True) -> ClassifierParams:
    """He-scaled random compression/attention, zero filter."""
    rng = np.random.default_rng(seed)
    hidden = max(1, compressed // reduction)

    def he(out, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out, fan_in))

    return ClassifierParams(
        compress_w=he(compressed, in_channels),
        compress_b=np.zeros(compressed),
        fc1_w=he(hidden, compressed),
        fc1_b=np.zeros(hidden),
        fc2_w=he(compressed, hidden),
        fc2_b=np.zeros(compressed),
        filter_w=np.zeros((compressed, kernel, kernel)),
        reg_lambda={"filter_w": 1e-2} if reg_lambda is None else dict(reg_lambda),
        attention=attention,
    )


@dataclass(frozen=True)
class AttentionState:
    channel_scale: np.ndarray   # (K,) in (0, 1)
    spatial_weight: np.ndarray  # (H, W), sums to 1


STEP_GROUPS = (("filter_w",), FROZEN_BLOCKS)
# step-size growth after an accepted step; rejected steps halve it
LR_GROWTH = 1.5
# |pre-activation| cap keeping the float64 sigmoid strictly inside (0, 1)
SIGMOID_CAP = 30.0


def _sigmoid(x):
    x = np.clip(x, -SIGMOID_CAP, SIGMOID_CAP)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


# ------------------------------------------------------------ filter correlation

def _pads(kh, kw):
    pt, pl = (kh - 1) // 2, (kw - 1) // 2
    return pt, kh - 1 - pt, pl, kw - 1 - pl


def _shifts(kernel_size, H, W):
    """For each tap ``k = i*kw + j``: output rows/cols and the matching input rows/cols."""
    kh, kw = kernel_size
    pt, _, pl, _ = _pads(kh, kw)
    out = []
    for i in range(kh):
        for j in range(kw):
            dy, dx = i - pt, j - pl
            oy = slice(max(0, -dy), min(H, H - dy))
            ox = slice(max(0, -dx), min(W, W - dx))
            iy = slice(oy.start + dy, oy.stop + dy)
            ix = slice(ox.start + dx, ox.stop + dx)
            out.append((oy, ox, iy, ix))
    return out


def filter_apply(Z, w):
    """Same-mode (zero padded) correlation of maps ``Z`` (N, K, H, W) with ``w`` (K, kh, kw)."""
    N, K, H, W = Z.shape
    _, kh, kw = w.shape
    taps = w.reshape(K, kh * kw).T.astype(Z.dtype) @ Z.reshape(N, K, H * W)     # (N, kh*kw, H*W)
    taps = taps.reshape(N, kh * kw, H, W)
    out = np.zeros((N, H, W), dtype=Z.dtype)
    for k, (oy, ox, iy, ix) in enumerate(_shifts((kh, kw), H, W)):
        out[:, oy, ox] += taps[:, k, iy, ix]
    return out


def _spread(dout, kernel_size):
    """Adjoint of the tap shifts: (N, kh*kw, H*W) with ``dout`` moved to each tap's input cells."""
    N, H, W = dout.shape
    kh, kw = kernel_size
    D = np.zeros((N, kh * kw, H, W), dtype=dout.dtype)
    for k, (oy, ox, iy, ix) in enumerate(_shifts(kernel_size, H, W)):
        D[:, k, iy, ix] = dout[:, oy, ox]
    return D.reshape(N, kh * kw, H * W)


def filter_adjoint(Z, dout, kernel_size):
    """Gradient of ``sum(dout * filter_apply(Z, w))`` with respect to ``w``."""
    N, K, H, W = Z.shape
    D = _spread(dout, kernel_size)
    Zf = Z.reshape(N, K, H * W)
    g = np.zeros((K, D.shape[1]))
    for n in range(N):
        g += Zf[n] @ D[n].T
    return g.reshape(K, *kernel_size)


def filter_input_adjoint(w, dout):
    """Gradient of ``sum(dout * filter_apply(Z, w))`` with respect to ``Z``."""
    K, kh, kw = w.shape
    N, H, W = dout.shape
    D = _spread(dout, (kh, kw))
    return (w.reshape(K, kh * kw).astype(D.dtype) @ D).reshape(N, K, H, W)


# ---------------------------------------------------------------------- forward

def _attend(X, p):
    """Target-specific features Z for a batch X (N, C, H, W), plus backprop cache.

    Intermediates are kept flat as (N, K, H*W).
    """
    N, C, H, W = X.shape
    if C != p.in_channels:
        raise ValueError(f"feature channels {C} != classifier input channels {p.in_channels}")
    HW = H * W
    Xf = X.reshape(N, C, HW)
    P = p.compress_w @ Xf + p.compress_b[:, None]
    U = np.maximum(P, 0.0)
    cache = {"Xf": Xf, "P": P, "U": U}
    K = U.shape[1]
    if not p.attention:
        cache.update(s=np.ones((N, K), dtype=X.dtype), A=np.full((N, HW), 1.0 / HW, dtype=X.dtype))
        return U.reshape(N, K, H, W), cache
    g = U.mean(axis=2)
    a1 = g @ p.fc1_w.T + p.fc1_b
    h = np.maximum(a1, 0.0)
    a2 = h @ p.fc2_w.T + p.fc2_b
    s = _sigmoid(a2)
    m = np.einsum("nk,nkp->np", s, U) / K           # channel mean of V = s * U
    e = np.exp(m - m.max(axis=1, keepdims=True))
    A = e / e.sum(axis=1, keepdims=True)
    gate = 1.0 + HW * A
    Z = U * s[:, :, None]
    Z *= gate[:, None, :]
    cache.update(g=g, a1=a1, h=h, s=s, A=A, gate=gate)
    return Z.reshape(N, K, H, W), cache


def attend(X, params: ClassifierParams):
    """Frozen-part output Z (N, K, H, W) for a batch of raw features."""
    return _attend(np.asarray(X, dtype=np.float64), params)[0]


def forward_batch(X, params: ClassifierParams):
    X = np.asarray(X, dtype=np.float64)
    return filter_apply(attend(X, params), params.filter_w)


def score_geometry(feat: FeatureMap, params: ClassifierParams):
    kh, kw = params.kernel_size
    pt, _, pl, _ = _pads(kh, kw)
    s = feat.stride
    return s, (feat.origin[0] + ((kh - 1) / 2.0 - pt) * s, feat.origin[1] + ((kw - 1) / 2.0 - pl) * s)


def forward(feat: FeatureMap, params: ClassifierParams):
    """Score map (same spatial size as ``feat``) and the attention used."""
    Z, cache = _attend(feat.data[None], params)
    out = filter_apply(Z, params.filter_w)[0]
    stride, origin = score_geometry(feat, params)
    att = AttentionState(channel_scale=cache["s"][0], spatial_weight=cache["A"][0].reshape(feat.data.shape[1:]))
    return ScoreMap(out, stride, origin), att


# ------------------------------------------------------------------- gradients

def regularizer(params: ClassifierParams):
    return sum(params.lam(n) * float(np.sum(getattr(params, n) ** 2)) for n in BLOCKS)


def _cast(params: ClassifierParams, dtype):
    blocks = {n: getattr(params, n).astype(dtype, copy=False) for n in BLOCKS}
    return SimpleNamespace(**blocks, attention=params.attention, in_channels=params.in_channels,
                           kernel_size=params.kernel_size)


def batch_loss_and_grads(X, Y, weights, params: ClassifierParams, need_grads=True, dtype=np.float64):
    """Weighted squared error plus block regularisers, and its exact gradient.

    ``dtype`` sets the working precision of the batch arithmetic; the loss is
    accumulated and the gradients returned in float64.
    """
    X = np.asarray(X, dtype=dtype)
    Y = np.asarray(Y, dtype=dtype)
    wts = np.asarray(weights, dtype=dtype)
    p = params if dtype == np.float64 else _cast(params, dtype)
    N, _, H, W = X.shape
    HW = H * W
    Z, c = _attend(X, p)
    ks = params.kernel_size
    f = filter_apply(Z, p.filter_w)
    res = f - Y
    loss = float(np.sum(wts[:, None, None] * res * res, dtype=np.float64)) + regularizer(params)
    if not need_grads:
        return loss, None

    df = 2.0 * wts[:, None, None] * res
    grads = {"filter_w": filter_adjoint(Z, df, ks)}
    dZ = filter_input_adjoint(p.filter_w, df).reshape(N, -1, HW)
    U, s = c["U"], c["s"]
    K = U.shape[1]

    if p.attention:
        A, gate = c["A"], c["gate"]
        # Z = s*U*gate, gate = 1 + HW*softmax(mean_k(s*U))
        dZU = dZ * U
        dA = HW * np.einsum("nk,nkp->np", s, dZU)
        dm = A * (dA - np.sum(A * dA, axis=1, keepdims=True))
        ds = np.einsum("nkp,np->nk", dZU, gate) + np.einsum("nkp,np->nk", U, dm) / K
        da2 = ds * s * (1.0 - s)
        grads["fc2_w"] = da2.T @ c["h"]
        grads["fc2_b"] = da2.sum(axis=0)
        da1 = (da2 @ p.fc2_w) * (c["a1"] > 0)
        grads["fc1_w"] = da1.T @ c["g"]
        grads["fc1_b"] = da1.sum(axis=0)
        dg = da1 @ p.fc1_w
        # dU = s*(dZ*gate + dm/K) + dg/HW
        dU = dZ * gate[:, None, :]
        dU += dm[:, None, :] / K
        dU *= s[:, :, None]
        dU += dg[:, :, None] / HW
    else:
        dU = dZ
        for name in ("fc1_w", "fc1_b", "fc2_w", "fc2_b"):
            grads[name] = np.zeros_like(getattr(params, name))

    dU *= c["P"] > 0
    Xf = c["Xf"]
    gw = np.zeros(p.compress_w.shape)
    for n in range(N):
        gw += dU[n] @ Xf[n].T
    grads["compress_w"] = gw
    grads["compress_b"] = dU.sum(axis=(0, 2))
    for name in BLOCKS:
        grads[name] = np.asarray(grads[name], dtype=np.float64)
        lam = params.lam(name)
        if lam:
            grads[name] = grads[name] + 2.0 * lam * getattr(params, name)
    return loss, grads


def gradients(feat: FeatureMap, label: ScoreMap, weight: float, params: ClassifierParams):
    """Gradient of ``weight*||forward(feat) - label||^2 + sum_k lambda_k ||w_k||^2``."""
    if label.data.shape != feat.data.shape[1:]:
        raise ValueError(f"label shape {label.data.shape} != score shape {feat.data.shape[1:]}")
    if weight < 0:
        raise ValueError("weight must be >= 0")
    return batch_loss_and_grads(feat.data[None], label.data[None], [weight], params)[1]


def _stack(samples):
    X = np.stack([f.data for f, _, _ in samples])
    Y = np.stack([y.data for _, y, _ in samples])
    w = np.array([float(g) for _, _, g in samples])
    return X, Y, w


def total_loss(samples, params: ClassifierParams):
    X, Y, w = _stack(samples)
    return batch_loss_and_grads(X, Y, w, params, need_grads=False)[0]


def finetune_init(samples, params: ClassifierParams, steps: int = 60, lr: float = 0.01,
                  max_halvings: int = 40, dtype=np.float64) -> ClassifierParams:
    """Gradient descent on every block with backtracking.

    The filter and the frozen-later blocks take alternate steps, each group
    with its own rate: the filter's curvature is orders of magnitude larger,
    and one shared rate would stall the others. A step that would raise the
    loss halves that group's rate and is retried; an accepted step grows it
    by ``LR_GROWTH``. The result is re-checked in float64, so the returned
    loss never exceeds the starting loss whatever the working ``dtype``.
    """
    if not samples:
        raise ValueError("need at least one sample")
    if steps < 1 or not lr > 0:
        raise ValueError("steps must be >= 1 and lr > 0")
    X, Y, w = _stack(samples)
    start = params
    loss, grads = batch_loss_and_grads(X, Y, w, params, dtype=dtype)
    rates = [lr for _ in STEP_GROUPS]
    for _ in range(steps):
        for gi, names in enumerate(STEP_GROUPS):
            for _ in range(max_halvings):
                trial = params.with_blocks(**{n: getattr(params, n) - rates[gi] * grads[n] for n in names})
                trial_loss, trial_grads = batch_loss_and_grads(X, Y, w, trial, dtype=dtype)
                if trial_loss <= loss:
                    break
                rates[gi] *= 0.5
            else:
                continue
            params, loss, grads = trial, trial_loss, trial_grads
            rates[gi] *= LR_GROWTH
    if dtype != np.float64 and total_loss(samples, params) > total_loss(samples, start):
        return start
    return params


# --------------------------------------------------------------- serialization

_MAGIC = b"OTCP"
_VERSION = 1


def params_to_bytes(params: ClassifierParams) -> bytes:
    """Flat little-endian record: header, then every block as name/shape/float64 data."""
    out = [_MAGIC, struct.pack("<IIB", _VERSION, len(BLOCKS), int(params.attention))]
    for name in BLOCKS:
        arr = np.ascontiguousarray(getattr(params, name), dtype="<f8")
        raw = name.encode()
        out.append(struct.pack("<B", len(raw)) + raw)
        out.append(struct.pack("<d", params.lam(name)))
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def params_from_bytes(buf: bytes) -> ClassifierParams:
    if buf[:4] != _MAGIC:
        raise ValueError("not a classifier parameter record")
    version, nblocks, attention = struct.unpack_from("<IIB", buf, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported parameter record version {version}")
    pos = 4 + struct.calcsize("<IIB")
    blocks, lam = {}, {}
    for _ in range(nblocks):
        (n,) = struct.unpack_from("<B", buf, pos)
        name = buf[pos + 1:pos + 1 + n].decode()
        pos += 1 + n
        (lam_v,) = struct.unpack_from("<d", buf, pos)
        pos += 8
        (ndim,) = struct.unpack_from("<B", buf, pos)
        shape = struct.unpack_from(f"<{ndim}I", buf, pos + 1)
        pos += 1 + 4 * ndim
        size = int(np.prod(shape)) * 8
        blocks[name] = np.frombuffer(buf[pos:pos + size], dtype="<f8").reshape(shape).copy()
        pos += size
        if lam_v:
            lam[name] = lam_v
    return ClassifierParams(**blocks, reg_lambda=lam, attention=bool(attention))

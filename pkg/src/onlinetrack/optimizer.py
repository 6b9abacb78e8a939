"""Sample memory and the filter solver.

With compression and attention frozen the score is ``f_j = J_j w`` for a fixed
linear map ``J_j`` (same-mode correlation of the attended features), so

    L(w) = sum_j gamma_j ||J_j w - y_j||^2 + lambda ||w||^2

is an exact quadratic. Each Gauss-Newton step therefore solves the normal
equations ``(sum_j gamma_j J_j^T J_j + lambda I) w = sum_j gamma_j J_j^T y_j``
with conjugate gradient, never materialising the matrix.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .classifier import ClassifierParams, attend, filter_adjoint, filter_apply
from .featmap import FeatureMap, ScoreMap

log = logging.getLogger(__name__)

INITIAL_FLOOR = 0.25


@dataclass(frozen=True)
class MemoryEntry:
    feat: FeatureMap
    label: ScoreMap
    gamma: float
    frame_index: int
    protected: bool = False


class SampleMemory:
    """Bounded training set with recency weights summing to one.

    Protected (first-frame) entries are never evicted and keep at least
    ``INITIAL_FLOOR`` of the total weight while any unprotected entry exists.
    """

    def __init__(self, capacity: int = 250):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.entries: list[MemoryEntry] = []

    def __len__(self):
        return len(self.entries)

    @property
    def gammas(self):
        return np.array([e.gamma for e in self.entries])

    def copy(self):
        mem = SampleMemory(self.capacity)
        mem.entries = list(self.entries)
        return mem

    def _next_index(self, frame_index):
        last = self.entries[-1].frame_index if self.entries else None
        if frame_index is None:
            return 0 if last is None else last + 1
        if last is not None and frame_index <= last:
            raise ValueError(f"frame_index {frame_index} must exceed the newest entry's {last}")
        return frame_index

    def add_initial(self, samples, frame_index: int = 0):
        """Fill an empty memory with protected, equally weighted samples ``[(feat, label), ...]``."""
        if self.entries:
            raise ValueError("initial samples go into an empty memory")
        if not samples or len(samples) > self.capacity:
            raise ValueError(f"need between 1 and {self.capacity} initial samples")
        new = [MemoryEntry(f, y, 0.0, frame_index, True) for f, y in samples]
        self._set_weights(new, np.ones(len(new)))
        return self

    def add(self, feat: FeatureMap, label: ScoreMap, rate: float, frame_index: int | None = None):
        """Insert a sample with weight ``rate``; older weights decay by ``1 - rate``."""
        if not 0.0 < rate < 1.0:
            raise ValueError(f"rate must lie in (0, 1), got {rate}")
        idx = self._next_index(frame_index)
        entries = list(self.entries)
        if len(entries) >= self.capacity:
            victims = [i for i, e in enumerate(entries) if not e.protected]
            if not victims:
                raise ValueError("memory is full of protected entries")
            del entries[victims[0]]
        entry = MemoryEntry(feat, label, 0.0, idx, False)
        if not entries:
            self._set_weights([entry], np.ones(1))
            return self
        old = np.array([e.gamma for e in entries])
        old = old / old.sum() * (1.0 - rate)
        self._set_weights(entries + [entry], np.r_[old, rate])
        return self

    def _set_weights(self, entries, weights):
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
        prot = np.array([e.protected for e in entries])
        mass = w[prot].sum()
        if prot.any() and not prot.all() and mass < INITIAL_FLOOR:
            w[prot] *= INITIAL_FLOOR / mass
            w[~prot] *= (1.0 - INITIAL_FLOOR) / w[~prot].sum()
        self.entries = [replace(e, gamma=float(g)) for e, g in zip(entries, w)]

    def protected_mass(self):
        return float(sum(e.gamma for e in self.entries if e.protected))


def add_sample(mem: SampleMemory, feat, label, rate, frame_index=None) -> SampleMemory:
    return mem.add(feat, label, rate, frame_index)


# ------------------------------------------------------------------- quadratic

class FilterQuadratic:
    """Matrix-free normal equations for the filter over a memory snapshot."""

    def __init__(self, Z, labels, gammas, lam, kernel_size):
        self.Z = Z
        self.labels = labels
        self.gammas = gammas
        self.lam = float(lam)
        self.kernel_size = tuple(kernel_size)
        self.shape = (Z.shape[1],) + self.kernel_size
        self.n = int(np.prod(self.shape))
        self.rhs = self.jacobian_t(self.gammas[:, None, None] * self.labels)

    def jacobian(self, v):
        return filter_apply(self.Z, np.reshape(v, self.shape))

    def jacobian_t(self, r):
        return filter_adjoint(self.Z, r, self.kernel_size).ravel()

    def matvec(self, v):
        v = np.asarray(v, dtype=np.float64).ravel()
        return self.jacobian_t(self.gammas[:, None, None] * self.jacobian(v)) + self.lam * v

    __call__ = matvec

    def loss(self, w):
        w = np.asarray(w, dtype=np.float64).ravel()
        res = self.jacobian(w) - self.labels
        return float(np.sum(self.gammas[:, None, None] * res * res) + self.lam * w @ w)


def build_quadratic(mem: SampleMemory, params: ClassifierParams) -> FilterQuadratic:
    if not len(mem):
        raise ValueError("memory is empty")
    X = np.stack([e.feat.data for e in mem.entries])
    Y = np.stack([e.label.data for e in mem.entries])
    if Y.shape[1:] != X.shape[2:]:
        raise ValueError(f"label shape {Y.shape[1:]} != feature shape {X.shape[2:]}")
    return FilterQuadratic(attend(X, params), Y, mem.gammas, params.lam("filter_w"), params.kernel_size)


def filter_loss(mem: SampleMemory, params: ClassifierParams) -> float:
    """Full objective (data term plus every block regulariser) at ``params``."""
    q = build_quadratic(mem, params)
    other = sum(params.lam(n) * float(np.sum(getattr(params, n) ** 2))
                for n in params.reg_lambda if n != "filter_w")
    return q.loss(params.filter_w) + other


# -------------------------------------------------------------------------- CG

@dataclass(frozen=True)
class CGState:
    x: np.ndarray
    residual: np.ndarray
    direction: np.ndarray
    alpha: float
    iteration: int


class CurvatureError(ArithmeticError):
    """Raised when CG meets a direction with non-positive curvature."""


def _as_operator(op):
    if callable(op):
        return op
    mat = np.asarray(op, dtype=np.float64)
    return lambda v: mat @ v


def cg_solve(operator, rhs, x0=None, max_iter=None, tol=1e-10, callback=None):
    """Conjugate gradient for a symmetric positive definite system.

    Stops once ``||b - A x|| <= tol * ||b||`` or after ``max_iter`` steps.
    ``callback`` receives a :class:`CGState` after every iteration.

    Each new residual is re-orthogonalised against the earlier ones. In exact
    arithmetic this changes nothing; in floating point it restores the
    finite-termination property, so ``max_iter = dim`` solves the system.
    """
    A = _as_operator(operator)
    b = np.asarray(rhs, dtype=np.float64).ravel()
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64).ravel()
    if max_iter is None:
        max_iter = b.size
    if max_iter < 1 or not tol > 0:
        raise ValueError("max_iter must be >= 1 and tol > 0")
    bnorm = np.linalg.norm(b)
    r = b - A(x)
    rr = r @ r
    stop = tol * bnorm
    if np.sqrt(rr) <= stop or rr == 0.0:
        return x
    p = r.copy()
    basis = [r / np.sqrt(rr)]
    for k in range(1, max_iter + 1):
        Ap = A(p)
        curv = p @ Ap
        if not curv > 0:
            raise CurvatureError(f"non-positive curvature p'Ap = {curv:g} at iteration {k}")
        alpha = rr / curv
        x = x + alpha * p
        r = r - alpha * Ap
        Q = np.array(basis)
        for _ in range(2):  # twice is enough
            r = r - Q.T @ (Q @ r)
        rr_new = r @ r
        if callback is not None:
            callback(CGState(x, r, p, alpha, k))
        if np.sqrt(rr_new) <= stop:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
        basis.append(r / np.sqrt(rr))
    return x


def update_filter(mem: SampleMemory, params: ClassifierParams, gn_steps: int = 1,
                  cg_iters: int = 5, tol: float = 1e-10) -> ClassifierParams:
    """Re-fit ``filter_w`` on the memory; all other blocks are returned untouched."""
    if gn_steps < 1 or cg_iters < 1:
        raise ValueError("gn_steps and cg_iters must be >= 1")
    q = build_quadratic(mem, params)
    w = params.filter_w.ravel()
    for _ in range(gn_steps):
        w = cg_solve(q, q.rhs, w, cg_iters, tol)
    log.debug("filter update: %d samples, loss %.6g", len(mem), q.loss(w))
    return params.with_filter(w)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onlinetrack import classifier as clf
from onlinetrack.featmap import FeatureMap, ScoreMap
from onlinetrack.optimizer import (INITIAL_FLOOR, CurvatureError, SampleMemory, add_sample, build_quadratic,
                                   cg_solve, filter_loss, update_filter)


def sample(rng, C=2, H=5, W=5):
    return FeatureMap(rng.random((C, H, W))), ScoreMap(rng.random((H, W)))


def random_spd(rng, n):
    A = rng.standard_normal((n, n))
    return A @ A.T + n * 0.1 * np.eye(n)


# --------------------------------------------------------------------- memory

def test_single_sample_weight_one(rng):
    mem = add_sample(SampleMemory(), *sample(rng), 0.01)
    assert len(mem) == 1 and mem.entries[0].gamma == 1.0


def test_capacity_replaces_oldest(rng):
    mem = SampleMemory(250).add_initial([sample(rng)], frame_index=0)
    for t in range(1, 250):
        mem.add(*sample(rng, H=2, W=2), 0.01, frame_index=t)
    assert len(mem) == 250
    oldest = min(e.frame_index for e in mem.entries if not e.protected)
    mem.add(*sample(rng, H=2, W=2), 0.01, frame_index=250)
    assert len(mem) == 250
    assert min(e.frame_index for e in mem.entries if not e.protected) == oldest + 1
    assert mem.entries[0].protected


def test_two_adds_weight_recursion(rng):
    mem = SampleMemory(10).add_initial([sample(rng)])
    mem.add(*sample(rng), 0.1)
    mem.add(*sample(rng), 0.1)
    # scalar recursion: (1) -> (0.9, 0.1) -> (0.81, 0.09, 0.1); initial mass 0.81 clears the floor
    np.testing.assert_allclose(mem.gammas, [0.81, 0.09, 0.1], atol=1e-12)


def test_protected_floor_after_many_adds(rng):
    mem = SampleMemory(30).add_initial([sample(rng) for _ in range(3)])
    for _ in range(100):
        mem.add(*sample(rng), 0.2)
        assert abs(mem.gammas.sum() - 1.0) < 1e-9
        assert mem.protected_mass() >= INITIAL_FLOOR - 1e-12
    # floor binds: 0.25 split equally over the three initial samples
    np.testing.assert_allclose(mem.gammas[:3], INITIAL_FLOOR / 3, atol=1e-12)


def test_memory_errors(rng):
    mem = SampleMemory(2)
    with pytest.raises(ValueError):
        mem.add(*sample(rng), 1.0)
    mem.add(*sample(rng), 0.5, frame_index=5)
    with pytest.raises(ValueError):
        mem.add(*sample(rng), 0.5, frame_index=5)
    with pytest.raises(ValueError):
        SampleMemory(0)
    full = SampleMemory(1).add_initial([sample(rng)])
    with pytest.raises(ValueError):
        full.add(*sample(rng), 0.5)


@given(st.lists(st.floats(0.001, 0.49), min_size=1, max_size=40), st.integers(2, 12))
@settings(max_examples=60, deadline=None)
def test_memory_invariants(rates, capacity):
    r = np.random.default_rng(0)
    mem = SampleMemory(capacity).add_initial([sample(r, H=2, W=2)])
    for rate in rates:
        mem.add(*sample(r, H=2, W=2), rate)
        idx = [e.frame_index for e in mem.entries]
        assert len(mem) <= capacity
        assert idx == sorted(idx) and len(set(idx)) == len(idx)
        assert abs(mem.gammas.sum() - 1.0) < 1e-9 and np.all(mem.gammas >= 0)
        if len(mem) > 1:
            assert mem.protected_mass() >= INITIAL_FLOOR - 1e-12


# ------------------------------------------------------------------ quadratic

def toy(rng, n=2, lam=1e-2, C=2, H=5, W=5):
    p = clf.init_params(C, int(rng.integers(1000)), compressed=2, reduction=2, kernel=4,
                        reg_lambda={"filter_w": lam}, attention=False)
    mem = SampleMemory(10).add_initial([sample(rng, C, H, W) for _ in range(n)])
    return mem, p


def dense_normal_matrix(q):
    n = q.n
    J = np.stack([q.jacobian(e).ravel() for e in np.eye(n)], axis=1)   # (N*H*W, n)
    g = np.repeat(q.gammas, q.labels[0].size)
    return J.T @ (g[:, None] * J) + q.lam * np.eye(n), J.T @ (g * q.labels.ravel())


def test_operator_matches_dense_matrix(rng):
    p = clf.init_params(2, 0, compressed=2, reduction=2, attention=False).with_blocks(
        compress_w=np.eye(2), compress_b=np.zeros(2))
    delta = np.zeros((2, 5, 5))
    delta[0, 2, 2] = 1.0
    delta[1, 1, 3] = 0.5
    mem = SampleMemory(3).add_initial([(FeatureMap(delta), ScoreMap(rng.random((5, 5))))])
    q = build_quadratic(mem, p)
    A, b = dense_normal_matrix(q)
    for v in rng.standard_normal((5, q.n)):
        np.testing.assert_allclose(q.matvec(v), A @ v, atol=1e-9)
    np.testing.assert_allclose(q.rhs, b, atol=1e-9)


def test_operator_pure_regularizer():
    p = clf.init_params(2, 0, compressed=2, reduction=2, attention=False, reg_lambda={"filter_w": 0.3})
    mem = SampleMemory(2).add_initial([(FeatureMap(np.zeros((2, 5, 5))), ScoreMap(np.zeros((5, 5))))])
    q = build_quadratic(mem, p)
    v = np.random.default_rng(1).standard_normal(q.n)
    np.testing.assert_allclose(q.matvec(v), 0.3 * v, atol=1e-15)


def test_operator_symmetric_and_linear(rng):
    mem, p = toy(rng, n=3)
    q = build_quadratic(mem, p)
    u, v = rng.standard_normal((2, q.n))
    assert abs(v @ q.matvec(u) - u @ q.matvec(v)) <= 1e-9 * max(1.0, abs(v @ q.matvec(u)))
    np.testing.assert_allclose(q.matvec(2 * u - v), 2 * q.matvec(u) - q.matvec(v), rtol=1e-9, atol=1e-9)


def test_build_quadratic_empty():
    with pytest.raises(ValueError):
        build_quadratic(SampleMemory(), clf.init_params(2, 0))


# ------------------------------------------------------------------------ CG

def test_cg_identity_one_iteration():
    seen = []
    b = np.array([1.0, -2.0, 3.0])
    x = cg_solve(np.eye(3), b, max_iter=10, callback=seen.append)
    np.testing.assert_allclose(x, b)
    assert len(seen) == 1


def test_cg_two_by_two():
    x = cg_solve(np.array([[4.0, 1.0], [1.0, 3.0]]), np.array([1.0, 2.0]), max_iter=2)
    np.testing.assert_allclose(x, [1 / 11, 7 / 11], atol=1e-12)


def test_cg_random_8x8(rng):
    A = random_spd(rng, 8)
    b = rng.standard_normal(8)
    np.testing.assert_allclose(cg_solve(A, b, max_iter=8, tol=1e-14), np.linalg.solve(A, b), rtol=1e-8)


def test_cg_energy_error_monotone_and_conjugacy(rng):
    for n in (4, 9, 16):
        A = random_spd(rng, n)
        b = rng.standard_normal(n)
        xs = np.linalg.solve(A, b)
        errs, dirs = [], []

        def cb(state):
            e = state.x - xs
            errs.append(e @ A @ e)
            dirs.append(state.direction)
            for p in dirs[:-1]:
                assert abs(p @ A @ state.direction) <= 1e-6 * np.linalg.norm(A @ p) * np.linalg.norm(state.direction)
            for p in dirs:
                assert abs(p @ state.residual) <= 1e-6 * np.linalg.norm(p) * max(np.linalg.norm(b), 1.0)

        cg_solve(A, b, max_iter=n, tol=1e-14, callback=cb)
        assert all(e1 <= e0 * (1 + 1e-9) for e0, e1 in zip(errs, errs[1:]))


def test_cg_detects_bad_operator():
    with pytest.raises(CurvatureError):
        cg_solve(np.array([[-1.0, 0.0], [0.0, 1.0]]), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        cg_solve(np.eye(2), np.ones(2), max_iter=0)


def test_cg_callback_state(rng):
    states = []
    cg_solve(random_spd(rng, 5), rng.standard_normal(5), max_iter=3, callback=states.append)
    assert [s.iteration for s in states] == [1, 2, 3]
    assert all(s.alpha > 0 for s in states)


# ------------------------------------------------------------- update_filter

def test_update_filter_keeps_optimal_filter(rng):
    p = clf.init_params(2, 3, compressed=4, attention=False, reg_lambda={"filter_w": 0.0})
    p = p.with_filter(rng.standard_normal(p.filter_w.shape))
    feat = FeatureMap(rng.random((2, 6, 6)))
    label, _ = clf.forward(feat, p)
    mem = SampleMemory(3).add_initial([(feat, label)])
    q = update_filter(mem, p, 1, 5)
    np.testing.assert_allclose(q.filter_w, p.filter_w, atol=1e-9)


def test_update_filter_only_touches_filter(rng):
    mem, p = toy(rng, n=2)
    q = update_filter(mem, p, 2, 5)
    for name in clf.FROZEN_BLOCKS:
        assert getattr(q, name) is getattr(p, name)


def test_update_filter_idempotent_after_init_schedule():
    # 16 unknowns: the 6 x 10 schedule solves the quadratic outright
    r = np.random.default_rng(7)
    p = clf.init_params(3, 7, compressed=1, reduction=1, reg_lambda={"filter_w": 1e-2}, attention=False)
    mem = SampleMemory(4).add_initial([(FeatureMap(r.random((3, 6, 6))), ScoreMap(r.random((6, 6))))
                                       for _ in range(3)])
    q = update_filter(mem, p, 6, 10)
    q2 = update_filter(mem, q, 6, 10)
    n1, n2 = np.linalg.norm(q.filter_w), np.linalg.norm(q2.filter_w)
    assert n1 > 0 and abs(n2 - n1) < 1e-6 * n1


def test_converged_update_is_idempotent(rng):
    mem, p = toy(rng, n=4)
    n = p.filter_w.size
    q = update_filter(mem, p, 3, n)
    q2 = update_filter(mem, q, 3, n)
    n1, n2 = np.linalg.norm(q.filter_w), np.linalg.norm(q2.filter_w)
    assert abs(n2 - n1) < 1e-6 * n1


def test_update_filter_descends(rng):
    for _ in range(20):
        mem, p = toy(rng, n=int(rng.integers(1, 5)), lam=float(rng.uniform(1e-3, 1.0)))
        p = p.with_filter(rng.standard_normal(p.filter_w.shape))
        before = filter_loss(mem, p)
        assert filter_loss(mem, update_filter(mem, p, 1, int(rng.integers(1, 8)))) <= before + 1e-10


def test_unique_solution_from_any_start(rng):
    mem, p = toy(rng, n=3, lam=0.1)
    a = update_filter(mem, p, 1, 200, tol=1e-14)
    b = update_filter(mem, p.with_filter(rng.standard_normal(p.filter_w.shape) * 5), 1, 200, tol=1e-14)
    np.testing.assert_allclose(a.filter_w, b.filter_w, rtol=1e-6, atol=1e-9)


def test_update_filter_preconditions(rng):
    mem, p = toy(rng)
    with pytest.raises(ValueError):
        update_filter(mem, p, 0, 5)

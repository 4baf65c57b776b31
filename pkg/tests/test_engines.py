import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsf.core import DsfDense
from dsf.engines import (
    ENGINES,
    apply_kernel,
    materialize_kernel,
    run,
    run_kernel,
    run_scan,
    run_sequential,
    scan_linear,
    timed_run,
)
from dsf.errors import CapExceededError, DimensionError, PreconditionError
from dsf.registry import random_dense_system


def loop_oracle(sys, u):
    """Full-matrix recurrence with explicit loops, independent of the engines."""
    L, N, d = sys.L, sys.N, sys.d
    h = np.array(sys.h_init, dtype=float)
    y = np.zeros((L, d))
    for i in range(L):
        A = np.diag(sys.lam[i])
        h = A @ h + sys.B[i] @ u[i]
        for a in range(d):
            acc = 0.0
            for k in range(N):
                acc += sys.C[i, a, k] * h[k]
            if sys.D is not None:
                acc += sys.D[i, a] * u[i, a]
            y[i, a] = acc
    return y


def test_cumsum_example():
    ones = np.ones((3, 1))
    sys = DsfDense(ones, ones[:, :, None], ones[:, :, None])
    u = np.array([[1.0], [2.0], [3.0]])
    for engine in ENGINES:
        assert np.allclose(run(sys, u, engine), [[1.0], [3.0], [6.0]], atol=0, rtol=0)


def test_zero_transition_is_memoryless():
    L, d = 5, 2
    B = np.broadcast_to(np.eye(d), (L, d, d))
    sys = DsfDense(np.zeros((L, d)), B, B)
    u = np.random.default_rng(0).standard_normal((L, d))
    for engine in ENGINES:
        assert np.array_equal(run(sys, u, engine), u)


@settings(max_examples=60, deadline=None)
@given(
    N=st.integers(1, 5),
    d=st.integers(1, 4),
    L=st.integers(0, 20),
    seed=st.integers(0, 10_000),
    h0=st.booleans(),
)
def test_engines_match_loop_oracle(N, d, L, seed, h0):
    sys = random_dense_system(seed, N, d, L, h_init=h0)
    u = np.random.default_rng(seed).standard_normal((L, d))
    expected = loop_oracle(sys, u)
    for engine in ENGINES:
        assert np.max(np.abs(run(sys, u, engine) - expected), initial=0.0) <= 1e-12


def test_single_step_scan_is_exact():
    sys = random_dense_system(3, 4, 3, 1, h_init=True)
    u = np.random.default_rng(3).standard_normal((1, 3))
    assert np.array_equal(run_scan(sys, u), run_sequential(sys, u))


@pytest.mark.parametrize("L", [1, 2, 3, 7, 8, 33])
def test_scan_linear_against_loop(L):
    rng = np.random.default_rng(L)
    a, b = rng.uniform(-1, 1, (L, 3)), rng.standard_normal((L, 3))
    h, expected = np.zeros(3), []
    for i in range(L):
        h = a[i] * h + b[i]
        expected.append(h)
    assert np.allclose(scan_linear(a, b), expected, atol=1e-13, rtol=0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), alpha=st.floats(-3, 3), beta=st.floats(-3, 3))
def test_linearity(seed, alpha, beta):
    sys = random_dense_system(seed, 3, 2, 10)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, 10, 2))
    for engine in ENGINES:
        lhs = run(sys, alpha * u + beta * v, engine)
        rhs = alpha * run(sys, u, engine) + beta * run(sys, v, engine)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(0, 11))
def test_causality(seed, k):
    sys = random_dense_system(seed, 3, 2, 12)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((12, 2))
    v = u.copy()
    v[k:] = rng.standard_normal((12 - k, 2))
    for engine in ENGINES:
        assert np.array_equal(run(sys, u, engine)[:k], run(sys, v, engine)[:k])


def test_kernel_is_block_lower_triangular():
    sys = random_dense_system(1, 4, 3, 9)
    blocks = materialize_kernel(sys).blocks
    for i in range(9):
        for j in range(i + 1, 9):
            assert not np.any(blocks[i, j])


def test_kernel_block_formula():
    sys = random_dense_system(2, 3, 2, 6)
    blocks = materialize_kernel(sys).blocks
    i, j = 5, 2
    prod = np.diag(sys.lam[3] * sys.lam[4] * sys.lam[5])
    assert np.allclose(blocks[i, j], sys.C[i] @ prod @ sys.B[j], atol=1e-14, rtol=0)
    assert np.allclose(blocks[j, j], sys.C[j] @ sys.B[j] + np.diag(sys.D[j]), atol=1e-14, rtol=0)


def test_kernel_dense_layout():
    sys = random_dense_system(4, 2, 2, 5, skip=False)
    phi = materialize_kernel(sys)
    u = np.random.default_rng(4).standard_normal((5, 2))
    assert np.allclose((phi.dense() @ u.ravel()).reshape(5, 2), apply_kernel(phi, u), atol=1e-14, rtol=0)


def test_kernel_cap():
    sys = random_dense_system(0, 1, 1, 20)
    with pytest.raises(CapExceededError):
        run_kernel(sys, np.zeros((20, 1)), max_L=10)


def test_input_shape_checked():
    sys = random_dense_system(0, 2, 2, 4)
    with pytest.raises(DimensionError):
        run_sequential(sys, np.zeros((4, 3)))


def test_fingerprint_mismatch():
    from dsf.adapters import linear_attention_to_dsf
    from dsf.registry import parse_kind, random_input, random_weights

    kind = parse_kind("linear")
    w = random_weights(kind, 4, 4, 0)
    u = random_input(6, 4, 0)
    sys = linear_attention_to_dsf(u, w)
    with pytest.raises(PreconditionError):
        run_scan(sys, u + 1.0)


def test_unknown_engine():
    sys = random_dense_system(0, 1, 1, 2)
    with pytest.raises(ValueError):
        run(sys, np.zeros((2, 1)), "fft")


def test_timed_run_reports_deviation():
    sys = random_dense_system(0, 2, 2, 8)
    u = np.ones((8, 2))
    base = run_sequential(sys, u)
    y, rep = timed_run(sys, u, "scan", baseline=base)
    assert rep.engine == "scan" and rep.wall_time >= 0 and rep.max_abs_dev <= 1e-12


@pytest.mark.parametrize("chunk", [1, 2, 3, 5, 64])
def test_chunked_scan_matches_sequential(chunk):
    from dsf.registry import parse_kind, random_input, random_weights

    sys = random_dense_system(9, 3, 2, 23, h_init=True)
    u = np.random.default_rng(9).standard_normal((23, 2))
    assert np.max(np.abs(run_scan(sys, u, chunk=chunk) - run_sequential(sys, u))) <= 1e-12
    kind = parse_kind("multihead:2")
    w = random_weights(kind, 4, 2, 9)
    v = random_input(23, 4, 9)
    fsys = kind.to_dsf(v, w)
    assert np.max(np.abs(run_scan(fsys, v, chunk=chunk) - run_sequential(fsys, v))) <= 1e-12

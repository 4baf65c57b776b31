"""Three evaluation strategies for a DSF system: recurrence, scan, kernel.

All of them accept a :class:`DsfDense`. ``run_sequential`` and ``run_scan``
also accept a :class:`DsfFactored` and then work on the Kronecker factors
directly, which keeps memory at O(L N) instead of O(L N d).
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .core import DsfDense, DsfFactored, densify, fingerprint, validate
from .errors import CapExceededError, DimensionError, PreconditionError

DEFAULT_KERNEL_CAP = 512
SCAN_CHUNK = 256

ENGINES = ("seq", "scan", "kernel")


@dataclass
class EngineReport:
    engine: str
    wall_time: float
    max_abs_dev: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class KernelMatrix:
    """``blocks[i, j]`` is the ``d x d`` block mapping ``u_j`` to ``y_i``."""

    blocks: np.ndarray

    @property
    def L(self) -> int:
        return self.blocks.shape[0]

    @property
    def d(self) -> int:
        return self.blocks.shape[2]

    def dense(self) -> np.ndarray:
        L, d = self.L, self.d
        return self.blocks.transpose(0, 2, 1, 3).reshape(L * d, L * d)


def _check(sys, u) -> np.ndarray:
    validate(u)
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (sys.L, sys.d):
        raise DimensionError(f"input shape {u.shape} does not match system (L={sys.L}, d={sys.d})")
    if sys.fingerprint is not None and fingerprint(u) != sys.fingerprint:
        raise PreconditionError("system was built from a different input sequence")
    return u


def _drive(sys, u, rows: slice = slice(None)) -> np.ndarray:
    """Per-step input contribution B_i u_i for the steps in ``rows``, shape (len, N)."""
    u = u[rows]
    if isinstance(sys, DsfFactored) and sys.B is None:
        v = u @ sys.W_V.T  # (len, d)
        psi_c = sys.psi[rows][:, sys.heads, :]  # (len, d, n)
        return ((sys.in_scale[rows] * v)[:, :, None] * psi_c).reshape(u.shape[0], sys.N)
    return np.einsum("lnd,ld->ln", sys.B[rows], u)


def _readout(sys, h: np.ndarray, u: np.ndarray, rows: slice = slice(None)) -> np.ndarray:
    """y_i = C_i h_i + D_i u_i for the steps in ``rows``; h holds just those steps."""
    u = u[rows]
    if isinstance(sys, DsfFactored) and sys.C is None:
        hc = h.reshape(h.shape[0], sys.d, sys.n)
        y = sys.out_scale[rows] * np.einsum("ldk,ldk->ld", sys.phi[rows][:, sys.heads, :], hc)
    else:
        y = np.einsum("ldn,ln->ld", sys.C[rows], h)
    if sys.D is not None:
        y = y + sys.D[rows] * u
    return y


def _h_init(sys) -> np.ndarray:
    return sys.h_init if isinstance(sys, DsfDense) else np.zeros(sys.N)


def run_sequential(sys, u) -> np.ndarray:
    """Literal recurrence from ``h_init``, one step at a time."""
    u = _check(sys, u)
    bu = _drive(sys, u)
    h = np.empty((sys.L, sys.N))
    prev = _h_init(sys)
    for i in range(sys.L):
        prev = sys.lam[i] * prev + bu[i]
        h[i] = prev
    return _readout(sys, h, u)


def scan_linear(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Inclusive scan of h_i = a_i * h_{i-1} + b_i with h_{-1} = 0.

    Odd/even recursive doubling over the combine
    ``(a, b) . (a', b') = (a a', a' b + b')``; O(L) work, O(log L) depth.
    """
    L = a.shape[0]
    if L <= 1:
        return b.copy()
    m = L // 2
    a0, a1 = a[0 : 2 * m : 2], a[1 : 2 * m : 2]
    b0, b1 = b[0 : 2 * m : 2], b[1 : 2 * m : 2]
    odd = scan_linear(a1 * a0, a1 * b0 + b1)
    h = np.empty_like(b)
    h[1 : 2 * m : 2] = odd
    h[0] = b[0]
    # even steps 2, 4, ... pick up the odd prefix just before them
    n_even = (L - 1) // 2
    h[2 : 2 * n_even + 1 : 2] = a[2::2][:n_even] * odd[:n_even] + b[2::2][:n_even]
    return h


def run_scan(sys, u, chunk: int = SCAN_CHUNK) -> np.ndarray:
    """Parallel scan over blocks of ``chunk`` steps, carrying the state between blocks.

    Blocking keeps the (chunk, N) working set in cache and the peak memory
    independent of L; within a block the scan is the recursive doubling above.
    """
    u = _check(sys, u)
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    y = np.empty((sys.L, sys.d))
    carry = _h_init(sys)
    for start in range(0, sys.L, chunk):
        rows = slice(start, min(start + chunk, sys.L))
        lam = np.asarray(sys.lam[rows])
        bu = _drive(sys, u, rows)
        bu[0] += lam[0] * carry
        h = scan_linear(lam, bu)
        y[rows] = _readout(sys, h, u, rows)
        carry = h[-1]
    return y


def materialize_kernel(sys: DsfDense, max_L: int = DEFAULT_KERNEL_CAP) -> KernelMatrix:
    """Block lower-triangular convolution operator of ``sys``.

    Block (i, j) is ``C_i diag(lam_{j+1} ... lam_i) B_j`` for j < i and
    ``C_i B_i + diag(D_i)`` on the diagonal.
    """
    if not isinstance(sys, DsfDense):
        raise PreconditionError("materialize_kernel needs a DsfDense system; densify first")
    if sys.L > max_L:
        raise CapExceededError(f"L={sys.L} exceeds kernel cap {max_L}")
    L, d = sys.L, sys.d
    blocks = np.zeros((L, L, d, d))
    for j in range(L):
        # running products lam_{j+1} * ... * lam_i, left to right; i = j gets 1
        prods = np.ones((L - j, sys.N))
        if L - j > 1:
            prods[1:] = np.cumprod(sys.lam[j + 1 :], axis=0)
        blocks[j:, j] = np.einsum("ian,in,nb->iab", sys.C[j:], prods, sys.B[j])
    if sys.D is not None:
        idx = np.arange(L)
        blocks[idx, idx] += sys.D[:, :, None] * np.eye(d)
    return KernelMatrix(blocks)


def apply_kernel(phi: KernelMatrix, u) -> np.ndarray:
    validate(u)
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (phi.L, phi.d):
        raise DimensionError(f"input shape {u.shape} does not match kernel (L={phi.L}, d={phi.d})")
    return np.einsum("ijab,jb->ia", phi.blocks, u)


def free_response(sys: DsfDense) -> np.ndarray:
    """Output contribution of ``h_init`` alone: C_i (lam_0 ... lam_i) h_init."""
    if sys.L == 0 or not np.any(sys.h_init):
        return np.zeros((sys.L, sys.d))
    h = np.cumprod(sys.lam, axis=0) * sys.h_init
    return np.einsum("ldn,ln->ld", sys.C, h)


def run_kernel(sys: DsfDense, u, max_L: int = DEFAULT_KERNEL_CAP) -> np.ndarray:
    u = _check(sys, u)
    return apply_kernel(materialize_kernel(sys, max_L), u) + free_response(sys)


def run(sys, u, engine: str = "seq", *, kernel_cap: int = DEFAULT_KERNEL_CAP) -> np.ndarray:
    if engine == "seq":
        return run_sequential(sys, u)
    if engine == "scan":
        return run_scan(sys, u)
    if engine == "kernel":
        if isinstance(sys, DsfFactored):
            if sys.L > kernel_cap:
                raise CapExceededError(f"L={sys.L} exceeds kernel cap {kernel_cap}")
            sys = densify(sys)
        return run_kernel(sys, u, kernel_cap)
    raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")


def timed_run(sys, u, engine: str = "seq", baseline=None, **kw) -> tuple[np.ndarray, EngineReport]:
    t0 = time.perf_counter()
    y = run(sys, u, engine, **kw)
    dt = time.perf_counter() - t0
    dev = None if baseline is None else float(np.max(np.abs(y - baseline), initial=0.0))
    return y, EngineReport(engine, dt, dev)

"""Structural analyses of DSF systems: state embedding, telescoping check,
transition spectra and the Taylor-order convergence study."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .adapters import taylor_dim, taylor_softmax_to_dsf
from .core import DsfDense, DsfFactored, densify
from .engines import DEFAULT_KERNEL_CAP, materialize_kernel, run_scan
from .errors import DimensionError, PreconditionError
from .reference import AttentionWeights, softmax_attention_ref

TELESCOPING_TOL = 1e-10


def _csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


# -- state embedding ----------------------------------------------------------


def embed_system(sys: DsfDense, N_bar: int, fill: str = "zero", seed: int | None = None) -> DsfDense:
    """Embed ``sys`` in a larger state of size ``N_bar`` without changing its output.

    The extra states get their own transition, input rows and initial state
    (zeros, or seeded uniform(-1, 1) values with ``fill="random"``) and are
    never read out: the padded columns of C are zero. The extra states do not
    couple back into the original ones, so the transition stays diagonal.
    """
    if N_bar < sys.N:
        raise DimensionError(f"N_bar={N_bar} is smaller than N={sys.N}")
    extra = N_bar - sys.N
    L, d = sys.L, sys.d
    if fill == "zero":
        lam_x, B_x, h_x = np.zeros((L, extra)), np.zeros((L, extra, d)), np.zeros(extra)
    elif fill == "random":
        rng = np.random.default_rng(seed)
        lam_x = rng.uniform(-1, 1, (L, extra))
        B_x = rng.uniform(-1, 1, (L, extra, d))
        h_x = rng.uniform(-1, 1, extra)
    else:
        raise ValueError(f"unknown fill {fill!r}")
    return DsfDense(
        lam=np.hstack([sys.lam, lam_x]),
        B=np.concatenate([sys.B, B_x], axis=1),
        C=np.concatenate([sys.C, np.zeros((L, d, extra))], axis=2),
        D=sys.D,
        h_init=np.concatenate([sys.h_init, h_x]),
        fingerprint=sys.fingerprint,
    )


# -- telescoping --------------------------------------------------------------


@dataclass
class TelescopingReport:
    residual: float
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _is_attention(sys) -> bool:
    return isinstance(sys, DsfFactored) and sys.eta is not None and sys.psi is not None and sys.phi is not None


def telescoping_report(sys: DsfFactored, tol: float = TELESCOPING_TOL, max_L: int = DEFAULT_KERNEL_CAP) -> TelescopingReport:
    """Compare the unrolled kernel with ``phi(q_i).psi(k_j) / eta_i * W_V``.

    The eta ratios in the transitions and the ``1/eta_j`` in B_j should
    collapse to a single ``1/eta_i`` in every block.
    """
    if not _is_attention(sys):
        raise PreconditionError("telescoping_report needs a system built by an attention adapter")
    blocks = materialize_kernel(densify(sys), max_L).blocks
    heads = sys.heads
    # score[i, j, h] = phi_i^h . psi_j^h / eta_i^h, causal
    score = np.einsum("ihk,jhk->ijh", sys.phi, sys.psi) / sys.eta[:, None, :]
    score *= np.tril(np.ones((sys.L, sys.L)))[:, :, None]
    expected = score[:, :, heads][:, :, :, None] * sys.W_V[None, None, :, :]
    residual = float(np.max(np.abs(blocks - expected), initial=0.0))
    return TelescopingReport(residual, tol, residual <= tol)


def scalar_factorization_residual(sys: DsfFactored, max_L: int = DEFAULT_KERNEL_CAP) -> float:
    """How far the kernel rows are from ``s_i * C_i B_j`` with one scalar per step.

    ``B_j`` here is the raw input factor (attention normalizer removed). For
    each step i the best scalar is fitted by least squares over the blocks
    j <= i; the result is the largest relative residual over i. Attention
    systems give ~0 (the normalizers telescope); selective SSMs with varying
    step sizes do not.
    """
    dense = densify(sys)
    blocks = materialize_kernel(dense, max_L).blocks
    B = dense.B
    if sys.eta is not None:
        B = B * np.repeat(sys.eta[:, sys.heads], sys.n, axis=1)[:, :, None]
    G = np.einsum("ian,jnb->ijab", dense.C, B)
    worst = 0.0
    for i in range(sys.L):
        phi_i, g_i = blocks[i, : i + 1], G[i, : i + 1]
        gg = np.sum(g_i * g_i)
        norm = np.sqrt(np.sum(phi_i * phi_i))
        if norm == 0:
            continue
        s = np.sum(phi_i * g_i) / gg if gg > 0 else 0.0
        worst = max(worst, float(np.sqrt(np.sum((phi_i - s * g_i) ** 2)) / norm))
    return worst


# -- spectra ------------------------------------------------------------------


@dataclass
class SpectralProfile:
    max_abs: np.ndarray
    min_abs: np.ndarray
    envelope: np.ndarray  # running product of max_abs

    def rows(self) -> list[dict]:
        return [
            {"step": i, "max_abs": float(a), "min_abs": float(b), "envelope": float(c)}
            for i, (a, b, c) in enumerate(zip(self.max_abs, self.min_abs, self.envelope))
        ]

    def to_csv(self) -> str:
        return _csv(self.rows())

    def to_dict(self) -> dict:
        return {
            "max_abs": self.max_abs.tolist(),
            "min_abs": self.min_abs.tolist(),
            "envelope": self.envelope.tolist(),
            "peak": float(self.max_abs.max(initial=0.0)),
        }


def spectral_profile(sys) -> SpectralProfile:
    """Eigenvalue magnitudes of each (diagonal) transition."""
    mag = np.abs(np.asarray(sys.lam))
    mx = mag.max(axis=1, initial=0.0)
    mn = mag.min(axis=1, initial=np.inf)
    return SpectralProfile(mx, mn, np.cumprod(mx))


# -- Taylor convergence -------------------------------------------------------


@dataclass
class ConvergenceRow:
    order: int
    feature_dim: int
    max_abs_error: float
    mean_abs_error: float


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow]
    score_scale: float = 1.0

    def to_csv(self) -> str:
        return _csv([asdict(r) for r in self.rows])

    def to_json(self) -> str:
        return json.dumps({"score_scale": self.score_scale, "rows": [asdict(r) for r in self.rows]}, indent=2)

    def errors(self) -> list[float]:
        return [r.max_abs_error for r in self.rows]


def cap_scores(u, w: AttentionWeights, score_cap: float = 1.0) -> tuple[AttentionWeights, float]:
    """Shrink W_Q so that every causal score |q_i . k_j| is at most ``score_cap``."""
    u = np.asarray(u, dtype=np.float64)
    scores = np.tril((u @ w.W_Q.T) @ (u @ w.W_K.T).T)
    top = float(np.max(np.abs(scores), initial=0.0))
    if top <= score_cap or top == 0.0:
        return w, 1.0
    scale = score_cap / top
    return replace(w, W_Q=w.W_Q * scale), scale


def taylor_convergence_study(u, w: AttentionWeights, orders, score_cap: float | None = 1.0) -> ConvergenceTable:
    """Error of the order-p truncated system against exact softmax attention.

    With ``score_cap=None`` the weights are used unscaled.
    """
    scale = 1.0
    if score_cap is not None:
        w, scale = cap_scores(u, w, score_cap)
    exact = softmax_attention_ref(u, w)
    rows = []
    for p in sorted(orders):
        sys = taylor_softmax_to_dsf(u, w, p)
        err = np.abs(run_scan(sys, u) - exact)
        rows.append(
            ConvergenceRow(p, taylor_dim(w.m, p), float(err.max(initial=0.0)), float(err.mean()) if err.size else 0.0)
        )
    return ConvergenceTable(rows, scale)

"""Rewrite attention, selective SSM and gated RNN layers as DSF systems.

Each adapter takes the weights *and* the input sequence, because the system
matrices are input dependent. The resulting :class:`DsfFactored` carries a
fingerprint of ``u`` so it cannot silently be run on another sequence.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .core import DsfFactored, fingerprint
from .errors import CapExceededError, DimensionError, NormalizationError, PreconditionError
from .reference import (
    AttentionWeights,
    QlstmWeights,
    RgLruWeights,
    S6Weights,
    _input,
    elu_plus_one,
    eta_linear,
    s6_delta,
    sigmoid,
    softplus,
)

DEFAULT_FEATURE_CAP = 10**6

FEATURE_KINDS = ("identity", "elu_plus_one", "taylor")
NORMALIZER_KINDS = ("kernel_sum", "exp_linear", "softplus_linear", "sigmoid_linear", "unit")


def taylor_dim(m: int, order: int) -> int:
    return sum(m**j for j in range(order + 1))


@dataclass(frozen=True)
class FeatureMap:
    kind: str = "identity"
    order: int = 0
    cap: int = DEFAULT_FEATURE_CAP

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature map {self.kind!r}")
        if self.order < 0:
            raise ValueError("taylor order must be >= 0")

    def dim(self, m: int) -> int:
        return taylor_dim(m, self.order) if self.kind == "taylor" else m

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Map rows of ``x`` (shape ``(L, m)``) to features ``(L, dim(m))``."""
        if self.kind == "identity":
            return np.array(x, dtype=np.float64)
        if self.kind == "elu_plus_one":
            return elu_plus_one(x)
        return taylor_softmax_features(x, self.order, self.cap)


def taylor_softmax_features(x, order: int, cap: int = DEFAULT_FEATURE_CAP) -> np.ndarray:
    """Scaled Kronecker powers ``[1, x, x(x)x/sqrt(2!), ...]`` up to ``order``.

    Works on a single vector or on the rows of a 2-D array. The inner product
    of two feature vectors is the order-``order`` Taylor polynomial of
    ``exp(q . k)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    rows, m = X.shape
    if m < 1:
        raise DimensionError("feature input must have m >= 1")
    if order < 0:
        raise ValueError("taylor order must be >= 0")
    dim = taylor_dim(m, order)
    if dim > cap:
        raise CapExceededError(f"taylor feature dimension {dim} exceeds cap {cap}")
    out = np.empty((rows, dim))
    out[:, 0] = 1.0
    power = np.ones((rows, 1))
    pos = 1
    for j in range(1, order + 1):
        power = (power[:, :, None] * X[:, None, :]).reshape(rows, -1)
        out[:, pos : pos + power.shape[1]] = power / np.sqrt(factorial(j))
        pos += power.shape[1]
    return out[0] if single else out


@dataclass(frozen=True)
class Normalizer:
    kind: str = "kernel_sum"
    W_eta: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in NORMALIZER_KINDS:
            raise ValueError(f"unknown normalizer {self.kind!r}")
        if self.kind.endswith("_linear") and self.W_eta is None:
            raise DimensionError(f"{self.kind} normalizer needs W_eta")


def _eta(norm: Normalizer, u, fq, fk, s: int) -> np.ndarray:
    """Per-head normalizer, shape (L, s). fq, fk are (L, s, n)."""
    L = u.shape[0]
    if norm.kind == "unit":
        return np.ones((L, s))
    if norm.kind == "kernel_sum":
        eta = np.einsum("lhk,lhk->lh", fq, np.cumsum(fk, axis=0))
        if np.any(eta <= 0):
            raise NormalizationError("kernel-sum normalizer is not positive")
        return eta
    W = np.atleast_2d(norm.W_eta)
    if W.shape[0] not in (1, s):
        raise DimensionError(f"W_eta has {W.shape[0]} rows for {s} heads")
    x = u @ W.T
    eta = np.broadcast_to(eta_linear(x, norm.kind.split("_")[0]), (L, s)).copy()
    if np.any(eta == 0) or not np.all(np.isfinite(eta)):
        raise NormalizationError(f"{norm.kind} normalizer is zero or non-finite")
    return eta


def _attention_system(u, w: AttentionWeights, phi: FeatureMap, psi: FeatureMap, eta: Normalizer, s: int, kind: str):
    u = _input(u, w.d)
    L, d = u.shape
    mq = w.m // s
    q = (u @ w.W_Q.T).reshape(L, s, mq)
    k = (u @ w.W_K.T).reshape(L, s, mq)
    fq = phi(q.reshape(L * s, mq)).reshape(L, s, -1)
    fk = psi(k.reshape(L * s, mq)).reshape(L, s, -1)
    if fq.shape[2] != fk.shape[2]:
        raise DimensionError(f"phi and psi produce different feature sizes ({fq.shape[2]} vs {fk.shape[2]})")
    n = fq.shape[2]
    et = _eta(eta, u, fq, fk, s)
    # lam_0 := 1; it multiplies h_{-1} = 0 and is inert
    prev = np.vstack([et[:1], et[:-1]]) if L else et
    head_lam = prev / et
    heads = np.arange(d) // (d // s)
    lam = np.repeat(head_lam[:, heads], n, axis=1)
    return DsfFactored(
        lam=lam,
        n=n,
        d=d,
        s=s,
        in_scale=1.0 / et[:, heads],
        psi=fk,
        W_V=w.W_V,
        phi=fq,
        head_lam=head_lam,
        eta=et,
        kind=kind,
        fingerprint=fingerprint(u),
    )


def attention_to_dsf(u, w: AttentionWeights, phi: FeatureMap, psi: FeatureMap, eta: Normalizer) -> DsfFactored:
    """Separable attention as a DSF system of size N = n d.

    ``lam_i = eta_{i-1} / eta_i``, ``B_i = (1/eta_i) (I_d (x) psi(k_i)) W_V``,
    ``C_i = I_d (x) phi(q_i)^T``.
    """
    if w.heads != 1:
        raise DimensionError("attention_to_dsf is single-head; use multihead_to_dsf")
    return _attention_system(u, w, phi, psi, eta, 1, f"attention:{phi.kind}/{eta.kind}")


def multihead_to_dsf(u, w: AttentionWeights, phi: FeatureMap, psi: FeatureMap, eta: Normalizer) -> DsfFactored:
    """Multi-head version: lam is block diagonal with one ratio per head."""
    return _attention_system(u, w, phi, psi, eta, w.heads, f"multihead{w.heads}:{phi.kind}/{eta.kind}")


def linear_attention_to_dsf(u, w: AttentionWeights) -> DsfFactored:
    fm = FeatureMap("elu_plus_one")
    return attention_to_dsf(u, w, fm, fm, Normalizer("kernel_sum"))


def normalized_attention_to_dsf(u, w: AttentionWeights, norm_kind: str = "exp") -> DsfFactored:
    fm = FeatureMap("identity")
    return attention_to_dsf(u, w, fm, fm, Normalizer(f"{norm_kind}_linear", w.W_eta))


def taylor_softmax_to_dsf(u, w: AttentionWeights, order: int, cap: int = DEFAULT_FEATURE_CAP) -> DsfFactored:
    """Order-``order`` truncation of softmax attention, normalized by its own kernel sum."""
    fm = FeatureMap("taylor", order, cap)
    return attention_to_dsf(u, w, fm, fm, Normalizer("kernel_sum"))


# -- S6 -----------------------------------------------------------------------


def rev_sigmoid(x):
    return 1.0 / (1.0 + np.exp(x))


def _scalar_a(w: S6Weights) -> float:
    a = np.unique(w.A)
    if a.size != 1:
        raise PreconditionError("reversed-sigmoid transition needs a scalar A = a * I")
    return float(a[0])


def s6_lambda_rev_sigmoid(u, w: S6Weights) -> np.ndarray:
    """S6 transition diagonal via ``rev_sigmoid(W_bar u)**a``, shape (L, n d).

    The bias is folded into ``W_bar`` by appending a constant-one channel to u.
    """
    a = _scalar_a(w)
    u = _input(u, w.d)
    u_aug = np.hstack([u, np.ones((u.shape[0], 1))])
    W_bar = np.hstack([w.W_delta @ w.W_u, w.b_delta[:, None]])
    with np.errstate(over="ignore"):
        per_channel = rev_sigmoid(u_aug @ W_bar.T) ** a
    return np.repeat(per_channel, w.n, axis=1)


def s6_to_dsf(u, w: S6Weights, transition: str = "softplus") -> DsfFactored:
    """``lam_i = exp(-(Delta_i (x) I_n) * A)``, ``B_i = Delta_i (x) b_i``, ``C_i = I_d (x) c_i^T``."""
    u = _input(u, w.d)
    L = u.shape[0]
    delta = s6_delta(u, w)  # (L, d)
    if transition == "softplus":
        # A is stored (n, d); state index c*n + k uses A[k, c]
        lam = np.exp(-(delta[:, :, None] * w.A.T[None, :, :])).reshape(L, -1)
    elif transition == "rev_sigmoid":
        lam = s6_lambda_rev_sigmoid(u, w)
    else:
        raise ValueError(f"unknown S6 transition {transition!r}")
    return DsfFactored(
        lam=lam,
        n=w.n,
        d=w.d,
        in_scale=delta,
        psi=(u @ w.W_B.T)[:, None, :],
        W_V=np.eye(w.d),
        phi=(u @ w.W_C.T)[:, None, :],
        D=None if w.W_D is None else np.broadcast_to(w.W_D, (L, w.d)),
        kind="s6" if transition == "softplus" else "s6-revsig",
        fingerprint=fingerprint(u),
    )


# -- RNNs ---------------------------------------------------------------------


def qlstm_to_dsf(u, w: QlstmWeights) -> DsfFactored:
    """``lam_i = sigma(W_f u_i)``, ``B_i = diag(sigma(W_i u_i)) W_u``, ``C_i = diag(sigma(W_o u_i))``."""
    u = _input(u, w.d)
    L, d = u.shape
    return DsfFactored(
        lam=sigmoid(u @ w.W_f.T),
        n=1,
        d=d,
        in_scale=sigmoid(u @ w.W_i.T),
        psi=np.ones((L, 1, 1)),
        W_V=w.W_u,
        phi=np.ones((L, 1, 1)),
        out_scale=sigmoid(u @ w.W_o.T),
        kind="qlstm",
        fingerprint=fingerprint(u),
    )


def rglru_lambda(u, w: RgLruWeights) -> np.ndarray:
    return np.exp(-w.c * sigmoid(u @ w.W_R.T) * softplus(w.lam_param))


def rglru_to_dsf(u, w: RgLruWeights) -> DsfFactored:
    """``lam_i = exp(-c r_i softplus(Lambda))``, ``B_i = sqrt(1 - lam_i^2) diag(sigma(W_B u_i))``, ``C_i = I``."""
    u = _input(u, w.d)
    L, d = u.shape
    lam = rglru_lambda(u, w)
    return DsfFactored(
        lam=lam,
        n=1,
        d=d,
        in_scale=np.sqrt(1.0 - lam**2) * sigmoid(u @ w.W_B.T),
        psi=np.ones((L, 1, 1)),
        W_V=np.eye(d),
        phi=np.ones((L, 1, 1)),
        kind="rglru",
        fingerprint=fingerprint(u),
    )

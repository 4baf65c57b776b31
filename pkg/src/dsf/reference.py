"""Quadratic / direct-recurrence oracles evaluated from each model's own equations.

These never build a DSF system. Attention oracles form the full masked
``L x L`` weight matrix (a few rows at a time to bound memory); the recurrent
oracles loop per step and per channel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import validate
from .errors import DimensionError, NormalizationError

# full masked rows are formed chunk by chunk, about this many scores at a time
CHUNK_ELEMENTS = 1 << 20


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softplus(x):
    return np.logaddexp(0.0, x)


def elu_plus_one(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


# -- weights ------------------------------------------------------------------


@dataclass(frozen=True)
class AttentionWeights:
    W_Q: np.ndarray  # (m, d)
    W_K: np.ndarray  # (m, d)
    W_V: np.ndarray  # (d, d)
    W_eta: np.ndarray | None = None  # (1, d) or (s, d)
    heads: int = 1

    def __post_init__(self):
        m, d = np.shape(self.W_Q)
        if m < 1 or np.shape(self.W_K) != (m, d) or np.shape(self.W_V) != (d, d):
            raise DimensionError("attention weights need W_Q, W_K of shape (m, d) and W_V of shape (d, d)")
        s = self.heads
        if s < 1 or m % s or d % s:
            raise DimensionError(f"{s} heads must divide m={m} and d={d}")
        if self.W_eta is not None and (np.ndim(self.W_eta) != 2 or np.shape(self.W_eta)[1] != d):
            raise DimensionError("W_eta must have shape (1, d) or (heads, d)")

    @property
    def m(self) -> int:
        return self.W_Q.shape[0]

    @property
    def d(self) -> int:
        return self.W_Q.shape[1]


@dataclass(frozen=True)
class S6Weights:
    A: np.ndarray  # (n, d) grid of the diagonal of the nd x nd transition
    W_B: np.ndarray  # (n, d)
    W_C: np.ndarray  # (n, d)
    W_delta: np.ndarray  # (d, p)
    W_u: np.ndarray  # (p, d)
    b_delta: np.ndarray  # (d,)
    W_D: np.ndarray | None = None  # (d,)

    def __post_init__(self):
        n, d = np.shape(self.A)
        p = np.shape(self.W_u)[0]
        shapes = {
            "W_B": (np.shape(self.W_B), (n, d)),
            "W_C": (np.shape(self.W_C), (n, d)),
            "W_delta": (np.shape(self.W_delta), (d, p)),
            "W_u": (np.shape(self.W_u), (p, d)),
            "b_delta": (np.shape(self.b_delta), (d,)),
        }
        if not 1 <= p < d:
            raise DimensionError(f"S6 step-size rank p={p} must satisfy 1 <= p < d={d}")
        if self.W_D is not None:
            shapes["W_D"] = (np.shape(self.W_D), (d,))
        for name, (got, want) in shapes.items():
            if got != want:
                raise DimensionError(f"S6 {name}: expected {want}, got {got}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class QlstmWeights:
    W_f: np.ndarray
    W_i: np.ndarray
    W_o: np.ndarray
    W_u: np.ndarray

    def __post_init__(self):
        d = np.shape(self.W_f)[0]
        for name in ("W_f", "W_i", "W_o", "W_u"):
            if np.shape(getattr(self, name)) != (d, d):
                raise DimensionError(f"qLSTM {name} must be square ({d}, {d})")

    @property
    def d(self) -> int:
        return self.W_f.shape[0]


@dataclass(frozen=True)
class RgLruWeights:
    W_R: np.ndarray  # recurrence gate
    W_B: np.ndarray  # input gate
    lam_param: np.ndarray  # (d,)
    c: float = 8.0

    def __post_init__(self):
        d = np.shape(self.W_R)[0]
        if np.shape(self.W_R) != (d, d) or np.shape(self.W_B) != (d, d) or np.shape(self.lam_param) != (d,):
            raise DimensionError("RG-LRU weights need W_R, W_B of shape (d, d) and lam_param of shape (d,)")
        if not self.c > 0:
            raise DimensionError(f"RG-LRU constant c must be positive, got {self.c}")

    @property
    def d(self) -> int:
        return self.W_R.shape[0]


def _input(u, d: int) -> np.ndarray:
    validate(u)
    u = np.asarray(u, dtype=np.float64)
    if u.shape[1] != d:
        raise DimensionError(f"input width {u.shape[1]} does not match weights (d={d})")
    return u


# -- attention ----------------------------------------------------------------


def _masked_softmax_mix(q, k, v) -> np.ndarray:
    L = q.shape[0]
    y = np.empty((L, v.shape[1]))
    rows_per_chunk = max(1, CHUNK_ELEMENTS // max(L, 1))
    cols = np.arange(L)[None, :]
    for r0 in range(0, L, rows_per_chunk):
        r1 = min(r0 + rows_per_chunk, L)
        s = q[r0:r1] @ k.T
        s[cols > np.arange(r0, r1)[:, None]] = -np.inf
        s -= s.max(axis=1, keepdims=True)
        w = np.exp(s)
        w /= w.sum(axis=1, keepdims=True)
        y[r0:r1] = w @ v
    return y


def softmax_weights(u, w: AttentionWeights) -> np.ndarray:
    """Full masked softmax attention matrix (L x L)."""
    u = _input(u, w.d)
    s = (u @ w.W_Q.T) @ (u @ w.W_K.T).T
    L = u.shape[0]
    s[np.triu_indices(L, 1)] = -np.inf
    if L:
        s -= s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True) if L else e


def softmax_attention_ref(u, w: AttentionWeights) -> np.ndarray:
    if w.heads != 1:
        raise DimensionError("softmax_attention_ref is single-head; use multihead_softmax_ref")
    u = _input(u, w.d)
    return _masked_softmax_mix(u @ w.W_Q.T, u @ w.W_K.T, u @ w.W_V.T)


def _linear_weights(q, k) -> np.ndarray:
    fq, fk = elu_plus_one(q), elu_plus_one(k)
    scores = np.tril(fq @ fk.T)
    eta = scores.sum(axis=1, keepdims=True)
    if np.any(eta <= 0):
        raise NormalizationError("linear attention normalizer is not positive")
    return scores / eta


def linear_attention_weights(u, w: AttentionWeights) -> np.ndarray:
    u = _input(u, w.d)
    return _linear_weights(u @ w.W_Q.T, u @ w.W_K.T)


def linear_attention_ref(u, w: AttentionWeights) -> np.ndarray:
    if w.heads != 1:
        raise DimensionError("linear_attention_ref is single-head; use multihead_linear_ref")
    u = _input(u, w.d)
    return _linear_weights(u @ w.W_Q.T, u @ w.W_K.T) @ (u @ w.W_V.T)


NORM_KINDS = ("exp", "softplus", "sigmoid")


def eta_linear(x, kind: str) -> np.ndarray:
    if kind == "exp":
        return np.exp(x)
    if kind == "softplus":
        return softplus(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown normalization {kind!r}; expected one of {NORM_KINDS}")


def normalized_attention_ref(u, w: AttentionWeights, norm_kind: str = "exp") -> np.ndarray:
    if w.W_eta is None:
        raise DimensionError("normalized attention needs W_eta")
    u = _input(u, w.d)
    eta = eta_linear(u @ w.W_eta[0], norm_kind)
    if np.any(eta == 0) or not np.all(np.isfinite(eta)):
        raise NormalizationError(f"{norm_kind} normalizer underflowed to zero")
    scores = np.tril((u @ w.W_Q.T) @ (u @ w.W_K.T).T)
    return (scores / eta[:, None]) @ (u @ w.W_V.T)


def _per_head(u, w: AttentionWeights, mix) -> np.ndarray:
    u = _input(u, w.d)
    s = w.heads
    q, k, v = u @ w.W_Q.T, u @ w.W_K.T, u @ w.W_V.T
    mq, dv = w.m // s, w.d // s
    out = [mix(q[:, h * mq : (h + 1) * mq], k[:, h * mq : (h + 1) * mq], v[:, h * dv : (h + 1) * dv]) for h in range(s)]
    return np.concatenate(out, axis=1)


def multihead_softmax_ref(u, w: AttentionWeights) -> np.ndarray:
    """Head h attends with slice h of q, k and v; head outputs are stacked."""
    return _per_head(u, w, _masked_softmax_mix)


def multihead_linear_ref(u, w: AttentionWeights) -> np.ndarray:
    return _per_head(u, w, lambda q, k, v: _linear_weights(q, k) @ v)


# -- SSM / RNN ----------------------------------------------------------------


def s6_delta(u, w: S6Weights) -> np.ndarray:
    return softplus((u @ w.W_u.T) @ w.W_delta.T + w.b_delta)


def s6_ref(u, w: S6Weights) -> np.ndarray:
    u = _input(u, w.d)
    L, d = u.shape
    delta = s6_delta(u, w)
    y = np.zeros((L, d))
    for c in range(d):
        h = np.zeros(w.n)
        for i in range(L):
            b = w.W_B @ u[i]
            cc = w.W_C @ u[i]
            h = np.exp(-delta[i, c] * w.A[:, c]) * h + delta[i, c] * b * u[i, c]
            y[i, c] = cc @ h
    if w.W_D is not None:
        y += w.W_D * u
    return y


def qlstm_ref(u, w: QlstmWeights) -> np.ndarray:
    """qLSTM with the tanh on input and output removed."""
    u = _input(u, w.d)
    x = np.zeros(w.d)
    y = np.empty_like(u)
    for i, ui in enumerate(u):
        x = sigmoid(w.W_f @ ui) * x + sigmoid(w.W_i @ ui) * (w.W_u @ ui)
        y[i] = sigmoid(w.W_o @ ui) * x
    return y


def rglru_ref(u, w: RgLruWeights) -> np.ndarray:
    u = _input(u, w.d)
    x = np.zeros(w.d)
    y = np.empty_like(u)
    sp = softplus(w.lam_param)
    for i, ui in enumerate(u):
        r = sigmoid(w.W_R @ ui)
        a = np.exp(-w.c * r * sp)
        x = a * x + np.sqrt(1.0 - a**2) * (sigmoid(w.W_B @ ui) * ui)
        y[i] = x
    return y

"""Model kinds by CLI name: seeded weight generation, adapter and oracle.

Kind strings: ``linear``, ``normalized-exp``, ``normalized-softplus``,
``normalized-sigmoid``, ``taylor:<p>``, ``s6``, ``s6-revsig``, ``qlstm``,
``rglru``, ``multihead:<s>`` (multi-head linear attention) and ``softmax``
(oracle only).
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any, Callable

import numpy as np

from . import adapters as ad
from . import reference as ref
from .core import DsfDense
from .errors import DimensionError, UnknownKindError


@dataclass(frozen=True)
class ModelKind:
    name: str
    family: str  # attention | s6 | qlstm | rglru
    to_dsf: Callable | None
    oracle: Callable
    heads: int = 1
    order: int | None = None
    scalar_a: bool = False


def parse_kind(kind: str, scalar_a: bool = False) -> ModelKind:
    name = kind.strip()
    if name == "linear":
        return ModelKind(name, "attention", ad.linear_attention_to_dsf, ref.linear_attention_ref)
    if name.startswith("normalized-"):
        nk = name.split("-", 1)[1]
        if nk not in ref.NORM_KINDS:
            raise UnknownKindError(f"unknown model kind {kind!r}")
        return ModelKind(
            name,
            "attention",
            lambda u, w, nk=nk: ad.normalized_attention_to_dsf(u, w, nk),
            lambda u, w, nk=nk: ref.normalized_attention_ref(u, w, nk),
        )
    if name == "softmax":
        return ModelKind(name, "attention", None, ref.softmax_attention_ref)
    if name.startswith("taylor:") or name.startswith("multihead:"):
        head, _, arg = name.partition(":")
        try:
            val = int(arg)
        except ValueError:
            raise UnknownKindError(f"unknown model kind {kind!r}") from None
        if val < (0 if head == "taylor" else 1):
            raise UnknownKindError(f"unknown model kind {kind!r}")
        if head == "taylor":
            return ModelKind(
                name, "attention", lambda u, w, p=val: ad.taylor_softmax_to_dsf(u, w, p), ref.softmax_attention_ref, order=val
            )
        elu = ad.FeatureMap("elu_plus_one")
        return ModelKind(
            name,
            "attention",
            lambda u, w: ad.multihead_to_dsf(u, w, elu, elu, ad.Normalizer("kernel_sum")),
            ref.multihead_linear_ref,
            heads=val,
        )
    if name in ("s6", "s6-revsig"):
        transition = "softplus" if name == "s6" else "rev_sigmoid"
        return ModelKind(
            name,
            "s6",
            lambda u, w, t=transition: ad.s6_to_dsf(u, w, t),
            ref.s6_ref,
            scalar_a=scalar_a or name == "s6-revsig",
        )
    if name == "qlstm":
        return ModelKind(name, "qlstm", ad.qlstm_to_dsf, ref.qlstm_ref)
    if name == "rglru":
        return ModelKind(name, "rglru", ad.rglru_to_dsf, ref.rglru_ref)
    raise UnknownKindError(f"unknown model kind {kind!r}")


def random_dense_system(
    seed: int, N: int, d: int, L: int, lam_bound: float = 1.05, skip: bool = True, h_init: bool = False
) -> DsfDense:
    """Hand-built system with lam ~ U(-lam_bound, lam_bound) and Gaussian B, C, D."""
    rng = np.random.default_rng([seed, 2])
    return DsfDense(
        lam=rng.uniform(-lam_bound, lam_bound, (L, N)),
        B=rng.standard_normal((L, N, d)) / np.sqrt(d),
        C=rng.standard_normal((L, d, N)) / np.sqrt(N),
        D=rng.standard_normal((L, d)) if skip else None,
        h_init=rng.standard_normal(N) if h_init else None,
    )


def random_input(L: int, d: int, seed: int) -> np.ndarray:
    return np.random.default_rng([seed, 1]).standard_normal((L, d))


def random_weights(kind: ModelKind, d: int, n: int = 4, seed: int = 0, p: int | None = None, c: float = 8.0):
    """Seeded weights for ``kind`` (numpy PCG64 seeded with ``[seed, 0]``).

    For attention kinds ``n`` is the query/key width m (per head it is m/s).
    """
    rng = np.random.default_rng([seed, 0])
    g = lambda *shape, scale=1.0: scale * rng.standard_normal(shape)  # noqa: E731
    if kind.family == "attention":
        m = n * kind.heads
        if d % kind.heads:
            raise DimensionError(f"{kind.heads} heads do not divide d={d}")
        sd = 1.0 / np.sqrt(d)
        return ref.AttentionWeights(
            W_Q=g(m, d, scale=sd),
            W_K=g(m, d, scale=sd),
            W_V=g(d, d, scale=sd),
            W_eta=g(1, d, scale=sd),
            heads=kind.heads,
        )
    if kind.family == "s6":
        if d < 2:
            raise DimensionError("S6 needs d >= 2 so that the step-size rank p < d")
        p = p if p is not None else max(1, d // 2)
        A = np.full((n, d), rng.uniform(0.5, 2.0)) if kind.scalar_a else rng.uniform(0.5, 2.0, (n, d))
        return ref.S6Weights(
            A=A,
            W_B=g(n, d, scale=1 / np.sqrt(d)),
            W_C=g(n, d, scale=1 / np.sqrt(d)),
            W_delta=g(d, p, scale=1 / np.sqrt(p)),
            W_u=g(p, d, scale=1 / np.sqrt(d)),
            b_delta=g(d, scale=0.5),
            W_D=g(d),
        )
    if kind.family == "qlstm":
        return ref.QlstmWeights(*(g(d, d, scale=1 / np.sqrt(d)) for _ in range(4)))
    if kind.family == "rglru":
        return ref.RgLruWeights(g(d, d, scale=1 / np.sqrt(d)), g(d, d, scale=1 / np.sqrt(d)), g(d), c)
    raise UnknownKindError(f"unknown model family {kind.family!r}")


_WEIGHT_TYPES = {
    "attention": ref.AttentionWeights,
    "s6": ref.S6Weights,
    "qlstm": ref.QlstmWeights,
    "rglru": ref.RgLruWeights,
}
_SCALARS = {"heads", "c"}


def weights_to_arrays(w) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    arrays, scalars = {}, {}
    for f in fields(w):
        val = getattr(w, f.name)
        if f.name in _SCALARS:
            scalars[f.name] = val
        elif val is not None:
            arrays[f.name] = np.asarray(val)
    return arrays, scalars


def weights_from_arrays(family: str, arrays: dict[str, np.ndarray], scalars: dict[str, Any]):
    cls = _WEIGHT_TYPES[family]
    kw = {f.name: arrays.get(f.name) for f in fields(cls) if f.name not in _SCALARS}
    for k in _SCALARS & {f.name for f in fields(cls)}:
        if k in scalars:
            kw[k] = scalars[k]
    return cls(**kw)

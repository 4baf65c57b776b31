"""Synthetic data, output comparison and scaling benchmarks.

MQAR generator
--------------
All randomness comes from SplitMix64 seeded with ``cfg.seed``::

    state = (state + 0x9E3779B97F4A7C15) mod 2**64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2**64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2**64
    return z ^ (z >> 31)

``below(n)`` draws x until ``x < 2**64 - (2**64 mod n)`` and returns
``x mod n``. A partial Fisher-Yates pass over a list draws ``below(len - t)``
at step ``t`` and swaps position ``t`` with ``t + draw``. Draw order:

1. keys: partial Fisher-Yates over ``[0, V/2)``, K steps;
2. values: K draws of ``V/2 + below(V/2)``;
3. query positions: partial Fisher-Yates over ``[2K, L)``, K steps, sorted;
4. query order: full Fisher-Yates over ``[0, K)``; the t-th query position
   repeats key ``order[t]``.

Positions ``2t, 2t+1`` hold key t and value t; every other position not used
by a query holds the filler token ``V``.
"""
from __future__ import annotations

import csv
import io
import json
import time
import tracemalloc
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        if n < 1:
            raise ValueError("below() needs n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next()
            if x < limit:
                return x % n

    def sample(self, population: list, k: int) -> list:
        pool = list(population)
        for t in range(k):
            j = t + self.below(len(pool) - t)
            pool[t], pool[j] = pool[j], pool[t]
        return pool[:k]


@dataclass(frozen=True)
class MqarConfig:
    V: int
    K: int
    L: int
    seed: int = 0

    def check(self) -> None:
        if self.V < 2 or self.V % 2:
            raise ConfigError(f"vocab size V={self.V} must be even and >= 2")
        if self.K < 1:
            raise ConfigError("need at least one key-value pair")
        if self.V < 2 * self.K:
            raise ConfigError(f"V={self.V} too small for {self.K} distinct keys (need V >= 2K)")
        if self.L < 3 * self.K:
            raise ConfigError(f"L={self.L} too short for {self.K} pairs plus queries (need L >= 3K)")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass(frozen=True)
class MqarSample:
    tokens: np.ndarray  # (L,) int64
    query_positions: np.ndarray  # (K,) int64
    targets: np.ndarray  # (K,) int64

    def to_dict(self) -> dict:
        return {
            "tokens": self.tokens.tolist(),
            "query_positions": self.query_positions.tolist(),
            "targets": self.targets.tolist(),
        }


def mqar_generate(cfg: MqarConfig) -> MqarSample:
    cfg.check()
    rng = SplitMix64(cfg.seed)
    half = cfg.V // 2
    keys = rng.sample(range(half), cfg.K)
    values = [half + rng.below(half) for _ in range(cfg.K)]
    positions = sorted(rng.sample(range(2 * cfg.K, cfg.L), cfg.K))
    order = rng.sample(range(cfg.K), cfg.K)

    tokens = np.full(cfg.L, cfg.V, dtype=np.int64)
    tokens[0 : 2 * cfg.K : 2] = keys
    tokens[1 : 2 * cfg.K : 2] = values
    targets = []
    for pos, t in zip(positions, order):
        tokens[pos] = keys[t]
        targets.append(values[t])
    return MqarSample(tokens, np.array(positions, dtype=np.int64), np.array(targets, dtype=np.int64))


# -- comparison ---------------------------------------------------------------

REL_GUARD = 1e-12


@dataclass
class DiffReport:
    max_abs: float
    mean_abs: float
    max_rel: float
    argmax: tuple[int, int] | None
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        out = asdict(self)
        out["argmax"] = None if self.argmax is None else list(self.argmax)
        return out


def compare(a, b, tol: float) -> DiffReport:
    """Elementwise comparison; passes iff the max-abs difference is <= tol.

    The relative difference divides by ``max(|a|, |b|, 1e-12)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"cannot compare shapes {a.shape} and {b.shape}")
    if a.size == 0:
        return DiffReport(0.0, 0.0, 0.0, None, tol, True)
    diff = np.abs(a - b)
    flat = int(np.argmax(diff))
    loc = np.unravel_index(flat, diff.shape)
    if len(loc) == 1:
        loc = (loc[0], 0)
    rel = diff / np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_GUARD)
    mx = float(diff.flat[flat])
    return DiffReport(mx, float(diff.mean()), float(rel.max()), (int(loc[0]), int(loc[1])), tol, bool(mx <= tol))


# -- scaling benchmark --------------------------------------------------------


@dataclass
class ScalingRow:
    kind: str
    L: int
    wall_time: float
    peak_bytes: int


@dataclass
class ScalingReport:
    rows: list[ScalingRow]
    slopes: dict[str, float]
    monotone: dict[str, bool]
    threads: int = 1
    notes: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["kind", "L", "wall_time", "peak_bytes"], lineterminator="\n")
        w.writeheader()
        w.writerows(asdict(r) for r in self.rows)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "rows": [asdict(r) for r in self.rows],
            "slopes": self.slopes,
            "monotone": self.monotone,
            "threads": self.threads,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


BENCH_METHODS = ("oracle", "seq", "scan", "kernel")


def _bench_callable(kind: str, L: int, d: int, n: int, seed: int):
    """``<model>-<method>`` e.g. ``softmax-oracle``, ``linear-scan``."""
    from . import engines
    from .registry import parse_kind, random_input, random_weights

    model, sep, method = kind.rpartition("-")
    if not sep or method not in BENCH_METHODS:
        raise ConfigError(f"bench kind {kind!r} must look like <model>-<{'|'.join(BENCH_METHODS)}>")
    mk = parse_kind(model)
    w = random_weights(mk, d, n, seed)
    u = random_input(L, d, seed)
    if method == "oracle":
        return lambda: mk.oracle(u, w)
    if mk.to_dsf is None:
        raise ConfigError(f"{model} has no DSF form; only {model}-oracle can be benchmarked")
    return lambda: engines.run(mk.to_dsf(u, w), u, method, kernel_cap=max(L, engines.DEFAULT_KERNEL_CAP))


def loglog_slope(Ls, times) -> float:
    return float(np.polyfit(np.log(np.asarray(Ls, float)), np.log(np.asarray(times, float)), 1)[0])


def bench_scaling(kinds, Ls, d: int = 32, n: int = 16, repeats: int = 3, seed: int = 0, threads: int | None = 1) -> ScalingReport:
    """Median wall time per (kind, L) and the fitted log-log slope per kind.

    ``peak_bytes`` is the tracemalloc peak of one extra untimed run. BLAS is
    limited to ``threads`` threads (``None`` leaves it alone).
    """
    Ls = [int(x) for x in Ls]
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    if len(Ls) < 2:
        raise ConfigError("need at least two sequence lengths")
    if any(b <= a for a, b in zip(Ls, Ls[1:])):
        raise ConfigError("sequence lengths must be strictly increasing")
    if not kinds:
        raise ConfigError("no benchmark kinds given")

    from contextlib import nullcontext

    from threadpoolctl import threadpool_info, threadpool_limits

    limiter = threadpool_limits(limits=threads) if threads is not None else nullcontext()
    rows, slopes, monotone, notes = [], {}, {}, []
    with limiter:
        n_threads = max((p.get("num_threads", 1) for p in threadpool_info()), default=1)
        for kind in kinds:
            times = []
            for L in Ls:
                fn = _bench_callable(kind, L, d, n, seed)
                fn()  # warm-up
                samples = []
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    fn()
                    samples.append(time.perf_counter() - t0)
                tracemalloc.start()
                fn()
                peak = tracemalloc.get_traced_memory()[1]
                tracemalloc.stop()
                med = float(np.median(samples))
                times.append(med)
                rows.append(ScalingRow(kind, L, med, int(peak)))
            slopes[kind] = loglog_slope(Ls, times)
            monotone[kind] = all(b >= a for a, b in zip(times, times[1:]))
            if not monotone[kind]:
                notes.append(f"{kind}: median times not monotone in L (timer noise?)")
    return ScalingReport(rows, slopes, monotone, int(n_threads), notes)

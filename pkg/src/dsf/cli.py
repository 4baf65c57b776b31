"""``dsf`` command line.

Exit codes: 0 ok, 1 comparison failed, 2 usage / unknown kind,
3 kernel cap exceeded, 4 dimension mismatch, 5 normalization failure, 6 I/O.
Reports go to stdout as JSON; errors are printed as ``{"error": ..., "message": ...}``.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import analysis, engines, harness
from .core import densify, load_bundle, load_system, load_tensor, save_bundle, save_system, save_tensor
from .errors import DsfError, IoError, PreconditionError
from .registry import (
    parse_kind,
    random_input,
    random_weights,
    weights_from_arrays,
    weights_to_arrays,
)

FIXTURES = Path(__file__).parent / "fixtures"


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _resolve(path: str) -> Path:
    """``fixture:<name>`` points into the packaged fixtures directory."""
    if path.startswith("fixture:"):
        return FIXTURES / path.split(":", 1)[1]
    return Path(path)


# -- model loading -------------------------------------------------------------


def _model(args):
    """Kind, weights and input described by the common model flags."""
    if args.weights:
        arrays, meta = load_bundle(_resolve(args.weights))
        kind = parse_kind(args.kind or meta.get("kind", ""), args.scalar_a)
        w = weights_from_arrays(kind.family, arrays, meta.get("scalars", {}))
    else:
        if not args.kind:
            raise PreconditionError("--kind is required unless --weights names a bundle")
        kind = parse_kind(args.kind, args.scalar_a)
        w = random_weights(kind, args.d, args.n, args.seed, c=args.c)
    if args.input:
        u = load_tensor(_resolve(args.input))
    else:
        u = random_input(args.L, w.d if hasattr(w, "d") else args.d, args.seed)
    return kind, w, u


def _system(kind, w, u):
    if kind.to_dsf is None:
        raise PreconditionError(f"{kind.name} has no finite DSF form; use taylor:<p>")
    return kind.to_dsf(u, w)


def _add_model_flags(p, L: int = 16, d: int = 4, n: int = 4):
    p.add_argument("--kind", help="model kind, e.g. linear, normalized-exp, taylor:4, s6, s6-revsig, qlstm, rglru, multihead:2")
    p.add_argument("--weights", help="weights bundle directory (model.json + .dsft files)")
    p.add_argument("--random-weights", action="store_true", help="generate seeded weights (default when --weights is absent)")
    p.add_argument("--input", help="input sequence .dsft file; random when absent")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--L", type=int, default=L)
    p.add_argument("--d", type=int, default=d)
    p.add_argument("--n", type=int, default=n, help="state expansion / query-key width")
    p.add_argument("--c", type=float, default=8.0, help="RG-LRU constant")
    p.add_argument("--scalar-a", action="store_true", help="S6 with A = a * I (SSD-style)")


# -- commands -------------------------------------------------------------------


def cmd_run(args) -> int:
    kind, w, u = _model(args)
    if kind.to_dsf is None:
        t0 = time.perf_counter()
        y = kind.oracle(u, w)
        report = engines.EngineReport("oracle", time.perf_counter() - t0)
    else:
        sys_ = kind.to_dsf(u, w)
        y, report = engines.timed_run(sys_, u, args.engine, kernel_cap=args.kernel_cap)
    out = report.to_dict()
    out.update(kind=kind.name, L=int(u.shape[0]), d=int(u.shape[1]))
    if args.out:
        save_tensor(args.out, y, name="y")
        out["output"] = str(args.out)
    _emit(out)
    return 0


def _evaluate(kind, w, u, how: str, cap: int):
    if how == "oracle":
        return kind.oracle(u, w)
    return engines.run(_system(kind, w, u), u, how, kernel_cap=cap)


def cmd_compare(args) -> int:
    if args.a or args.b:
        if not (args.a and args.b):
            raise PreconditionError("--a and --b must be given together")
        a, b = load_tensor(_resolve(args.a)), load_tensor(_resolve(args.b))
        label = {"a": args.a, "b": args.b}
    else:
        kind, w, u = _model(args)
        a = _evaluate(kind, w, u, args.engine, args.kernel_cap)
        b = _evaluate(kind, w, u, args.against, args.kernel_cap)
        label = {"kind": kind.name, "engine": args.engine, "against": args.against, "seed": args.seed}
    report = harness.compare(a, b, args.tol)
    _emit({**label, **report.to_dict()})
    return 0 if report.passed else 1


def cmd_taylor_study(args) -> int:
    kind = parse_kind("softmax")
    w = random_weights(kind, args.d, args.n, args.seed)
    u = load_tensor(_resolve(args.input)) if args.input else random_input(args.L, args.d, args.seed)
    cap = None if args.no_cap else args.score_cap
    table = analysis.taylor_convergence_study(u, w, _ints(args.orders), cap)
    if args.out:
        _write_text(args.out, table.to_json() if str(args.out).endswith(".json") else table.to_csv())
    _emit(json.loads(table.to_json()))
    return 0


def cmd_spectrum(args) -> int:
    if args.system:
        sys_ = load_system(_resolve(args.system))
        label = str(args.system)
    else:
        kind, w, u = _model(args)
        sys_ = _system(kind, w, u)
        label = kind.name
    prof = analysis.spectral_profile(sys_)
    if args.out:
        _write_text(args.out, prof.to_csv())
    _emit({"system": label, **prof.to_dict()})
    return 0


def cmd_embed(args) -> int:
    if args.system:
        sys_ = load_system(_resolve(args.system))
        u = load_tensor(_resolve(args.input)) if args.input else random_input(sys_.L, sys_.d, args.seed)
    else:
        kind, w, u = _model(args)
        sys_ = densify(_system(kind, w, u))
    big = analysis.embed_system(sys_, args.nbar, args.fill, args.seed)
    y0 = engines.run_sequential(sys_, u)
    y1 = engines.run_sequential(big, u)
    report = harness.compare(y1, y0, args.tol)
    if args.out:
        save_system(args.out, big)
    _emit({"N": sys_.N, "N_bar": big.N, **report.to_dict()})
    return 0 if report.passed else 1


def cmd_mqar(args) -> int:
    sample = harness.mqar_generate(harness.MqarConfig(args.V, args.K, args.L, args.seed))
    if args.out:
        out = Path(args.out)
        if out.suffix == ".dsft":
            save_tensor(out, sample.tokens, name="tokens")
        else:
            save_bundle(
                out,
                {
                    "tokens": sample.tokens,
                    "query_positions": sample.query_positions,
                    "targets": sample.targets,
                },
                {"kind": "mqar", "V": args.V, "K": args.K, "L": args.L, "seed": args.seed},
            )
    _emit(sample.to_dict())
    return 0


def cmd_bench(args) -> int:
    threads = None if args.threads == 0 else args.threads
    report = harness.bench_scaling(
        [k for k in args.kinds.split(",") if k], _ints(args.Ls), args.d, args.n, args.repeats, args.seed, threads
    )
    if args.out:
        _write_text(args.out, report.to_json() if str(args.out).endswith(".json") else report.to_csv())
    _emit(report.to_dict())
    return 0


def cmd_weights(args) -> int:
    kind = parse_kind(args.kind, args.scalar_a)
    w = random_weights(kind, args.d, args.n, args.seed, c=args.c)
    arrays, scalars = weights_to_arrays(w)
    save_bundle(args.out, arrays, {"kind": kind.name, "family": kind.family, "seed": args.seed, "scalars": scalars})
    info = {"kind": kind.name, "weights": str(args.out), "params": {k: list(v.shape) for k, v in arrays.items()}}
    if args.input_out:
        save_tensor(args.input_out, random_input(args.L, args.d, args.seed), name="u")
        info["input"] = str(args.input_out)
    _emit(info)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dsf", description="Diagonal LTV rewrites of attention, SSMs and RNNs.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="evaluate a model through its DSF form")
    _add_model_flags(p)
    p.add_argument("--engine", choices=engines.ENGINES, default="seq")
    p.add_argument("--kernel-cap", type=int, default=engines.DEFAULT_KERNEL_CAP)
    p.add_argument("--out", help="output .dsft file")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare two evaluation paths or two tensor files")
    _add_model_flags(p)
    p.add_argument("--engine", choices=engines.ENGINES + ("oracle",), default="seq")
    p.add_argument("--against", choices=engines.ENGINES + ("oracle",), default="oracle")
    p.add_argument("--kernel-cap", type=int, default=engines.DEFAULT_KERNEL_CAP)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--a", help="first .dsft file")
    p.add_argument("--b", help="second .dsft file")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("taylor-study", help="error of truncated softmax features vs order")
    p.add_argument("--orders", default="2,4,8")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--L", type=int, default=8)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--n", type=int, default=4, help="query/key width m")
    p.add_argument("--input")
    p.add_argument("--score-cap", type=float, default=1.0)
    p.add_argument("--no-cap", action="store_true", help="do not rescale queries")
    p.add_argument("--out", help="CSV (or .json) report path")
    p.set_defaults(func=cmd_taylor_study)

    p = sub.add_parser("spectrum", help="per-step transition magnitudes")
    _add_model_flags(p)
    p.add_argument("--system", help="DSF system bundle instead of a model")
    p.add_argument("--out", help="CSV report path")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("embed", help="embed a system in a larger state and check outputs agree")
    _add_model_flags(p)
    p.add_argument("--system", help="DSF system bundle, e.g. fixture:cumsum")
    p.add_argument("--nbar", type=int, required=True)
    p.add_argument("--fill", choices=("zero", "random"), default="zero")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--out", help="write the embedded system bundle here")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("mqar", help="deterministic multi-query associative recall sample")
    p.add_argument("--V", type=int, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=".dsft token file, or a directory for the full bundle")
    p.set_defaults(func=cmd_mqar)

    p = sub.add_parser("bench", help="wall-time scaling in sequence length")
    p.add_argument("--kinds", default="softmax-oracle,linear-scan")
    p.add_argument("--Ls", default="1024,2048,4096,8192")
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="BLAS threads; 0 leaves the library default")
    p.add_argument("--out", help="CSV (or .json) report path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("weights", help="write seeded weights (and optionally an input) to disk")
    p.add_argument("--kind", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--L", type=int, default=16)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--c", type=float, default=8.0)
    p.add_argument("--scalar-a", action="store_true")
    p.add_argument("--out", required=True, help="bundle directory")
    p.add_argument("--input-out", help="also write a seeded input sequence here")
    p.set_defaults(func=cmd_weights)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DsfError as exc:
        _emit({"error": exc.name, "message": str(exc)})
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

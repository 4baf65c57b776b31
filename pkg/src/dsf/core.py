"""Numeric containers for diagonal LTV systems and the ``.dsft`` tensor format.

A sequence is a plain ``(L, d)`` float64 array. Systems are frozen dataclasses
whose arrays are marked read-only after validation.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DimensionError, FormatError, IoError, NonFiniteError

__all__ = [
    "validate",
    "as_sequence",
    "fingerprint",
    "DsfDense",
    "DsfFactored",
    "densify",
    "TensorFile",
    "save_tensor",
    "load_tensor",
    "read_tensor_file",
    "save_bundle",
    "load_bundle",
    "save_system",
    "load_system",
]

MAGIC = b"DSFT"
TENSOR_SUFFIX = ".dsft"


def validate(seq) -> None:
    """Raise unless ``seq`` is a finite ``(L, d)`` array with ``L >= 0`` and ``d >= 1``."""
    arr = np.asarray(seq)
    if arr.ndim != 2:
        raise DimensionError(f"sequence must be 2-D (L, d), got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise DimensionError(f"sequence width must be >= 1, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("sequence contains NaN or Inf")


def as_sequence(data, d: int | None = None) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 1 and d is not None:
        if d < 1 or arr.size % d:
            raise DimensionError(f"cannot reshape {arr.size} values into rows of width {d}")
        arr = arr.reshape(-1, d)
    validate(arr)
    if d is not None and arr.shape[1] != d:
        raise DimensionError(f"expected width {d}, got {arr.shape[1]}")
    return arr


def fingerprint(u: np.ndarray) -> str:
    u = np.ascontiguousarray(u, dtype="<f8")
    h = hashlib.sha256(str(u.shape).encode())
    h.update(u.tobytes())
    return h.hexdigest()[:16]


def _frozen(a, name: str, shape: tuple | None = None) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise DimensionError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DsfDense:
    """h_i = lam_i * h_{i-1} + B_i u_i,  y_i = C_i h_i + D_i * u_i.

    ``lam`` is ``(L, N)`` (the diagonal of each transition), ``B`` is
    ``(L, N, d)``, ``C`` is ``(L, d, N)`` and the optional skip ``D`` is an
    ``(L, d)`` elementwise gain.
    """

    lam: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray | None = None
    h_init: np.ndarray | None = None
    fingerprint: str | None = None

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.float64)
        B = np.asarray(self.B, dtype=np.float64)
        if lam.ndim != 2 or B.ndim != 3:
            raise DimensionError("lam must be (L, N) and B must be (L, N, d)")
        L, N = lam.shape
        if N < 1:
            raise DimensionError("hidden dimension N must be >= 1")
        if B.shape[:2] != (L, N) or B.shape[2] < 1:
            raise DimensionError(f"B shape {B.shape} inconsistent with lam {lam.shape}")
        d = B.shape[2]
        object.__setattr__(self, "lam", _frozen(lam, "lam"))
        object.__setattr__(self, "B", _frozen(B, "B"))
        object.__setattr__(self, "C", _frozen(self.C, "C", (L, d, N)))
        if self.D is not None:
            object.__setattr__(self, "D", _frozen(self.D, "D", (L, d)))
        h0 = np.zeros(N) if self.h_init is None else self.h_init
        object.__setattr__(self, "h_init", _frozen(h0, "h_init", (N,)))

    @property
    def L(self) -> int:
        return self.lam.shape[0]

    @property
    def N(self) -> int:
        return self.lam.shape[1]

    @property
    def d(self) -> int:
        return self.B.shape[2]


@dataclass(frozen=True)
class DsfFactored:
    """DSF system that keeps the Kronecker structure adapters produce.

    Hidden state index ``c * n + k`` is feature ``k`` of channel ``c``; channel
    ``c`` belongs to head ``c // (d // s)``.

    Input side, unless a dense ``B`` is given::

        B_i = (diag(in_scale_i) (x) psi_i[head]) @ W_V

    Output side, unless a dense ``C`` is given::

        C_i = diag(out_scale_i) (I_d (x) phi_i[head]^T)

    ``head_lam`` records the per-head scalar transition when the adapter
    produced one; ``lam`` is always the broadcast ``(L, N)`` diagonal. ``eta``
    holds the per-head normalizer for attention systems.
    """

    lam: np.ndarray
    n: int
    d: int
    s: int = 1
    in_scale: np.ndarray | None = None
    psi: np.ndarray | None = None
    W_V: np.ndarray | None = None
    B: np.ndarray | None = None
    phi: np.ndarray | None = None
    out_scale: np.ndarray | None = None
    C: np.ndarray | None = None
    D: np.ndarray | None = None
    head_lam: np.ndarray | None = None
    eta: np.ndarray | None = None
    kind: str = "custom"
    fingerprint: str | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        n, d, s = self.n, self.d, self.s
        if n < 1 or d < 1 or s < 1 or d % s:
            raise DimensionError(f"invalid factor sizes n={n}, d={d}, s={s}")
        lam = np.asarray(self.lam, dtype=np.float64)
        if lam.ndim != 2 or lam.shape[1] != n * d:
            raise DimensionError(f"lam must be (L, {n * d}), got {lam.shape}")
        L = lam.shape[0]
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("lam", _frozen(lam, "lam"))
        if self.B is not None:
            set_("B", _frozen(self.B, "B", (L, n * d, d)))
        else:
            if self.psi is None:
                raise DimensionError("either a dense B or psi must be given")
            scale = np.ones((L, d)) if self.in_scale is None else self.in_scale
            W_V = np.eye(d) if self.W_V is None else self.W_V
            set_("in_scale", _frozen(scale, "in_scale", (L, d)))
            set_("psi", _frozen(self.psi, "psi", (L, s, n)))
            set_("W_V", _frozen(W_V, "W_V", (d, d)))
        if self.C is not None:
            set_("C", _frozen(self.C, "C", (L, d, n * d)))
        else:
            if self.phi is None:
                raise DimensionError("either a dense C or phi must be given")
            out = np.ones((L, d)) if self.out_scale is None else self.out_scale
            set_("phi", _frozen(self.phi, "phi", (L, s, n)))
            set_("out_scale", _frozen(out, "out_scale", (L, d)))
        if self.D is not None:
            set_("D", _frozen(self.D, "D", (L, d)))
        if self.head_lam is not None:
            set_("head_lam", _frozen(self.head_lam, "head_lam", (L, s)))
        if self.eta is not None:
            set_("eta", _frozen(self.eta, "eta", (L, s)))

    @property
    def L(self) -> int:
        return self.lam.shape[0]

    @property
    def N(self) -> int:
        return self.n * self.d

    @property
    def heads(self) -> np.ndarray:
        """Head index of each channel."""
        return np.arange(self.d) // (self.d // self.s)

    def dense_B(self) -> np.ndarray:
        if self.B is not None:
            return self.B
        # row c*n+k of B_i is in_scale[c] * psi[head(c), k] * W_V[c, :]
        psi_c = self.psi[:, self.heads, :]  # (L, d, n)
        rows = self.in_scale[:, :, None, None] * psi_c[:, :, :, None] * self.W_V[None, :, None, :]
        return rows.reshape(self.L, self.N, self.d)

    def dense_C(self) -> np.ndarray:
        if self.C is not None:
            return self.C
        C = np.zeros((self.L, self.d, self.d, self.n))
        ch = np.arange(self.d)
        C[:, ch, ch, :] = self.out_scale[:, :, None] * self.phi[:, self.heads, :]
        return C.reshape(self.L, self.d, self.N)


def densify(sys: DsfFactored) -> DsfDense:
    """Materialize the Kronecker factors of ``sys`` as dense per-step matrices."""
    return DsfDense(
        lam=sys.lam,
        B=sys.dense_B(),
        C=sys.dense_C(),
        D=sys.D,
        fingerprint=sys.fingerprint,
    )


# -- tensor files -------------------------------------------------------------


@dataclass(frozen=True)
class TensorFile:
    name: str
    array: np.ndarray

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "shape": list(self.array.shape),
            "dtype": "r64",
            "byte_order": "little",
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.manifest()).encode("utf-8")
        blob = np.ascontiguousarray(self.array, dtype="<f8").tobytes()
        return MAGIC + struct.pack("<I", len(head)) + head + blob

    @classmethod
    def from_bytes(cls, raw: bytes) -> "TensorFile":
        if raw[:4] != MAGIC or len(raw) < 8:
            raise FormatError("missing DSFT header")
        (hlen,) = struct.unpack("<I", raw[4:8])
        try:
            man = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
            shape = tuple(int(x) for x in man["shape"])
            name = man["name"]
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"bad manifest: {exc}") from exc
        if man.get("dtype") != "r64" or man.get("byte_order") != "little":
            raise FormatError(f"unsupported dtype/byte order: {man.get('dtype')}/{man.get('byte_order')}")
        blob = raw[8 + hlen :]
        expected = 8 * int(np.prod(shape, dtype=np.int64))
        if len(blob) != expected:
            raise FormatError(f"blob holds {len(blob)} bytes, manifest shape {shape} needs {expected}")
        arr = np.frombuffer(blob, dtype="<f8").astype(np.float64).reshape(shape)
        return cls(name, arr)


def save_tensor(path, array, name: str | None = None) -> TensorFile:
    path = Path(path)
    tf = TensorFile(name or path.stem, np.asarray(array, dtype=np.float64))
    try:
        path.write_bytes(tf.to_bytes())
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return tf


def read_tensor_file(path) -> TensorFile:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return TensorFile.from_bytes(raw)


def load_tensor(path) -> np.ndarray:
    return read_tensor_file(path).array


def save_bundle(directory, arrays: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    """Write ``arrays`` as one ``.dsft`` file each plus a ``model.json`` manifest."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    params = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        save_tensor(directory / f"{name}{TENSOR_SUFFIX}", arr, name=name)
        params.append({"name": name, "shape": list(arr.shape), "file": f"{name}{TENSOR_SUFFIX}"})
    manifest = {"meta": meta or {}, "params": params}
    try:
        (directory / "model.json").write_text(json.dumps(manifest, indent=2))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return directory


def load_bundle(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "model.json").read_text())
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except ValueError as exc:
        raise FormatError(f"bad model manifest: {exc}") from exc
    arrays = {}
    for p in manifest.get("params", []):
        arr = load_tensor(directory / p["file"])
        if list(arr.shape) != list(p["shape"]):
            raise FormatError(f"{p['name']}: manifest shape {p['shape']} but file holds {list(arr.shape)}")
        arrays[p["name"]] = arr
    return arrays, manifest.get("meta", {})


def save_system(directory, sys: DsfDense) -> Path:
    arrays = {"lam": sys.lam, "B": sys.B, "C": sys.C, "h_init": sys.h_init}
    if sys.D is not None:
        arrays["D"] = sys.D
    return save_bundle(directory, arrays, {"kind": "dsf-dense", "fingerprint": sys.fingerprint})


def load_system(directory) -> DsfDense:
    arrays, meta = load_bundle(directory)
    if meta.get("kind") != "dsf-dense":
        raise FormatError(f"{directory} is not a DSF system bundle")
    return DsfDense(
        lam=arrays["lam"],
        B=arrays["B"],
        C=arrays["C"],
        D=arrays.get("D"),
        h_init=arrays.get("h_init"),
        fingerprint=meta.get("fingerprint"),
    )

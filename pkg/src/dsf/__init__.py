"""Diagonal linear time-varying (DSF) rewrites of attention, selective SSMs and gated RNNs."""
from .core import DsfDense, DsfFactored, as_sequence, densify, load_tensor, save_tensor, validate
from .engines import apply_kernel, materialize_kernel, run, run_kernel, run_scan, run_sequential
from .errors import (
    CapExceededError,
    ConfigError,
    DimensionError,
    DsfError,
    FormatError,
    IoError,
    NonFiniteError,
    NormalizationError,
    PreconditionError,
    UnknownKindError,
)

__version__ = "0.1.0"

"""Error taxonomy. Each class carries the CLI exit code it maps to."""


class DsfError(Exception):
    exit_code = 1
    name = "DsfError"


class DimensionError(DsfError, ValueError):
    exit_code = 4
    name = "DimensionError"


class NonFiniteError(DsfError, ValueError):
    exit_code = 4
    name = "NonFiniteError"


class CapExceededError(DsfError):
    exit_code = 3
    name = "CapExceeded"


class NormalizationError(DsfError, ArithmeticError):
    exit_code = 5
    name = "NormalizationError"


class IoError(DsfError, OSError):
    exit_code = 6
    name = "IoError"


class FormatError(DsfError):
    exit_code = 6
    name = "FormatError"


class PreconditionError(DsfError):
    exit_code = 2
    name = "PreconditionError"


class ConfigError(DsfError, ValueError):
    exit_code = 2
    name = "ConfigError"


class UnknownKindError(DsfError, LookupError):
    exit_code = 2
    name = "UnknownKind"

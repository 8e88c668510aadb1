"""Exception hierarchy.

Each error carries the CLI exit code it maps to, so the driver can translate
library failures without a lookup table.
"""


class QebmError(Exception):
    exit_code = 1


class ConfigError(QebmError, ValueError):
    """Invalid input specification (bad kind, out-of-range index, mismatched dims)."""

    exit_code = 2


class SizeError(ConfigError):
    """Requested object exceeds a dense-size cap."""


class DegeneracyError(QebmError):
    exit_code = 2


class LinearDependenceError(QebmError):
    exit_code = 4


class SpanError(QebmError):
    """Observable (or fidelity target) not reachable with the POVM at hand."""

    exit_code = 4


class OptimizationError(QebmError):
    exit_code = 3

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SchemaError(QebmError):
    exit_code = 5


class CorruptFileError(SchemaError):
    pass

"""Shared exception types.

Every failure a caller is expected to handle gets its own class; plain
ValueError/RuntimeError is reserved for programming errors.
"""


class ContractViolation(ValueError):
    """An argument violates a documented precondition (shape, range, emptiness)."""


class ZeroVectorError(ContractViolation):
    """Cosine similarity requested against an all-zero vector."""


class UndefinedMetricError(ValueError):
    """Metric has no defined value for this input (single-class AUC, zero delta)."""


class DataIntegrityError(ValueError):
    """Cross-record reference cannot be resolved (unknown SKU, product, query)."""


class SnapshotIntegrityError(IOError):
    """Snapshot or delta file is corrupt: bad magic, truncated payload, bad length."""


class StaleDeltaError(ValueError):
    """Delta base version does not match the table version it is applied to."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, message: str):
        super().__init__(message)
        self.step = step


class DegenerateViewError(ValueError):
    """A low-dimension view has an (effectively) all-zero prefix and cannot be renormalized."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""

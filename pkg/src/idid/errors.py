"""Exception hierarchy.

Two families: ``ValidationError`` for malformed inputs (CLI exit code 1) and
``EstimationError`` for inputs that are well formed but on which an estimator
cannot be evaluated (CLI exit code 2).
"""

from __future__ import annotations


class IdidError(Exception):
    """Base class for all package errors."""

    def to_dict(self) -> dict:
        """Machine-readable form: error name, message and any scalar fields."""
        out = {"error": type(self).__name__, "message": str(self)}
        for key, val in vars(self).items():
            if isinstance(val, (int, float, str, bool)) or val is None:
                out[key] = val
        return out


class ValidationError(IdidError):
    pass


class EstimationError(IdidError):
    pass


# -- data validation ---------------------------------------------------------


class MissingColumn(ValidationError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"missing column {column!r}")


class NonBinaryValue(ValidationError):
    def __init__(self, row: int, column: str, value=None):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column!r}: expected 0 or 1, got {value!r}")


class NonFiniteValue(ValidationError):
    def __init__(self, row: int, column: str, value=None):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column!r}: not a finite number ({value!r})")


class EmptyCell(ValidationError):
    """A (t, z) cell has no observations; positivity fails in-sample."""

    def __init__(self, t: int, z: int):
        self.t = t
        self.z = z
        super().__init__(f"no observations with t={t}, z={z}")


class MissingCell(ValidationError):
    def __init__(self, t: int, z: int):
        self.t = t
        self.z = z
        super().__init__(f"summary file has no record for t={t}, z={z}")


class NegativeSE(ValidationError):
    def __init__(self, t: int, z: int, se: float):
        super().__init__(f"negative standard error {se} for t={t}, z={z}")


class DimensionMismatch(ValidationError):
    pass


# -- estimation failures -----------------------------------------------------


class RankDeficient(EstimationError):
    pass


class Separation(EstimationError):
    pass


class NotConverged(EstimationError):
    pass


class DegenerateTrend(EstimationError):
    """The exposure double difference is (numerically) zero."""

    def __init__(self, delta_d: float):
        self.delta_d = delta_d
        super().__init__(f"exposure trends are parallel (delta_D = {delta_d:.3g})")


class CellTooSmall(EstimationError):
    def __init__(self, t: int, z: int, n_cell: int, required: int = 2):
        self.t = t
        self.z = z
        super().__init__(f"cell t={t}, z={z} has {n_cell} rows; at least {required} required")


class DeltaDNearZero(EstimationError):
    def __init__(self, count: int, floor: float):
        self.count = count
        super().__init__(f"{count} observations have |delta_D(x)| <= {floor:g}")


class WeakFirstStage(EstimationError):
    pass


class ZeroSE(EstimationError):
    pass


class TooManyDegenerateResamples(EstimationError):
    pass

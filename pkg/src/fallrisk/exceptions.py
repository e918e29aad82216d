"""Exception hierarchy.

Data problems derive from :class:`DataError` (CLI exit code 2), numerical
failures from :class:`NumericError` (CLI exit code 3).
"""


class FallRiskError(Exception):
    pass


class DataError(FallRiskError, ValueError):
    pass


class NumericError(FallRiskError, ArithmeticError):
    pass


# -- ingestion / schema ------------------------------------------------------

class SchemaError(DataError):
    pass


class MissingColumn(DataError):
    def __init__(self, column, path=None):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"missing column {column!r}{where}")


class MissingValue(DataError):
    def __init__(self, row, column, path=None):
        self.row = row
        self.column = column
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}row {row}: missing value for column {column!r}")


class UnknownCategoryLevel(DataError):
    def __init__(self, row, column, value, path=None):
        self.row = row
        self.column = column
        self.value = value
        where = f"{path}: " if path else ""
        super().__init__(f"{where}row {row}: unknown level {value!r} for column {column!r}")


class InvalidValue(DataError):
    def __init__(self, row, column, value, path=None):
        self.row = row
        self.column = column
        self.value = value
        where = f"{path}: " if path else ""
        super().__init__(f"{where}row {row}: cannot parse {value!r} for column {column!r}")


class OrphanFallEvent(DataError):
    pass


class InconsistentFellFlag(DataError):
    pass


class InconsistentFallTime(DataError):
    pass


class DuplicatePatient(DataError):
    pass


class StageMismatch(DataError):
    pass


class UnknownVariable(DataError):
    pass


class OutOfRange(DataError):
    pass


class InvalidConfig(DataError):
    pass


# -- numerics ----------------------------------------------------------------

class DimensionMismatch(ValueError, FallRiskError):
    pass


class NonpositiveSigma2(ValueError, FallRiskError):
    pass


class SingularHessian(NumericError):
    pass


class NonFiniteObjective(NumericError):
    pass


class GridDegenerate(NumericError):
    pass


class NotConverged(NumericError):
    pass


class BoundsTooNarrow(NumericError):
    pass


class EffectiveSampleTooSmall(NumericError):
    pass


class InvalidProposal(ValueError, FallRiskError):
    pass


# -- selection / evaluation --------------------------------------------------

class AllCandidatesFailed(NumericError):
    pass


class EmptyEnsemble(FallRiskError, ValueError):
    pass


class SingleClass(FallRiskError, ValueError):
    pass


class DegenerateFold(FallRiskError, ValueError):
    pass


class UnknownPatient(FallRiskError, KeyError):
    pass

"""Exception hierarchy. Input/format problems map to CLI exit code 2, numerical failures to 3."""


class AlignliteError(Exception):
    pass


class InputError(AlignliteError):
    """Bad files, shapes, ids, or configuration. CLI exit code 2."""


class NumericalError(AlignliteError):
    """Non-finite values or violated numerical contracts. CLI exit code 3."""


# embedding_store
class MalformedHeader(InputError):
    pass


class DtypeUnsupported(InputError):
    pass


class TruncatedPayload(InputError):
    pass


class NonFiniteValue(InputError):
    """A stored matrix holds NaN or inf; reports the first offending entry."""

    def __init__(self, row, col):
        super().__init__(f"non-finite value at row {row}, col {col}")
        self.row = row
        self.col = col


class RowCountMismatch(InputError):
    pass


class DuplicateId(InputError):
    pass


class CountOutOfRange(InputError):
    pass


class DimensionMismatch(InputError):
    pass


# structure / eval shared
class ShapeMismatch(InputError):
    pass


class UnknownKind(InputError):
    pass


# grad_engine
class CycleDetected(AlignliteError):
    pass


class NonScalarLoss(AlignliteError):
    pass


# layer_select
class KTooLarge(InputError):
    pass


class DegenerateInput(InputError):
    pass


class NTooSmall(InputError):
    pass


class IdMismatch(InputError):
    pass


class EmptyGrid(InputError):
    pass


# align_train
class NonFiniteLoss(NumericalError):
    pass


# eval_suite
class KOutOfRange(InputError):
    pass


class LabelOutOfRange(InputError):
    pass


class EmptyOverlap(InputError):
    pass


class DeltaOutOfRange(InputError):
    pass


class SensitivityBoundExceeded(NumericalError):
    pass


class ConfigError(InputError):
    pass

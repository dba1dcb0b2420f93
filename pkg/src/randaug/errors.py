"""Exception hierarchy shared across the package."""


class RandAugError(Exception):
    """Base class for every error raised by this package."""


class ImageIOError(RandAugError, OSError):
    """A file could not be read or written."""


class FormatError(RandAugError, ValueError):
    """Bytes on disk are not a supported image or dataset format."""


class DimensionMismatch(RandAugError, ValueError):
    pass


class InvalidRange(RandAugError, ValueError):
    pass


class LevelOutOfRange(RandAugError, ValueError):
    pass


class NegativeFactor(RandAugError, ValueError):
    pass


class SizeOutOfRange(RandAugError, ValueError):
    pass


class InvalidSchedule(RandAugError, ValueError):
    pass


class InvalidConfig(RandAugError, ValueError):
    pass


class EmptySubset(InvalidConfig):
    pass


class PolicyOverflow(RandAugError, OverflowError):
    pass


class ParseError(RandAugError, ValueError):
    """Config text could not be parsed.

    Attributes:
        line: 1-based line of the offending token, when known.
        field: dotted path of the offending field, when known.
    """

    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class EvaluatorFailure(RandAugError, RuntimeError):
    """An evaluator raised while scoring a cell.

    ``partial`` holds whatever results were finished before the failure.
    """

    def __init__(self, cell, cause, partial=None):
        super().__init__(f"evaluator failed on cell {cell}: {cause!r}")
        self.cell = cell
        self.cause = cause
        self.partial = partial if partial is not None else {}


class InvalidSizeRange(RandAugError, ValueError):
    pass


class InsufficientCoverage(RandAugError, ValueError):
    def __init__(self, kind):
        super().__init__(
            f"transform {kind} is present in every sample (or none); "
            "its delta is undefined"
        )
        self.kind = kind


class DegenerateDataset(RandAugError, ValueError):
    pass


class NonFiniteLoss(RandAugError, FloatingPointError):
    pass


class InvalidParams(RandAugError, ValueError):
    pass


class LabelOutOfRange(FormatError):
    pass

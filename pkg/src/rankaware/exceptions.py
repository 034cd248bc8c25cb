"""Error hierarchy. CLI exit codes hang off the two roots."""


class RankAwareError(Exception):
    pass


class DataError(RankAwareError):
    """Bad input data: files, ids, annotations, splits."""


class MissingFileError(DataError, FileNotFoundError):
    pass


class CorruptHeaderError(DataError):
    pass


class CorruptPayloadError(DataError):
    pass


class NonFiniteFeatureError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class CycleError(DataError):
    """Pair annotations contradict transitivity."""

    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle in pair annotations: " + " > ".join(map(str, self.cycle)))


class EmptySplitError(DataError):
    pass


class UnknownVideoError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NumericError(RankAwareError, ArithmeticError):
    """Non-finite losses or values during computation."""


class ShapeError(RankAwareError, ValueError):
    pass

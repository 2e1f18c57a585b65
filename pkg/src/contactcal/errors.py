"""Exception types raised across the package."""


class ContactCalError(Exception):
    """Base class for all package errors."""


class GimbalLock(ContactCalError):
    pass


class DimensionMismatch(ContactCalError, ValueError):
    def __init__(self, message, index=None):
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)
        self.index = index


class EmptyCloud(ContactCalError, ValueError):
    pass


class DegenerateNeighborhood(ContactCalError):
    pass


class TargetTooLarge(ContactCalError, ValueError):
    pass


class ParseError(ContactCalError, ValueError):
    def __init__(self, message, line=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{':'.join(where)}: {message}"
        super().__init__(message)
        self.line = line
        self.path = path


class NonFiniteValue(ContactCalError, ValueError):
    pass


class NoCorrespondences(ContactCalError):
    pass


class InsufficientCorrespondences(ContactCalError):
    pass


class DegenerateNormalEquations(ContactCalError):
    """The 6x6 normal equations are rank deficient.

    Carries the numeric ``rank``, the unit ``null_directions`` (rows) and the
    minimum-norm ``increment`` that was computed anyway.
    """

    def __init__(self, rank, null_directions, increment=None):
        super().__init__(f"normal equations rank {rank} < 6")
        self.rank = rank
        self.null_directions = null_directions
        self.increment = increment


class NoActivePairs(ContactCalError):
    pass


class AsymmetricInput(ContactCalError, ValueError):
    pass


class DegenerateProblem(ContactCalError):
    pass


class NonDecreasingCost(ContactCalError):
    pass


class UnknownPreset(ContactCalError, KeyError):
    pass


class EmptySelection(ContactCalError, ValueError):
    pass


class IkFailure(ContactCalError):
    pass

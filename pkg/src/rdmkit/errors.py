"""Exception types raised by rdmkit.

Errors fall into three families that the command-line interface maps to
exit codes: usage problems (2), bad input files or data (3) and numerical
failures (4).
"""


class RDMKitError(Exception):
    """Base class for all rdmkit errors."""

    exit_code = 1


class InvalidArgumentError(RDMKitError, ValueError):
    exit_code = 2


class IngestionError(RDMKitError):
    """A data file could not be read or violates the dataset format."""

    exit_code = 3


class MissingResidualsError(IngestionError):
    pass


class DomainError(RDMKitError, ValueError):
    """A value lies outside the domain of a transform (e.g. sqrt of a negative)."""

    exit_code = 3


class NumericalError(RDMKitError, ArithmeticError):
    exit_code = 4


class CrossvalidationError(NumericalError):
    """Crossvalidated estimates need at least two partitions."""


class DegreesOfFreedomError(NumericalError):
    pass


class ConditioningError(NumericalError):
    pass


class RegularizationError(NumericalError):
    pass


class UndefinedSimilarityError(NumericalError):
    pass


class DegenerateModelError(NumericalError):
    pass

"""Exception hierarchy.

Every error raised by the package derives from :class:`FQRError`. Input and
configuration problems derive from :class:`DataError`; failures of a numerical
routine on valid input derive from :class:`NumericalError`. The command line
maps the two families to exit codes 2 and 3.
"""


class FQRError(Exception):
    """Base class for all package errors."""


class DataError(FQRError, ValueError):
    """Malformed, inconsistent or out-of-range input."""


class NumericalError(FQRError, ArithmeticError):
    """A numerical routine could not produce a valid result."""


# -- data ---------------------------------------------------------------------


class MissingSubject(DataError):
    pass


class OutOfRangeTime(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class InvalidSize(DataError):
    pass


class InvalidConfig(DataError):
    pass


class GridMismatch(DataError):
    pass


# -- numerical ----------------------------------------------------------------


class InsufficientPairs(NumericalError):
    pass


class NumericalFailure(NumericalError):
    pass


class AllZeroSpectrum(NumericalError):
    pass


class SingularConditioning(NumericalError):
    pass


class RankDeficientDesign(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class NotInvertible(NumericalError):
    pass


class SingularContrastCovariance(NumericalError):
    pass


class EigenvalueGapTooSmall(NumericalError):
    pass


class SingularDesign(NumericalError):
    """A baseline test could not be carried out because its design is singular."""

"""Exception hierarchy shared by all nearsight modules."""


class NearsightError(Exception):
    """Base class for every error raised by this package."""


class InvalidSizeError(NearsightError, ValueError):
    pass


class InvalidParameterError(NearsightError, ValueError):
    pass


class DomainMismatchError(NearsightError, ValueError):
    """Raised when a field, matrix or index does not fit the lattice it is used with."""


class AdmissibilityError(NearsightError):
    """A displacement violates the non-interpenetration condition."""


class PerturbationTooLargeError(AdmissibilityError):
    pass


class OutOfStripError(NearsightError, ValueError):
    """Complex wavevector outside the analyticity strip ``|Im xi| <= gamma0 / 2``."""


class NoGapError(NearsightError):
    """The requested band filling does not leave a positive gap (metal)."""


class SolverFailureError(NearsightError):
    pass


class FermiLevelInSpectrumError(NearsightError):
    pass


class ContourError(NearsightError):
    """The contour does not separate occupied from unoccupied states."""


class QuadratureFailureError(NearsightError):
    pass


class IllConditionedDerivativeError(NearsightError):
    pass


class FitFailureError(NearsightError):
    pass


class ConfigError(NearsightError):
    """Malformed or inconsistent experiment configuration."""

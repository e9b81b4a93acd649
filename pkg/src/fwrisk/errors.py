"""Exception types raised across the package."""


class FwriskError(Exception):
    """Base class for all package errors."""


class GridMismatch(FwriskError, ValueError):
    """Curves or partitions do not live on the same time grid."""


class InvalidThreshold(FwriskError, ValueError):
    pass


class DimensionMismatch(FwriskError, ValueError):
    pass


class SingularSystem(FwriskError, ArithmeticError):
    """``I - B`` is not invertible."""


class NearSingularMultiplier(FwriskError, ArithmeticError):
    pass


class EmptyPanel(FwriskError, ValueError):
    pass


class NotSymmetric(FwriskError, ValueError):
    pass


class InvalidGamma(FwriskError, ValueError):
    pass


class DegenerateFamily(FwriskError, RuntimeError):
    """No admissible shift candidate could be generated."""


class DegenerateCovariates(FwriskError, ArithmeticError):
    pass


class SingularGram(FwriskError, ArithmeticError):
    """Pooled Grammian is (numerically) singular.

    Attributes
    ----------
    condition : float
        Condition number of the offending matrix (``inf`` when exactly singular).
    """

    def __init__(self, message, condition=float("inf")):
        super().__init__(message)
        self.condition = condition


class DomainError(FwriskError, ValueError):
    pass


class InvalidTruncation(FwriskError, ValueError):
    pass


class DegenerateDenominator(FwriskError, ArithmeticError):
    def __init__(self, index):
        super().__init__(f"pooled denominator vanishes for eigen-direction l={index}")
        self.index = index


class SplitViolation(FwriskError, ValueError):
    pass


class ConfigError(FwriskError, ValueError):
    pass

"""Worst-risk minimization for function-on-function regression under distribution shift."""

__version__ = "0.1.0"

from . import errors
from .covariance import *  # noqa: F401,F403
from .estimation import *  # noqa: F401,F403
from .fda import *  # noqa: F401,F403
from .minimizer import *  # noqa: F401,F403
from .risk import *  # noqa: F401,F403
from .sem import *  # noqa: F401,F403
from .shiftset import *  # noqa: F401,F403
from . import covariance, estimation, fda, minimizer, risk, sem, shiftset

__all__ = (
    ["errors", "__version__"]
    + covariance.__all__
    + estimation.__all__
    + fda.__all__
    + minimizer.__all__
    + risk.__all__
    + sem.__all__
    + shiftset.__all__
)

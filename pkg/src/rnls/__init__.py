"""Numerical laboratory for a two-component quadratic NLS system.

The system evolved here is

    i d_t u1 = -Lap u1 - kappa |u1| u1 - gamma conj(u1) u2
    i d_t u2 = -2 Lap u2 - 2 |u2| u2 - gamma u1^2

with standing waves G(omega t)(alpha phi, beta phi) built from the positive
solution phi of -Lap phi + omega phi = phi^2.
"""

__version__ = "0.1.0"

from .errors import NumericalError, RNLSError, ValidationError  # noqa: F401
from .model_core import (  # noqa: F401
    BranchPoint,
    CouplingParams,
    branch_points,
    classify_J,
    classify_K,
)

"""Log-log reparameterization of ordered baseline survival values.

For a curve ``1 = S_1 > S_2 > ... > S_{J+1} > 0`` the free vector is

    phi_1 = log(-log S_2)
    phi_j = log(-log S_{j+1}) - log(-log S_j),   j >= 2

so ordering becomes the simple bound ``phi_j >= 0`` for ``j >= 2``.  When
``S_1`` is itself free the chain starts one step earlier, at ``log(-log S_1)``.
"""

import numpy as np

from .data_model import SurvivalCurve
from .errors import BoundViolation


def reparameterize(curve: SurvivalCurve) -> np.ndarray:
    s = curve.as_array()
    chain = s if curve.s1_free else s[1:]
    if np.any(chain <= 0) or np.any(chain >= 1):
        raise BoundViolation("survival values must lie strictly inside (0, 1)")
    log_h = np.log(-np.log(chain))
    phi = np.diff(log_h, prepend=0.0)
    if np.any(phi[1:] < 0):
        raise BoundViolation("survival values must be non-increasing")
    return phi


def dereparameterize(phi, s1_free: bool = False) -> SurvivalCurve:
    phi = np.asarray(phi, dtype=float)
    if np.any(phi[1:] < 0):
        raise BoundViolation("phi_j must be >= 0 for j >= 2")
    chain = np.exp(-np.exp(np.cumsum(phi)))
    s = chain if s1_free else np.concatenate([[1.0], chain])
    return SurvivalCurve(tuple(s), s1_free=s1_free)


def cumulative_log_hazard(phi) -> np.ndarray:
    """``log(-log S)`` along the chain, i.e. the running sum of ``phi``."""
    return np.cumsum(phi, axis=-1)


def lower_bounds(n: int) -> list:
    return [None] + [0.0] * (n - 1)

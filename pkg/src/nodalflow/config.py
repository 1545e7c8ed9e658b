"""Central numerical tolerances and defaults."""

from __future__ import annotations

import math
from dataclasses import dataclass

# Distinguished coupling value: Dirichlet conditions on the nodal set.
INFINITY = math.inf


@dataclass(frozen=True)
class Tolerances:
    tol_root: float = 1e-12
    tol_match: float = 1e-6  # relative, spectral coincidence
    tol_gap: float = 1e-6  # simplicity of a branch
    tol_zero: float = 1e-14  # relative to max |v|, exact grid zeros
    tol_monotone: float = 1e-8  # relative, sample-to-sample decrease allowed
    tol_inertia: float = 1e-8  # relative to ||interface matrix||
    pole_guard: float = 1e-9
    tol_symmetry: float = 1e-12  # relative to ||interface matrix||


TOL = Tolerances()

# N + 1 = 600 is divisible by 2, 3, 4, 5, 6, 8, 10, 12, so equidistributed
# partitions with these denominators fall exactly on grid nodes.
DEFAULT_GRID = 599
MIN_GRID = 16
DEFAULT_SIGMA_MAX = 1e3
DEFAULT_SIGMA_COUNT = 101


def sigma_grid(sigma_max: float = DEFAULT_SIGMA_MAX, count: int = DEFAULT_SIGMA_COUNT):
    """Samples uniform in arctan(sigma) on [0, arctan(sigma_max)]."""
    import numpy as np

    if sigma_max <= 0 or count < 2:
        raise ValueError("sigma_max must be positive and count >= 2")
    t = np.linspace(0.0, math.atan(sigma_max), count)
    s = np.tan(t)
    s[0] = 0.0
    s[-1] = sigma_max
    return s

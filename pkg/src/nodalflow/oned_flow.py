"""One-dimensional delta-coupled Schrodinger operators and their spectral flow.

The family is ``L_sigma = -d^2/dx^2 + q(x)`` on ``[0, length]`` with Dirichlet
ends, continuity at each partition point ``Z_i`` and the jump condition
``u'(Z_i+) - u'(Z_i-) = sigma * u(Z_i)``.  Two backends are provided:
a symmetric tridiagonal finite-difference discretization, and closed-form
secular equations for ``q = 0`` with equidistributed partitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal, eigvalsh_tridiagonal
from scipy.optimize import bisect

from .config import DEFAULT_GRID, INFINITY, MIN_GRID, TOL, sigma_grid
from .errors import (
    DegeneracyError,
    DiscretizationError,
    IndistinguishablePartitionError,
    PoleError,
)


@dataclass(frozen=True)
class Problem1D:
    """Interval length, uniformly sampled potential (endpoints included) and partition."""

    length: float
    potential: tuple = ()
    partition: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "potential", tuple(float(v) for v in self.potential))
        object.__setattr__(self, "partition", tuple(float(z) for z in self.partition))
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length}")
        if len(self.potential) == 1:
            raise ValueError("potential needs 0 or at least 2 samples")
        zs = self.partition
        if zs and (zs[0] <= 0 or zs[-1] >= self.length):
            raise ValueError("partition points must lie strictly inside (0, length)")
        if any(b <= a for a, b in zip(zs, zs[1:])):
            raise ValueError("partition must be strictly increasing")

    @property
    def is_free(self) -> bool:
        return not self.potential or not any(self.potential)

    def potential_at(self, x: np.ndarray) -> np.ndarray:
        if not self.potential:
            return np.zeros_like(x, dtype=float)
        xs = np.linspace(0.0, self.length, len(self.potential))
        return np.interp(x, xs, np.asarray(self.potential))

    def with_partition(self, partition: Sequence[float]) -> "Problem1D":
        return Problem1D(self.length, self.potential, tuple(partition))

    @classmethod
    def from_function(cls, length, func, samples=2001, partition=()):
        xs = np.linspace(0.0, length, samples)
        return cls(length, tuple(func(xs)), tuple(partition))


@dataclass
class DiscreteOperator1D:
    """Tridiagonal realization of the delta-coupled form on N interior nodes.

    For ``sigma = INFINITY`` the partition rows are Dirichlet rows: unit
    diagonal, zero coupling.  Those rows are excluded by :func:`eigens_1d`.
    """

    grid_count: int
    spacing: float
    diagonal: np.ndarray
    offdiagonal: np.ndarray
    sigma: float
    partition_indices: tuple = ()
    snap_errors: tuple = ()

    @property
    def nodes(self) -> np.ndarray:
        return self.spacing * np.arange(1, self.grid_count + 1)

    @property
    def is_dirichlet_on_partition(self) -> bool:
        return self.sigma == INFINITY

    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.grid_count, dtype=bool)
        if self.is_dirichlet_on_partition:
            mask[list(self.partition_indices)] = False
        return mask

    def blocks(self) -> list[tuple[int, int]]:
        """Half-open index ranges of the subintervals between partition nodes."""
        cuts = [-1, *self.partition_indices, self.grid_count]
        return [(a + 1, b) for a, b in zip(cuts, cuts[1:]) if b > a + 1]

    def block(self, start: int, stop: int) -> "DiscreteOperator1D":
        """Dirichlet operator on nodes ``start:stop`` (a subinterval)."""
        diag = self.diagonal[start:stop].copy()
        off = self.offdiagonal[start:stop - 1].copy()
        return DiscreteOperator1D(stop - start, self.spacing, diag, off, 0.0)

    def dense(self) -> np.ndarray:
        a = np.diag(self.diagonal)
        a += np.diag(self.offdiagonal, 1) + np.diag(self.offdiagonal, -1)
        return a

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diagonal * v
        out[:-1] += self.offdiagonal * v[1:]
        out[1:] += self.offdiagonal * v[:-1]
        return out

    def norm(self) -> float:
        # Gershgorin bound, adequate as a scale for residual tests.
        off = np.abs(self.offdiagonal)
        row = np.abs(self.diagonal).copy()
        row[:-1] += off
        row[1:] += off
        return float(row.max())

    def _reduced(self):
        mask = self.free_mask()
        idx = np.flatnonzero(mask)
        d = self.diagonal[idx]
        e = np.where(np.diff(idx) == 1, self.offdiagonal[idx[:-1]], 0.0)
        return idx, d, e


@dataclass
class EigenPair1D:
    value: float
    vector: np.ndarray

    def residual(self, op: DiscreteOperator1D) -> float:
        return float(np.linalg.norm(op.matvec(self.vector) - self.value * self.vector))


@dataclass(frozen=True)
class SecularModel:
    length: float
    zeros_count: int
    branch_symmetry: str = "symmetric"

    def __post_init__(self):
        if self.zeros_count not in (1, 2):
            raise ValueError("zeros_count must be 1 or 2")
        if self.branch_symmetry not in ("symmetric", "antisymmetric"):
            raise ValueError("branch_symmetry must be 'symmetric' or 'antisymmetric'")
        if not self.length > 0:
            raise ValueError("length must be positive")

    @property
    def branch_count(self) -> int:
        return self.zeros_count

    def partition(self) -> tuple:
        n = self.zeros_count + 1
        return tuple(self.length * i / n for i in range(1, n))


@dataclass
class FlowCurve:
    sigma_samples: np.ndarray
    values: np.ndarray
    limit: float
    branch_index: int
    evaluator: Callable[[float], float] | None = field(default=None, repr=False, compare=False)

    @property
    def start(self) -> float:
        return float(self.values[0])

    def at(self, sigma: float) -> float:
        if self.evaluator is None:
            raise ValueError("curve has no evaluator attached")
        return self.evaluator(sigma)

    def is_constant(self, rtol: float = 1e-8) -> bool:
        scale = max(1.0, abs(self.limit))
        return bool(np.ptp(self.values) <= rtol * scale and
                    abs(self.limit - self.values[0]) <= rtol * scale)

    def __add__(self, other: "FlowCurve") -> "FlowCurve":
        if not np.array_equal(self.sigma_samples, other.sigma_samples):
            raise ValueError("curves sampled on different sigma grids")
        ea, eb = self.evaluator, other.evaluator
        ev = (lambda s: ea(s) + eb(s)) if ea is not None and eb is not None else None
        return FlowCurve(self.sigma_samples, self.values + other.values,
                         self.limit + other.limit, self.branch_index, ev)


@dataclass
class LinftySpectrum:
    values: np.ndarray  # sorted, repeated by multiplicity
    levels: list  # (value, multiplicity) for distinct values

    def multiplicity(self, value: float, rtol: float = TOL.tol_match) -> int:
        return int(np.sum(np.abs(self.values - value) <= rtol * max(1.0, abs(value))))


@dataclass
class SturmReport:
    k: int
    node_count: int
    limits_ok: bool
    eigenvalue: float
    limits: list
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.node_count == self.k - 1 and self.limits_ok


# ---------------------------------------------------------------------------
# Finite-difference backend


def _snap(problem: Problem1D, h: float, n: int):
    indices, errors = [], []
    for z in problem.partition:
        j = min(max(int(round(z / h)) - 1, 0), n - 1)
        indices.append(j)
        errors.append(abs((j + 1) * h - z))
    if len(set(indices)) != len(indices):
        raise IndistinguishablePartitionError(
            f"partition {problem.partition} collapses onto grid nodes {indices}; refine the grid")
    return tuple(indices), tuple(errors)


def build_operator(problem: Problem1D, sigma: float, grid_count: int = DEFAULT_GRID) -> DiscreteOperator1D:
    """Discretize ``L_sigma`` with a ``sigma/h`` boost at the snapped partition nodes.

    Finite ``sigma`` may be any real (negative values are used only for
    central differences at ``sigma = 0``).
    """
    if grid_count <= 0:
        raise ValueError(f"grid_count must be positive, got {grid_count}")
    if grid_count < MIN_GRID:
        raise ValueError(f"grid_count must be at least {MIN_GRID}, got {grid_count}")
    if math.isnan(sigma) or sigma == -math.inf:
        raise ValueError(f"invalid sigma {sigma}")
    n = int(grid_count)
    h = problem.length / (n + 1)
    x = h * np.arange(1, n + 1)
    diag = 2.0 / h**2 + problem.potential_at(x)
    off = np.full(n - 1, -1.0 / h**2)
    idx, err = _snap(problem, h, n)
    if idx:
        ii = np.asarray(idx)
        if sigma == INFINITY:
            diag[ii] = 1.0
            off[ii[ii > 0] - 1] = 0.0
            off[ii[ii < n - 1]] = 0.0
        else:
            diag[ii] += sigma / h
    return DiscreteOperator1D(n, h, diag, off, sigma, idx, err)


def _normalize(vec: np.ndarray, h: float) -> np.ndarray:
    vec = vec / math.sqrt(h * float(vec @ vec))
    k = int(np.argmax(np.abs(vec) > 1e-8 * np.abs(vec).max()))
    return vec if vec[k] > 0 else -vec


def eigens_1d(op: DiscreteOperator1D, count: int) -> list[EigenPair1D]:
    """Lowest ``count`` eigenpairs, ascending, normalized so that ``h * sum(v**2) = 1``."""
    idx, d, e = op._reduced()
    if count < 1 or count > len(idx):
        raise ValueError(f"count must be in [1, {len(idx)}], got {count}")
    w, v = eigh_tridiagonal(d, e, select="i", select_range=(0, count - 1))
    pairs = []
    for j in range(count):
        full = np.zeros(op.grid_count)
        full[idx] = v[:, j]
        pairs.append(EigenPair1D(float(w[j]), _normalize(full, op.spacing)))
    return pairs


def eigenvalues_1d(op: DiscreteOperator1D, count: int) -> np.ndarray:
    idx, d, e = op._reduced()
    if count < 1 or count > len(idx):
        raise ValueError(f"count must be in [1, {len(idx)}], got {count}")
    return eigvalsh_tridiagonal(d, e, select="i", select_range=(0, count - 1))


def _group_levels(values: np.ndarray, rtol: float) -> list:
    levels = []
    for v in values:
        if levels and abs(v - levels[-1][0]) <= rtol * max(1.0, abs(levels[-1][0])):
            levels[-1][1] += 1
        else:
            levels.append([float(v), 1])
    return [tuple(lv) for lv in levels]


def linfty_spectrum(problem: Problem1D, count: int, grid_count: int = DEFAULT_GRID) -> LinftySpectrum:
    """Merged Dirichlet spectra of the subintervals cut out by the partition."""
    if count < 1:
        raise ValueError("count must be >= 1")
    op = build_operator(problem, 0.0, grid_count)
    pieces = []
    for start, stop in op.blocks():
        sub = op.block(start, stop)
        pieces.extend(p.value for p in eigens_1d(sub, min(count, sub.grid_count)))
    values = np.sort(np.asarray(pieces))[:count]
    return LinftySpectrum(values, _group_levels(values, TOL.tol_match))


class BranchEvaluator:
    """Evaluates the ``branch``-th ordered eigenvalue of the FD operator at any sigma."""

    def __init__(self, problem: Problem1D, branch: int, grid_count: int = DEFAULT_GRID):
        if branch < 1:
            raise ValueError("branch must be >= 1")
        self.problem = problem
        self.branch = branch
        self.grid_count = grid_count
        self._base = build_operator(problem, 0.0, grid_count)
        self._inf = build_operator(problem, INFINITY, grid_count)
        self._limit = None

    def __call__(self, sigma: float) -> float:
        if sigma == INFINITY:
            if self._limit is None:
                self._limit = float(eigenvalues_1d(self._inf, self.branch)[-1])
            return self._limit
        base = self._base
        if not base.partition_indices or sigma == 0.0:
            d = base.diagonal
        else:
            d = base.diagonal.copy()
            d[list(base.partition_indices)] += sigma / base.spacing
        w = eigvalsh_tridiagonal(d, base.offdiagonal, select="i",
                                 select_range=(self.branch - 1, self.branch - 1))
        return float(w[0])


def _check_monotone(values: np.ndarray, limit: float):
    scale = max(1.0, np.abs(values).max(), abs(limit))
    drops = np.diff(values)
    if np.any(drops < -TOL.tol_monotone * scale):
        j = int(np.argmin(drops))
        raise DiscretizationError(f"flow decreases by {-drops[j]:.3e} at sample {j}; refine the grid")
    if values.max() > limit + TOL.tol_monotone * scale:
        raise DiscretizationError(f"flow exceeds its sigma->inf limit {limit}; refine the grid")


def branch_flow(problem: Problem1D, branch: int, sigma_samples=None,
                grid_count: int = DEFAULT_GRID) -> FlowCurve:
    """Sample the ``branch``-th eigenvalue curve of the FD family over ``sigma_samples``."""
    s = sigma_grid() if sigma_samples is None else np.asarray(sigma_samples, dtype=float)
    if s.ndim != 1 or len(s) == 0 or s[0] != 0.0 or np.any(np.diff(s) <= 0):
        raise ValueError("sigma_samples must be strictly increasing and start at 0")
    ev = BranchEvaluator(problem, branch, grid_count)
    values = np.array([ev(float(sig)) for sig in s])
    limit = float(linfty_spectrum(problem, branch, grid_count).values[branch - 1])
    _check_monotone(values, limit)
    return FlowCurve(s, values, limit, branch, ev)


def derivative_terms(problem: Problem1D, branch: int, sigma: float,
                     grid_count: int = DEFAULT_GRID, dsigma: float = 1e-3):
    """(central-difference slope of the branch, sum of squared eigenvector values on the partition)."""
    op = build_operator(problem, sigma, grid_count)
    pairs = eigens_1d(op, min(branch + 1, op.grid_count))
    gamma = pairs[branch - 1].value
    scale = max(1.0, abs(gamma))
    neighbours = [p.value for j, p in enumerate(pairs) if j != branch - 1 and abs(j - branch + 1) == 1]
    if any(abs(v - gamma) <= TOL.tol_gap * scale for v in neighbours):
        raise DegeneracyError(f"branch {branch} is not simple at sigma={sigma}")
    u = pairs[branch - 1].vector
    identity = float(sum(u[j] ** 2 for j in op.partition_indices))
    ev = BranchEvaluator(problem, branch, grid_count)
    slope = (ev(sigma + dsigma) - ev(sigma - dsigma)) / (2.0 * dsigma)
    return slope, identity


def derivative_identity_check(problem: Problem1D, branch: int, sigma: float,
                              grid_count: int = DEFAULT_GRID, dsigma: float = 1e-3) -> float:
    slope, identity = derivative_terms(problem, branch, sigma, grid_count, dsigma)
    return abs(slope - identity) / max(1.0, identity)


def sign_changes(v: np.ndarray, rtol: float = 1e-10) -> int:
    v = np.asarray(v, dtype=float)
    nz = v[np.abs(v) > rtol * np.abs(v).max()]
    return int(np.count_nonzero(np.signbit(nz[1:]) != np.signbit(nz[:-1])))


def nodal_zeros(problem: Problem1D, k: int, grid_count: int = DEFAULT_GRID) -> list[float]:
    """Interior zeros of the k-th Dirichlet eigenvector (partition ignored), linearly interpolated."""
    if k < 1:
        raise ValueError("k must be >= 1")
    op = build_operator(problem.with_partition(()), 0.0, grid_count)
    v = eigens_1d(op, k)[-1].vector
    x = op.nodes
    tiny = 1e-10 * np.abs(v).max()
    zeros = []
    j = 0
    while j < len(v) - 1:
        if abs(v[j]) <= tiny:
            zeros.append(float(x[j]))
            j += 1
            continue
        a, b = v[j], v[j + 1]
        if abs(b) > tiny and (a > 0) != (b > 0):
            zeros.append(float(x[j] + op.spacing * a / (a - b)))
        j += 1
    return zeros


def sturm_verify(problem: Problem1D, k: int, grid_count: int = DEFAULT_GRID) -> SturmReport:
    """Sign-change count of the k-th eigenvector and the sigma -> inf limit stratification.

    ``problem.partition`` should be the interior zeros of the k-th eigenfunction.
    """
    op0 = build_operator(problem, 0.0, grid_count)
    pair = eigens_1d(op0, k)[-1]
    node_count = sign_changes(pair.vector)
    lam = pair.value
    linf = linfty_spectrum(problem, k + 1, grid_count)
    op = build_operator(problem, INFINITY, grid_count)
    pieces = [(b - a + 1) * op.spacing for a, b in op.blocks()]
    snap = max(op.snap_errors, default=0.0)
    # Moving a Dirichlet end by delta shifts a piece eigenvalue by ~ 2*lam*delta/len.
    tol = abs(lam) * (TOL.tol_match + 6.0 * snap / min(pieces))
    limits = [float(v) for v in linf.values]
    below = all(abs(v - lam) <= tol for v in limits[:k])
    above = len(limits) > k and limits[k] > lam + tol
    return SturmReport(k, node_count, bool(below and above), lam, limits, tol)


# ---------------------------------------------------------------------------
# Closed-form secular backend (q = 0, equidistributed zeros)


def _near_pole(kappa: float, c: float, offset: float) -> bool:
    # Poles of cot(kappa*c) (offset 0) or tan(kappa*c) (offset pi/2) in kappa.
    period = math.pi / c
    j = round((kappa * c - offset) / math.pi)
    return abs(kappa - (offset / c + j * period)) <= TOL.pole_guard


def _cot(x):
    return math.cos(x) / math.sin(x)


def secular_sigma(model: SecularModel, kappa: float) -> float:
    """Coupling strength at which ``kappa**2`` is the model's branch eigenvalue."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    ell = model.length
    if model.zeros_count == 1:
        terms = [(ell / 2, 0.0)]
    elif model.branch_symmetry == "symmetric":
        terms = [(ell / 6, math.pi / 2), (ell / 3, 0.0)]
    else:
        terms = [(ell / 3, 0.0), (ell / 6, 0.0)]
    for c, off in terms:
        if _near_pole(kappa, c, off):
            raise PoleError(f"kappa={kappa} within pole guard of a pole")
    if model.zeros_count == 1:
        return -2.0 * kappa * _cot(kappa * ell / 2)
    if model.branch_symmetry == "symmetric":
        return kappa * (math.tan(kappa * ell / 6) - _cot(kappa * ell / 3))
    return -kappa * (_cot(kappa * ell / 3) + _cot(kappa * ell / 6))


def _branch_window(model: SecularModel, branch: int):
    c = math.pi / model.length
    if model.zeros_count == 1:
        return model, c, 2 * c
    if branch == 1:
        return SecularModel(model.length, 2, "symmetric"), c, 3 * c
    return SecularModel(model.length, 2, "antisymmetric"), 2 * c, 3 * c


def secular_branch_lambda(model: SecularModel, branch: int, sigma: float) -> float:
    """Invert the secular equation on the branch's monotone kappa window by bisection."""
    if branch < 1 or branch > model.branch_count:
        raise ValueError(f"branch must be in [1, {model.branch_count}], got {branch}")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    sub, lo, pole = _branch_window(model, branch)
    hi = pole - 2.0 * TOL.pole_guard
    if sigma == INFINITY:
        return pole**2

    def f(k):
        return secular_sigma(sub, k) - sigma

    if f(lo) >= 0.0:
        return lo**2
    if f(hi) <= 0.0:
        return hi**2
    kappa = bisect(f, lo, hi, xtol=TOL.tol_root, rtol=4 * np.finfo(float).eps, maxiter=200)
    return kappa**2


def secular_model_for(problem: Problem1D, rtol: float = 1e-12) -> SecularModel | None:
    """The closed-form model matching ``problem``, or None if none applies."""
    if not problem.is_free or len(problem.partition) not in (1, 2):
        return None
    model = SecularModel(problem.length, len(problem.partition))
    if all(abs(a - b) <= rtol * problem.length for a, b in zip(model.partition(), problem.partition)):
        return model
    return None

"""Spectral flow on a rectangle with additively separable potential.

The rectangle operator ``-Delta + q(x) + r(y)`` has eigenvalues
``lambda_mn = lambda^x_m + lambda^y_n``; with the delta coupling placed on
the nodal lines of the ``(m*, n*)`` product eigenfunction, every flow curve
is the sum of two one-dimensional factor flows.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import bisect

from . import oned_flow as od
from .config import DEFAULT_GRID, INFINITY, TOL, sigma_grid
from .errors import ConsistencyError, GapError, TruncationError


@dataclass(frozen=True, order=True)
class ModeIndex:
    m: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"mode indices must be positive, got ({self.m}, {self.n})")

    def __str__(self):
        return f"({self.m},{self.n})"

    def as_list(self):
        return [self.m, self.n]


@dataclass(frozen=True)
class RectProblem:
    """Rectangle ``[0, alpha*pi] x [0, pi]``; ``alpha_axis='y'`` puts alpha on the y side instead."""

    alpha: float
    q_samples: tuple = ()
    r_samples: tuple = ()
    alpha_axis: str = "x"

    def __post_init__(self):
        object.__setattr__(self, "q_samples", tuple(float(v) for v in self.q_samples))
        object.__setattr__(self, "r_samples", tuple(float(v) for v in self.r_samples))
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if len(self.q_samples) == 1 or len(self.r_samples) == 1:
            raise ValueError("potential sample lists must be empty or have >= 2 entries")
        if self.alpha_axis not in ("x", "y"):
            raise ValueError("alpha_axis must be 'x' or 'y'")

    @property
    def x_length(self) -> float:
        return self.alpha * math.pi if self.alpha_axis == "x" else math.pi

    @property
    def y_length(self) -> float:
        return math.pi if self.alpha_axis == "x" else self.alpha * math.pi

    def x_problem(self, partition=()) -> od.Problem1D:
        return od.Problem1D(self.x_length, self.q_samples, tuple(partition))

    def y_problem(self, partition=()) -> od.Problem1D:
        return od.Problem1D(self.y_length, self.r_samples, tuple(partition))

    @property
    def is_free(self) -> bool:
        return not any(self.q_samples) and not any(self.r_samples)


@dataclass
class SpectralFactors:
    x_values: np.ndarray
    y_values: np.ndarray
    x_vectors: np.ndarray | None = None  # rows are eigenvectors
    y_vectors: np.ndarray | None = None
    problem: RectProblem | None = None
    grid_count: tuple = (DEFAULT_GRID, DEFAULT_GRID)

    @property
    def truncation(self) -> int:
        return min(len(self.x_values), len(self.y_values))

    @property
    def reliable_below(self) -> float:
        """Every mode with eigenvalue <= this bound is inside the truncation."""
        return float(min(self.x_values[-1] + self.y_values[0], self.x_values[0] + self.y_values[-1]))

    @classmethod
    def from_values(cls, x_values, y_values):
        return cls(np.asarray(x_values, dtype=float), np.asarray(y_values, dtype=float))

    def modes(self):
        for m in range(1, len(self.x_values) + 1):
            for n in range(1, len(self.y_values) + 1):
                yield ModeIndex(m, n)


@dataclass
class DeficiencyReport:
    lambda_star: float
    kstar: int
    multiplicity: int
    nodal_count: int
    deficiency: int
    morse_index: int
    contributing_points: list
    crossings: list  # (ModeIndex, sigma0)
    epsilon: float

    def to_dict(self) -> dict:
        return {
            "lambda_star": self.lambda_star,
            "kstar": self.kstar,
            "multiplicity": self.multiplicity,
            "nodal_count": self.nodal_count,
            "deficiency": self.deficiency,
            "morse_index": self.morse_index,
            "contributing_points": [p.as_list() for p in self.contributing_points],
            "crossings": [{"mode": p.as_list(), "sigma0": s} for p, s in self.crossings],
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeficiencyReport":
        return cls(
            float(d["lambda_star"]), int(d["kstar"]), int(d["multiplicity"]), int(d["nodal_count"]),
            int(d["deficiency"]), int(d["morse_index"]),
            [ModeIndex(*p) for p in d["contributing_points"]],
            [(ModeIndex(*c["mode"]), float(c["sigma0"])) for c in d["crossings"]],
            float(d["epsilon"]),
        )

    def consistency_errors(self) -> list[str]:
        errs = []
        if self.deficiency != self.kstar - self.nodal_count:
            errs.append("deficiency != kstar - nodal_count")
        if self.deficiency < 0:
            errs.append("negative deficiency")
        if self.morse_index != self.deficiency + self.multiplicity - 1:
            errs.append("morse_index != deficiency + multiplicity - 1")
        if len(self.contributing_points) != self.morse_index:
            errs.append("contributing_points count != morse_index")
        return errs


@dataclass
class TheoremEntry:
    mode: ModeIndex
    lambda_mn: float
    predicate: bool
    sigma0: float | None
    beyond_sigma_max: bool = False

    @property
    def crosses(self) -> bool:
        return self.sigma0 is not None

    @property
    def agrees(self) -> bool:
        return self.predicate == self.crosses


@dataclass
class TheoremReport:
    star: ModeIndex
    lambda_star: float
    epsilon: float
    entries: list = field(default_factory=list)

    @property
    def disagreements(self) -> list:
        return [e for e in self.entries if not e.agrees]

    @property
    def ok(self) -> bool:
        return not self.disagreements

    def contributing(self) -> list:
        return [e.mode for e in self.entries if e.predicate]

    def crossing_modes(self) -> list:
        return [e.mode for e in self.entries if e.crosses]


def _tol(value: float) -> float:
    return TOL.tol_match * max(1.0, abs(value))


def _grid_pair(grid_count):
    if isinstance(grid_count, (tuple, list)):
        return int(grid_count[0]), int(grid_count[1])
    return int(grid_count), int(grid_count)


def _workers() -> int | None:
    raw = os.environ.get("NODALFLOW_THREADS")
    if not raw:
        return None
    return max(1, int(raw))


def factor_spectra(problem: RectProblem, truncation: int, grid_count=DEFAULT_GRID,
                   window: float | None = None) -> SpectralFactors:
    """First ``truncation`` Dirichlet eigenpairs of each 1D factor."""
    if truncation < 2:
        raise ValueError("truncation must be >= 2")
    nx, ny = _grid_pair(grid_count)
    xs = od.eigens_1d(od.build_operator(problem.x_problem(), 0.0, nx), truncation)
    ys = od.eigens_1d(od.build_operator(problem.y_problem(), 0.0, ny), truncation)
    f = SpectralFactors(
        np.array([p.value for p in xs]), np.array([p.value for p in ys]),
        np.array([p.vector for p in xs]), np.array([p.vector for p in ys]),
        problem, (nx, ny),
    )
    for name, v in (("x", f.x_values), ("y", f.y_values)):
        if np.any(np.diff(v) <= 0):
            raise ConsistencyError(f"{name}-factor eigenvalues not strictly increasing")
    if window is not None and f.reliable_below <= window:
        raise TruncationError(
            f"truncation {truncation} only resolves eigenvalues below {f.reliable_below:.6g}; "
            f"need > {window:.6g}", needed=_needed_truncation(problem, f, window))
    return f


def _needed_truncation(problem: RectProblem, f: SpectralFactors, window: float) -> int:
    # Dirichlet eigenvalues of -d^2 + q on [0, L] are >= (m pi / L)^2 + min q.
    qmin = min(problem.q_samples, default=0.0)
    rmin = min(problem.r_samples, default=0.0)
    mx = problem.x_length / math.pi * math.sqrt(max(window - qmin - f.y_values[0], 0.0))
    my = problem.y_length / math.pi * math.sqrt(max(window - rmin - f.x_values[0], 0.0))
    return int(math.ceil(max(mx, my))) + 2


def lambda_mn(factors: SpectralFactors, mode: ModeIndex) -> float:
    if mode.m > len(factors.x_values) or mode.n > len(factors.y_values):
        raise ValueError(f"mode {mode} outside truncation {factors.truncation}")
    return float(factors.x_values[mode.m - 1] + factors.y_values[mode.n - 1])


def _all_values(factors: SpectralFactors) -> np.ndarray:
    return factors.x_values[:, None] + factors.y_values[None, :]


def _check_window(factors: SpectralFactors, lam: float):
    if lam + _tol(lam) >= factors.reliable_below:
        raise TruncationError(
            f"eigenvalue {lam:.6g} is at the truncation boundary {factors.reliable_below:.6g}",
            needed=2 * factors.truncation)


def kstar(factors: SpectralFactors, mode: ModeIndex) -> tuple[int, int]:
    """(first index of the eigenvalue lambda_{mode}, its multiplicity)."""
    lam = lambda_mn(factors, mode)
    _check_window(factors, lam)
    vals = _all_values(factors)
    tol = _tol(lam)
    return int(np.sum(vals < lam - tol)) + 1, int(np.sum(np.abs(vals - lam) <= tol))


def nodal_count(mode: ModeIndex) -> int:
    return mode.m * mode.n


def contributes(factors: SpectralFactors, mode: ModeIndex, star: ModeIndex) -> bool:
    lam = lambda_mn(factors, star)
    return lambda_mn(factors, mode) <= lam + _tol(lam) and (mode.m > star.m or mode.n > star.n)


def deficiency(factors: SpectralFactors, star: ModeIndex) -> int:
    """Courant index minus nodal count, cross-checked against the lattice count."""
    k, _ = kstar(factors, star)
    delta = k - nodal_count(star)
    lam = lambda_mn(factors, star)
    tol = _tol(lam)
    lattice = sum(
        1 for p in factors.modes()
        if lambda_mn(factors, p) < lam - tol and (p.m > star.m or p.n > star.n))
    if lattice != delta:
        raise ConsistencyError(f"index deficiency {delta} != lattice count {lattice} for star {star}")
    return delta


def morse_index_lattice(factors: SpectralFactors, star: ModeIndex) -> int:
    return len(contributing_points(factors, star))


def contributing_points(factors: SpectralFactors, star: ModeIndex) -> list[ModeIndex]:
    lam = lambda_mn(factors, star)
    _check_window(factors, lam)
    return [p for p in factors.modes() if contributes(factors, p, star)]


def auto_factors(problem: RectProblem, star: ModeIndex, grid_count=DEFAULT_GRID) -> SpectralFactors:
    """Factor spectra with the truncation grown until the window past lambda* is resolved."""
    nx, ny = _grid_pair(grid_count)
    M = max(star.m, star.n) + 4
    while True:
        M = min(M, nx, ny)
        f = factor_spectra(problem, M, (nx, ny))
        lam = lambda_mn(f, star)
        vals = _all_values(f)
        above = vals[vals > lam + _tol(lam)]
        if above.size and above.min() < f.reliable_below:
            gap = float(above.min()) - lam
            if f.reliable_below > lam + 4 * gap:
                return f
        if M >= min(nx, ny):
            raise TruncationError(f"grid too coarse to resolve the window above {lam:.6g}",
                                  needed=2 * M)
        M *= 2


def star_partitions(factors: SpectralFactors, star: ModeIndex):
    """Zeros of the m*-th x-factor and n*-th y-factor eigenvectors."""
    p = factors.problem
    nx, ny = factors.grid_count
    return od.nodal_zeros(p.x_problem(), star.m, nx), od.nodal_zeros(p.y_problem(), star.n, ny)


def linfty_values(factors: SpectralFactors, star: ModeIndex, count: int | None = None) -> np.ndarray:
    """Sorted spectrum of the rectangle operator with Dirichlet conditions on the nodal lines."""
    if factors.problem is None:
        raise GapError("factors carry no problem; the Dirichlet-on-Gamma spectrum is unavailable")
    p = factors.problem
    nx, ny = factors.grid_count
    xz, yz = star_partitions(factors, star)
    count = count or factors.truncation
    lx = od.linfty_spectrum(p.x_problem(xz), count, nx).values
    ly = od.linfty_spectrum(p.y_problem(yz), count, ny).values
    return np.sort((lx[:, None] + ly[None, :]).ravel())


def epsilon_default(factors: SpectralFactors, star: ModeIndex) -> float:
    """A quarter of the smaller of the two gaps above lambda*."""
    lam = lambda_mn(factors, star)
    nod = nodal_count(star)
    linf = linfty_values(factors, star)
    g_inf = float(linf[nod]) - lam
    vals = _all_values(factors).ravel()
    above = vals[vals > lam + _tol(lam)]
    above = above[above < factors.reliable_below]
    if not above.size:
        raise TruncationError("no eigenvalue above lambda* inside the truncation",
                              needed=2 * factors.truncation)
    g_next = float(above.min()) - lam
    eps = min(g_inf, g_next) / 4.0
    if not eps > 0:
        raise GapError(f"nonpositive gap above lambda*: g_inf={g_inf:.3e}, g_next={g_next:.3e}")
    spread = float(linf[nod - 1]) - lam
    if spread >= eps:
        raise GapError(
            f"Dirichlet-on-Gamma ground level spreads {spread:.3e} above lambda*, "
            f"exceeding epsilon {eps:.3e}; refine the grid")
    return eps


def _factor_flows(factors: SpectralFactors, star: ModeIndex, modes, sigma_samples):
    p = factors.problem
    nx, ny = factors.grid_count
    xz, yz = star_partitions(factors, star)
    xp, yp = p.x_problem(xz), p.y_problem(yz)
    ms = sorted({q.m for q in modes})
    ns = sorted({q.n for q in modes})
    jobs = [("x", m, xp, nx) for m in ms] + [("y", n, yp, ny) for n in ns]
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        done = pool.map(lambda j: od.branch_flow(j[2], j[1], sigma_samples, j[3]), jobs)
        return {(j[0], j[1]): c for j, c in zip(jobs, done)}


def flow_curves(problem: RectProblem, factors: SpectralFactors, star: ModeIndex,
                sigma_samples=None, window: float | None = None) -> dict:
    """One flow curve per mode with lambda_mn(0) <= window, keyed by ModeIndex, ascending."""
    if factors.problem is None:
        factors.problem = problem
    s = sigma_grid() if sigma_samples is None else np.asarray(sigma_samples, dtype=float)
    lam = lambda_mn(factors, star)
    if window is None:
        vals = _all_values(factors).ravel()
        above = vals[vals > lam + _tol(lam)]
        window = float(above.min()) if above.size else lam
    if window >= factors.reliable_below:
        raise TruncationError(f"window {window:.6g} beyond truncation", needed=2 * factors.truncation)
    modes = sorted((p for p in factors.modes() if lambda_mn(factors, p) <= window + _tol(window)),
                   key=lambda p: (lambda_mn(factors, p), p))
    flows = _factor_flows(factors, star, modes, s)
    return {p: flows[("x", p.m)] + flows[("y", p.n)] for p in modes}


def crossing_sigma(curve: od.FlowCurve, level: float) -> float | None:
    """Coupling where the curve reaches ``level``, by bisection in arctan(sigma)."""
    start, limit = curve.start, curve.limit
    if not (start <= level < limit):
        return None
    if curve.evaluator is None:
        raise ValueError("crossing search needs a curve evaluator")

    def g(t):
        sigma = INFINITY if t >= math.pi / 2 else math.tan(t)
        return curve.at(sigma) - level

    if g(0.0) >= 0.0:
        return 0.0
    t0 = bisect(g, 0.0, math.pi / 2, xtol=TOL.tol_root, maxiter=200)
    return math.tan(t0)


def verify_theorem(problem: RectProblem, star: ModeIndex, sigma_max: float = 1e3,
                   grid_count=DEFAULT_GRID, epsilon: float | None = None,
                   factors: SpectralFactors | None = None) -> TheoremReport:
    """Compare the lattice predicate with numerically found crossings of lambda* + epsilon."""
    f = factors if factors is not None else auto_factors(problem, star, grid_count)
    lam = lambda_mn(f, star)
    eps = epsilon if epsilon is not None else epsilon_default(f, star)
    level = lam + eps
    curves = flow_curves(problem, f, star, sigma_grid(sigma_max, 9), window=lam + 2 * eps)
    report = TheoremReport(star, lam, eps)
    for mode, curve in curves.items():
        s0 = crossing_sigma(curve, level)
        report.entries.append(TheoremEntry(
            mode, lambda_mn(f, mode), contributes(f, mode, star), s0,
            beyond_sigma_max=s0 is not None and s0 > sigma_max))
    return report


def analyze(problem: RectProblem, star: ModeIndex, grid_count=DEFAULT_GRID,
            epsilon: float | None = None, sigma_samples=None, factors=None):
    """Full deficiency report plus the flow curves behind it."""
    f = factors if factors is not None else auto_factors(problem, star, grid_count)
    lam = lambda_mn(f, star)
    k, mult = kstar(f, star)
    delta = deficiency(f, star)
    eps = epsilon if epsilon is not None else epsilon_default(f, star)
    curves = flow_curves(problem, f, star, sigma_samples)
    crossings = []
    for mode, curve in curves.items():
        s0 = crossing_sigma(curve, lam + eps)
        if s0 is not None:
            crossings.append((mode, s0))
    report = DeficiencyReport(
        lambda_star=lam, kstar=k, multiplicity=mult, nodal_count=nodal_count(star),
        deficiency=delta, morse_index=morse_index_lattice(f, star),
        contributing_points=contributing_points(f, star), crossings=crossings, epsilon=eps)
    return report, curves

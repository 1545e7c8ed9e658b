"""Direct 2D check of the deficiency formulas on a finite-difference grid.

The interface Schur complement of the shifted 5-point operator plays the role
of the two-sided Dirichlet-to-Neumann sum on the nodal set; only its inertia
is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import LinearOperator, eigsh, splu

from . import oned_flow as od
from . import rect_flow as rf
from .config import INFINITY, MIN_GRID, TOL
from .errors import AmbiguousCountError, DecompositionError, ShiftCollisionError


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    hx: float
    hy: float

    def __post_init__(self):
        if self.nx < MIN_GRID or self.ny < MIN_GRID:
            raise ValueError(f"grid {self.nx}x{self.ny} below minimum {MIN_GRID}")

    @classmethod
    def on(cls, problem: rf.RectProblem, nx: int, ny: int | None = None) -> "Grid2D":
        ny = nx if ny is None else ny
        return cls(nx, ny, problem.x_length / (nx + 1), problem.y_length / (ny + 1))

    @classmethod
    def aligned(cls, problem: rf.RectProblem, star: rf.ModeIndex, nx: int, ny: int | None = None) -> "Grid2D":
        """Smallest grid at least ``nx x ny`` whose lines carry the nodal lines exactly.

        Only potential-free factors have equidistributed zeros; other factors
        keep the requested count and are snapped.
        """
        ny = nx if ny is None else ny
        if problem.x_problem() == problem.y_problem() and nx == ny:
            # Identical factors on one spacing keep lambda_mn = lambda_nm exactly.
            parts = math.lcm(star.m, star.n) if not any(problem.q_samples) else 1
            nx = ny = _round_up(nx, parts)
            return cls.on(problem, nx, ny)
        if not any(problem.q_samples):
            nx = _round_up(nx, star.m)
        if not any(problem.r_samples):
            ny = _round_up(ny, star.n)
        return cls.on(problem, nx, ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def index(self, ix, iy):
        return iy * self.nx + ix


def _round_up(n: int, parts: int) -> int:
    # (n + 1) intervals divisible by parts puts j*L/parts on nodes.
    while (n + 1) % parts:
        n += 1
    return n


@dataclass
class NodalGrid:
    interface_nodes: np.ndarray
    cell_sign: dict  # (x piece, y piece) -> +1 / -1
    x_lines: tuple
    y_lines: tuple
    h_eff: np.ndarray  # per interface node
    lambda_star: float
    component_count: int
    free_nodes: np.ndarray | None = None
    snap_errors: tuple = ()


@dataclass
class SchurSystem:
    interface_matrix: np.ndarray
    shift: float
    grid: Grid2D
    asymmetry: float = 0.0


@dataclass
class MorseReport:
    negative_count: int
    near_zero_count: int
    eigenvalues: np.ndarray
    tolerance: float = 0.0

    @property
    def ambiguous(self) -> bool:
        return self.near_zero_count > 0


def _snap_lines(zeros, h, n):
    idx = [min(max(int(round(z / h)) - 1, 0), n - 1) for z in zeros]
    err = [abs((j + 1) * h - z) for j, z in zip(idx, zeros)]
    if len(set(idx)) != len(idx):
        raise DecompositionError("two nodal lines collapse onto one grid line; refine the grid")
    return tuple(idx), tuple(err)


def nodal_decomposition(factors: rf.SpectralFactors, star: rf.ModeIndex, grid: Grid2D) -> NodalGrid:
    """Interface nodes on the snapped nodal lines and the sign of each nodal cell."""
    if tuple(factors.grid_count) != (grid.nx, grid.ny):
        raise ValueError(f"factors computed on {factors.grid_count}, grid is {(grid.nx, grid.ny)}")
    xz, yz = rf.star_partitions(factors, star)
    xl, ex = _snap_lines(xz, grid.hx, grid.nx)
    yl, ey = _snap_lines(yz, grid.hy, grid.ny)

    on_x = np.zeros(grid.nx, dtype=bool)
    on_x[list(xl)] = True
    on_y = np.zeros(grid.ny, dtype=bool)
    on_y[list(yl)] = True
    gamma = on_x[None, :] | on_y[:, None]  # shape (ny, nx)
    iface = np.flatnonzero(gamma.ravel())

    hv = np.where(on_x[None, :] & on_y[:, None], 2.0 / (1.0 / grid.hx + 1.0 / grid.hy),
                  np.where(on_x[None, :], grid.hx, grid.hy))
    h_eff = hv.ravel()[iface]

    free = np.flatnonzero(~gamma.ravel())
    ncomp, labels = csgraph.connected_components(_adjacency(grid)[free][:, free], directed=False)
    if ncomp != rf.nodal_count(star):
        raise DecompositionError(f"{ncomp} nodal cells, expected {rf.nodal_count(star)}; refine the grid")

    phi = np.outer(factors.y_vectors[star.n - 1], factors.x_vectors[star.m - 1]).ravel()
    xpiece = np.searchsorted(np.asarray(xl), np.arange(grid.nx))
    ypiece = np.searchsorted(np.asarray(yl), np.arange(grid.ny))
    cell_of = np.stack(np.meshgrid(xpiece, ypiece), axis=-1).reshape(-1, 2)
    signs = {}
    for c in range(ncomp):
        members = free[labels == c]
        key = tuple(int(v) for v in cell_of[members[0]])
        signs[key] = 1 if phi[members].sum() > 0 else -1
    base = signs[(0, 0)]
    for (i, j), s in signs.items():
        if s != base * (-1) ** (i + j):
            raise DecompositionError("nodal cell signs do not form a checkerboard")

    lam = rf.lambda_mn(factors, star)
    return NodalGrid(iface, signs, xl, yl, h_eff, lam, ncomp, free, ex + ey)


def _adjacency(grid: Grid2D):
    ax = sparse.diags([1.0, 1.0], [-1, 1], shape=(grid.nx, grid.nx))
    ay = sparse.diags([1.0, 1.0], [-1, 1], shape=(grid.ny, grid.ny))
    return (sparse.kron(sparse.identity(grid.ny), ax) + sparse.kron(ay, sparse.identity(grid.nx))).tocsr()


def _laplacian_1d(n, h):
    return sparse.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]) / h**2


def assemble_shifted(grid: Grid2D, problem: rf.RectProblem, shift: float, sigma: float,
                     nodal: NodalGrid | None = None):
    """5-point ``-Delta + V - shift`` with the delta coupling on the interface.

    For ``sigma = INFINITY`` the interface unknowns are eliminated (Dirichlet
    on the nodal set) and the returned matrix acts on ``nodal.free_nodes``.
    """
    x = grid.hx * np.arange(1, grid.nx + 1)
    y = grid.hy * np.arange(1, grid.ny + 1)
    v = (problem.y_problem().potential_at(y)[:, None] + problem.x_problem().potential_at(x)[None, :]).ravel()
    a = (sparse.kron(sparse.identity(grid.ny), _laplacian_1d(grid.nx, grid.hx))
         + sparse.kron(_laplacian_1d(grid.ny, grid.hy), sparse.identity(grid.nx)))
    diag = v - shift
    if nodal is not None and sigma != INFINITY and sigma != 0.0:
        diag = diag.copy()
        diag[nodal.interface_nodes] += sigma / nodal.h_eff
    a = (a + sparse.diags(diag)).tocsr()
    if sigma == INFINITY:
        if nodal is None:
            raise ValueError("sigma = INFINITY needs the nodal decomposition")
        free = nodal.free_nodes
        a = a[free][:, free]
    return a.tocsc()


def _nearest_to_zero(a) -> float:
    lu = splu(a.tocsc())
    op = LinearOperator(a.shape, matvec=lu.solve, dtype=float)
    w = eigsh(a, k=1, sigma=0.0, OPinv=op, which="LM", return_eigenvectors=False)
    return float(w[0]), lu


def schur_dtn(grid: Grid2D, problem: rf.RectProblem, star: rf.ModeIndex, epsilon: float,
              nodal: NodalGrid) -> SchurSystem:
    """Interface Schur complement of ``-Delta + V - (lambda* + epsilon)``."""
    shift = nodal.lambda_star + epsilon
    a = assemble_shifted(grid, problem, shift, 0.0, nodal)
    g, free = nodal.interface_nodes, nodal.free_nodes
    a_ii = a[free][:, free].tocsc()
    scale = 4.0 / min(grid.hx, grid.hy) ** 2
    try:
        mu, lu = _nearest_to_zero(a_ii)
    except RuntimeError as exc:
        raise ShiftCollisionError(f"shift {shift} is an interface-Dirichlet eigenvalue") from exc
    if abs(mu) <= 1e-10 * scale:
        raise ShiftCollisionError(f"shift {shift} lies within {abs(mu):.2e} of an interface-Dirichlet eigenvalue")
    a_ig = a[free][:, g].toarray()
    s = a[g][:, g].toarray() - a[g][:, free] @ lu.solve(a_ig)
    norm = max(np.abs(s).max(), 1.0)
    asym = float(np.abs(s - s.T).max() / norm)
    if asym > TOL.tol_symmetry:
        raise ValueError(f"interface matrix asymmetric to {asym:.2e}")
    s = 0.5 * (s + s.T)
    return SchurSystem(s, shift, grid, asym)


def morse_index(system) -> MorseReport:
    """Negative eigenvalue count of the (symmetric) interface matrix."""
    mat = system.interface_matrix if isinstance(system, SchurSystem) else np.asarray(system, dtype=float)
    w = np.linalg.eigvalsh(mat)
    tol = TOL.tol_inertia * max(float(np.abs(w).max(initial=0.0)), np.finfo(float).tiny)
    return MorseReport(int(np.sum(w < -tol)), int(np.sum(np.abs(w) <= tol)), w, tol)


def count_below(a, level: float, floor: float) -> int:
    """Number of eigenvalues <= level of the sparse symmetric ``a`` (all eigenvalues > floor)."""
    n = a.shape[0]
    lu = splu((a - floor * sparse.identity(n, format="csc")).tocsc())
    op = LinearOperator(a.shape, matvec=lu.solve, dtype=float)
    k = 8
    while True:
        k = min(k, n - 1)
        w = np.sort(eigsh(a, k=k, sigma=floor, OPinv=op, which="LM", return_eigenvectors=False))
        scale = max(abs(level), 1.0)
        if np.any(np.abs(w - level) <= 1e-9 * scale):
            raise AmbiguousCountError(f"eigenvalue within tolerance of level {level}; re-pick epsilon")
        if w[-1] > level or k == n - 1:
            return int(np.sum(w <= level))
        k *= 2


def _floor(problem: rf.RectProblem) -> float:
    return min(problem.q_samples, default=0.0) + min(problem.r_samples, default=0.0) - 1.0


def counting_crossings(grid: Grid2D, problem: rf.RectProblem, star: rf.ModeIndex, epsilon: float,
                       nodal: NodalGrid) -> int:
    """Eigenvalues below ``lambda* + epsilon`` lost between sigma = 0 and sigma = INFINITY."""
    level = nodal.lambda_star + epsilon
    floor = _floor(problem)
    n0 = count_below(assemble_shifted(grid, problem, 0.0, 0.0, nodal), level, floor)
    ninf = count_below(assemble_shifted(grid, problem, 0.0, INFINITY, nodal), level, floor)
    return n0 - ninf


def count_at_sigma(grid, problem, nodal, sigma: float, level: float) -> int:
    return count_below(assemble_shifted(grid, problem, 0.0, sigma, nodal), level, _floor(problem))


@dataclass
class GridResult:
    nx: int
    ny: int
    epsilon: float
    schur_morse: int
    crossing_count: int
    lattice_morse: int
    deficiency: int
    multiplicity: int
    near_zero: int
    snap_error: float
    warnings: list = field(default_factory=list)

    @property
    def agree(self) -> bool:
        return (self.schur_morse == self.crossing_count == self.lattice_morse
                == self.deficiency + self.multiplicity - 1) and self.near_zero == 0

    def to_dict(self) -> dict:
        return {
            "nx": self.nx, "ny": self.ny, "epsilon": self.epsilon,
            "schur_morse": self.schur_morse, "crossing_count": self.crossing_count,
            "lattice_morse": self.lattice_morse, "deficiency": self.deficiency,
            "multiplicity": self.multiplicity, "near_zero": self.near_zero,
            "snap_error": self.snap_error, "agree": self.agree, "warnings": list(self.warnings),
        }


@dataclass
class FormulaReport:
    star: rf.ModeIndex
    results: list

    @property
    def finest(self) -> GridResult:
        return max(self.results, key=lambda r: r.nx * r.ny)

    @property
    def ok(self) -> bool:
        return self.finest.agree

    def to_dict(self) -> dict:
        return {"star": self.star.as_list(), "grids": [r.to_dict() for r in self.results],
                "finest_agree": self.ok}


def run_grid(problem: rf.RectProblem, star: rf.ModeIndex, grid: Grid2D,
             epsilon: float | None = None) -> GridResult:
    factors = rf.auto_factors(problem, star, (grid.nx, grid.ny))
    nodal = nodal_decomposition(factors, star, grid)
    warnings = []
    default = rf.epsilon_default(factors, star)
    eps = default if epsilon is None else float(epsilon)
    if not 0 < eps <= 2 * default:
        warnings.append(f"epsilon {eps:.4g} outside (0, {2 * default:.4g}]; counts may depend on it")
    morse = morse_index(schur_dtn(grid, problem, star, eps, nodal))
    k, mult = rf.kstar(factors, star)
    return GridResult(
        grid.nx, grid.ny, eps, morse.negative_count,
        counting_crossings(grid, problem, star, eps, nodal),
        rf.morse_index_lattice(factors, star), rf.deficiency(factors, star), mult,
        morse.near_zero_count, max(nodal.snap_errors, default=0.0), warnings)


def verify_formula(problem: rf.RectProblem, star: rf.ModeIndex, grids: list,
                   epsilon: float | None = None) -> FormulaReport:
    """Schur Morse index, crossing count and lattice Morse index on each grid."""
    if len(grids) < 2:
        raise ValueError("need at least two grid resolutions")
    return FormulaReport(star, [run_grid(problem, star, g, epsilon) for g in grids])

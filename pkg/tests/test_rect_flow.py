import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nodalflow import oned_flow as od
from nodalflow import rect_flow as rf
from nodalflow.config import sigma_grid
from nodalflow.errors import TruncationError

PI = math.pi
M = rf.ModeIndex

SQUARE = rf.RectProblem(1.0)
THIN = rf.RectProblem(0.9, alpha_axis="y")


@pytest.fixture(scope="module")
def square():
    return rf.auto_factors(SQUARE, M(1, 3))


@pytest.fixture(scope="module")
def thin():
    return rf.auto_factors(THIN, M(1, 3))


def exact_factors(ax2, size=12):
    """Closed-form Laplacian factors on [0, sqrt(ax2) pi] x [0, pi]."""
    m = np.arange(1, size + 1, dtype=float)
    return rf.SpectralFactors.from_values(m**2 / ax2, m**2)


def brute_lattice(ax2, star, size=40):
    """Exact rational enumeration: (kstar, multiplicity, deficiency, morse)."""
    ax2 = Fraction(ax2)

    def lam(m, n):
        return Fraction(m * m) / ax2 + n * n

    ls = lam(*star)
    below = [(m, n) for m in range(1, size) for n in range(1, size) if lam(m, n) < ls]
    ties = [(m, n) for m in range(1, size) for n in range(1, size) if lam(m, n) == ls]
    outside = lambda p: p[0] > star[0] or p[1] > star[1]
    return (len(below) + 1, len(ties), sum(map(outside, below)),
            sum(map(outside, below + ties)))


# ------------------------------------------------------------- factor spectra

def test_factor_spectra_square():
    f = rf.factor_spectra(SQUARE, 4)
    np.testing.assert_allclose(f.x_values, [1, 4, 9, 16], rtol=1e-4)
    np.testing.assert_allclose(f.y_values, [1, 4, 9, 16], rtol=1e-4)


def test_factor_spectra_thin_orientation():
    f = rf.factor_spectra(THIN, 3)
    np.testing.assert_allclose(f.x_values, [1, 4, 9], rtol=1e-4)
    np.testing.assert_allclose(f.y_values, np.array([1, 4, 9]) / 0.81, rtol=1e-4)


def test_factor_spectra_weyl_bound():
    xs = np.linspace(0, PI, 2001)
    prob = rf.RectProblem(1.0, q_samples=3 * np.cos(xs))
    f = rf.factor_spectra(prob, 8)
    assert np.all(np.diff(f.x_values) > 0)
    m = np.arange(1, 9)
    assert np.all(f.x_values >= m**2 - 3 - 1e-9)
    assert np.all(f.x_values <= m**2 + 3 + 1e-9)


def test_factor_spectra_truncation_error():
    with pytest.raises(TruncationError) as e:
        rf.factor_spectra(SQUARE, 3, window=30.0)
    assert e.value.needed >= 6


# ------------------------------------------------------------ lattice counts

def test_lambda_mn(square, thin):
    assert rf.lambda_mn(square, M(2, 2)) == pytest.approx(8, rel=1e-4)
    assert rf.lambda_mn(square, M(1, 3)) == pytest.approx(10, rel=1e-4)
    assert rf.lambda_mn(thin, M(1, 3)) == pytest.approx(1 + 9 / 0.81, rel=1e-4)
    with pytest.raises(ValueError):
        rf.lambda_mn(square, M(100, 1))


def test_kstar(square, thin):
    assert rf.kstar(square, M(1, 3)) == (5, 2)
    assert rf.kstar(thin, M(1, 3)) == (6, 1)
    assert rf.kstar(square, M(1, 1)) == (1, 1)


def test_kstar_truncation_boundary():
    f = rf.SpectralFactors.from_values([1, 4, 9], [1, 4, 9])
    with pytest.raises(TruncationError):
        rf.kstar(f, M(3, 3))


def test_nodal_count():
    assert rf.nodal_count(M(1, 3)) == 3
    assert rf.nodal_count(M(1, 1)) == 1
    assert rf.nodal_count(M(5, 3)) == 15


def test_contributes(square, thin):
    assert rf.contributes(thin, M(2, 1), M(1, 3))
    assert not rf.contributes(thin, M(1, 2), M(1, 3))
    assert rf.contributes(square, M(3, 1), M(1, 3))


def test_deficiency_and_morse(square, thin):
    assert rf.deficiency(thin, M(1, 3)) == 3
    assert rf.deficiency(square, M(2, 2)) == 0
    assert rf.deficiency(square, M(1, 3)) == 2
    assert rf.morse_index_lattice(square, M(1, 3)) == 3
    assert rf.contributing_points(square, M(1, 3)) == [M(2, 1), M(2, 2), M(3, 1)]
    assert rf.morse_index_lattice(thin, M(1, 3)) == 3


def test_wide_rectangle_deficiency_four():
    # Aspect ratio chosen so the ellipse through (5,3) encloses the four outside points.
    f = rf.auto_factors(rf.RectProblem(1.38), M(5, 3))
    assert rf.deficiency(f, M(5, 3)) == 4
    assert rf.morse_index_lattice(f, M(5, 3)) == 4
    assert brute_lattice(Fraction(138, 100) ** 2, (5, 3))[2:] == (4, 4)


def test_on_ellipse_tie_lattice():
    # alpha^2 = 2.2 puts (6,2) exactly on the ellipse through (5,3).
    f = exact_factors(2.2, 14)
    k, mult = rf.kstar(f, M(5, 3))
    assert mult == 2
    assert rf.deficiency(f, M(5, 3)) == 4
    assert rf.morse_index_lattice(f, M(5, 3)) == 5
    assert M(6, 2) in rf.contributing_points(f, M(5, 3))
    assert brute_lattice(Fraction(22, 10), (5, 3)) == (k, mult, 4, 5)


@settings(max_examples=60, deadline=None)
@given(p=st.integers(1, 30), q=st.integers(1, 30), m=st.integers(1, 5), n=st.integers(1, 5))
def test_lattice_against_brute_force(p, q, m, n):
    ax2 = Fraction(p, q) if p <= 4 * q else Fraction(4)
    if ax2 < Fraction(1, 4):
        ax2 = Fraction(1, 4)
    f = exact_factors(float(ax2), 60)
    k, mult = rf.kstar(f, M(m, n))
    expected = brute_lattice(ax2, (m, n), 60)
    assert (k, mult) == expected[:2]
    assert rf.deficiency(f, M(m, n)) == expected[2]
    assert rf.morse_index_lattice(f, M(m, n)) == expected[3]
    assert rf.morse_index_lattice(f, M(m, n)) == rf.deficiency(f, M(m, n)) + mult - 1


# ------------------------------------------------------------------ epsilon

def test_epsilon_default_square_12():
    f = rf.auto_factors(SQUARE, M(1, 2))
    assert rf.epsilon_default(f, M(1, 2)) == pytest.approx(0.75, rel=1e-3)


def test_linfty_values_thin(thin):
    vals = rf.linfty_values(thin, M(1, 3))
    lam = rf.lambda_mn(thin, M(1, 3))
    np.testing.assert_allclose(vals[:3], lam, rtol=1e-6)
    assert vals[3] > lam + 1


# -------------------------------------------------------------- flow curves

def test_flow_curves_thin(thin):
    curves = rf.flow_curves(THIN, thin, M(1, 3))
    modes = list(curves)
    assert modes[:6] == [M(1, 1), M(2, 1), M(1, 2), M(2, 2), M(3, 1), M(1, 3)]
    assert modes[6:] == [M(3, 2)]  # first level above lambda*
    lam = rf.lambda_mn(thin, M(1, 3))
    assert curves[M(1, 3)].is_constant()
    assert curves[M(1, 3)].start == pytest.approx(lam, rel=1e-10)
    # gamma_5 = 9 + first y-branch flow with two nodal points on [0, 0.9 pi]
    xz, yz = rf.star_partitions(thin, M(1, 3))
    y1 = od.branch_flow(THIN.y_problem(yz), 1)
    np.testing.assert_allclose(curves[M(3, 1)].values, thin.x_values[2] + y1.values, rtol=1e-12)
    for c in curves.values():
        assert np.all(np.diff(c.values) >= -1e-8 * abs(c.limit))


def test_flow_curve_one_one_square():
    f = rf.auto_factors(SQUARE, M(1, 2))
    curves = rf.flow_curves(SQUARE, f, M(1, 2))
    c = curves[M(1, 1)]
    assert c.start == pytest.approx(2, rel=1e-4)
    assert c.limit == pytest.approx(5, rel=1e-4)
    assert rf.crossing_sigma(c, 5 + 0.75) is None
    model = od.SecularModel(PI, 1)
    for s, v in zip(c.sigma_samples[::20], c.values[::20]):
        assert v == pytest.approx(f.x_values[0] + od.secular_branch_lambda(model, 1, s), rel=1e-4)


def test_star_curve_constant_any_problem():
    xs = np.linspace(0, 1.2 * PI, 2001)
    prob = rf.RectProblem(1.2, q_samples=np.sin(xs), r_samples=np.linspace(0, 2, 50))
    f = rf.auto_factors(prob, M(2, 2))
    curves = rf.flow_curves(prob, f, M(2, 2))
    c = curves[M(2, 2)]
    lam = rf.lambda_mn(f, M(2, 2))
    h = 1.2 * PI / 600
    assert c.start == pytest.approx(lam, rel=1e-12)
    # Off-grid zeros are snapped by <= h/2, so constancy holds to O(h) only.
    assert c.limit - c.start <= 4 * lam * h
    assert rf.crossing_sigma(c, lam + rf.epsilon_default(f, M(2, 2))) is None


# ---------------------------------------------------------------- crossings

def test_crossing_sigma_thin(thin):
    curves = rf.flow_curves(THIN, thin, M(1, 3))
    level = rf.lambda_mn(thin, M(1, 3)) + rf.epsilon_default(thin, M(1, 3))
    s0 = rf.crossing_sigma(curves[M(2, 1)], level)
    assert s0 is not None and 0 < s0 < math.inf
    assert curves[M(2, 1)].at(s0) == pytest.approx(level, abs=1e-8)
    assert rf.crossing_sigma(curves[M(1, 3)], level) is None


def test_crossing_sigma_secular_curve():
    model = od.SecularModel(PI, 1)
    ev = lambda s: 4.0 if math.isinf(s) else od.secular_branch_lambda(model, 1, s)
    s = sigma_grid(1e3, 11)
    curve = od.FlowCurve(s, np.array([ev(v) for v in s]), 4.0, 1, ev)
    assert rf.crossing_sigma(curve, 2.25) == pytest.approx(3.0, rel=1e-8)


def test_crossing_sigma_requires_evaluator():
    curve = od.FlowCurve(np.array([0.0, 1.0]), np.array([1.0, 2.0]), 4.0, 1, None)
    with pytest.raises(ValueError):
        rf.crossing_sigma(curve, 3.0)


# ------------------------------------------------------------ verify_theorem

def test_verify_theorem_thin(thin):
    rep = rf.verify_theorem(THIN, M(1, 3), factors=thin)
    assert rep.ok
    assert rep.contributing() == [M(2, 1), M(2, 2), M(3, 1)]
    assert rep.crossing_modes() == [M(2, 1), M(2, 2), M(3, 1)]


def test_verify_theorem_square_22():
    rep = rf.verify_theorem(SQUARE, M(2, 2))
    assert rep.ok and rep.contributing() == [] and rep.crossing_modes() == []


def test_verify_theorem_square_13(square):
    rep = rf.verify_theorem(SQUARE, M(1, 3), factors=square)
    assert rep.ok
    assert sorted(rep.crossing_modes()) == [M(2, 1), M(2, 2), M(3, 1)]


# ------------------------------------------------------------------ reports

def test_analyze_thin(thin):
    rep, _ = rf.analyze(THIN, M(1, 3), factors=thin)
    assert (rep.kstar, rep.multiplicity, rep.nodal_count, rep.deficiency, rep.morse_index) == (6, 1, 3, 3, 3)
    assert [p for p, _ in rep.crossings] == [M(2, 1), M(2, 2), M(3, 1)]
    assert rep.consistency_errors() == []
    again = rf.DeficiencyReport.from_dict(rep.to_dict())
    assert again == rep


@settings(max_examples=8, deadline=None)
@given(alpha=st.floats(0.6, 1.6), m=st.integers(1, 3), n=st.integers(1, 3))
def test_report_consistency_property(alpha, m, n):
    f = exact_factors(alpha**2, 30)
    star = M(m, n)
    k, mult = rf.kstar(f, star)
    d = rf.deficiency(f, star)
    rep = rf.DeficiencyReport(
        rf.lambda_mn(f, star), k, mult, rf.nodal_count(star), d,
        rf.morse_index_lattice(f, star), rf.contributing_points(f, star), [], 0.1)
    assert rep.consistency_errors() == []
    assert d >= 0

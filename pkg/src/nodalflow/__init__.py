"""Spectral flow of delta-coupled Schrodinger operators and nodal deficiency."""

from .config import INFINITY, TOL
from .oned_flow import (
    FlowCurve,
    Problem1D,
    SecularModel,
    branch_flow,
    build_operator,
    derivative_identity_check,
    eigens_1d,
    linfty_spectrum,
    nodal_zeros,
    secular_branch_lambda,
    secular_sigma,
    sturm_verify,
)
from .rect_flow import DeficiencyReport, ModeIndex, RectProblem, SpectralFactors, analyze

__version__ = "0.1.0"

"""Numerical laboratory for non-local elliptic operators of fractional order.

Submodules
----------
kernels     admissible kernels, ellipticity checks, sector geometry
discretize  grids, grid functions, cutoffs, operator assembly
solve       resolvent solves, semigroups, mild solutions, operator norms
estimates   energy, tail, reverse Holder and resolvent verifiers
czkit       dyadic decompositions, maximal functions, good-lambda checks
cli         configuration-driven experiment runner
"""
from .czkit import DyadicCube, cz_decompose, distribution_set, good_lambda_check, maximal
from .discretize import DiscreteOperator, Grid, GridFunction, assemble, make_cutoff, seminorm
from .errors import *  # noqa: F401,F403
from .estimates import (
    Ball,
    admissible_p_range,
    caccioppoli_sweep,
    caccioppoli_verify,
    resolvent_lp_sweep,
    square_function_ratio,
    tail_bound_check,
    wrh_check,
)
from .kernels import (
    KernelSpec,
    SectorParams,
    make_kernel,
    normalization_constant,
    sector_angle,
    sector_sum_constant,
    validate_ellipticity,
)
from .solve import (
    MildSolutionQuery,
    ResolventQuery,
    apply_fast,
    mild_solution,
    resolve,
    semigroup_apply,
)

__version__ = "0.1.0"

"""Non-local kernels, the ellipticity window and sector geometry.

A kernel ``K(x, y)`` of order ``2*alpha`` on ``R^d`` is admissible with
ellipticity constant ``lam`` when, for almost every ``x != y``,

    lam * |x-y|^(-d-2alpha) <= Re K(x, y) <= |K(x, y)| <= |x-y|^(-d-2alpha) / lam.

All evaluators in this module follow one array convention: points are
arrays whose trailing axis has length ``d`` and kernels broadcast over the
leading axes, returning complex arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize, special
from scipy.stats import qmc

from .errors import DomainError, InfeasibleSectorError, KernelEvaluationError

__all__ = [
    "KernelSpec",
    "SectorParams",
    "EllipticityVerdict",
    "normalization_constant",
    "sector_angle",
    "sector_sum_constant",
    "sector_params",
    "validate_ellipticity",
    "fractional_kernel",
    "power_kernel",
    "translation_invariant_kernel",
    "general_kernel",
    "phase_perturbed_kernel",
    "checkerboard_kernel",
    "adjoint_kernel",
    "make_kernel",
    "KERNEL_CATALOG",
]

FORMS = ("fractional", "translation_invariant", "general")


def _distance(z):
    return np.sqrt(np.sum(np.abs(z) ** 2, axis=-1))


@dataclass(frozen=True)
class KernelSpec:
    """An admissible non-local kernel.

    Parameters
    ----------
    dimension : int
        Space dimension ``d`` (1 or 2 are supported by the discretisation).
    order : float
        ``alpha`` in ``(0, 1)``; the operator has order ``2*alpha``.
    lam : float
        Ellipticity constant in ``(0, 1)``.
    form : {'fractional', 'translation_invariant', 'general'}
    profile : callable, optional
        ``k(z)`` with ``K(x, y) = k(x - y)``; required for the first two forms.
    evaluator : callable, optional
        ``K(x, y)``; required for ``form='general'``.
    symmetric : bool
        ``K(x, y) == K(y, x)`` and ``K`` real.
    far_field : complex, optional
        Coefficient ``c`` with ``K(x, y) ~ c |x-y|^(-d-2alpha)`` at large
        separation.  Used for exterior and lattice remainders; ``None`` falls
        back to the ellipticity envelope.
    name : str
    homogeneous : bool
        ``K(x, y) = far_field * |x-y|^(-d-2alpha)`` exactly, which enables
        closed-form radial integrals.
    """

    dimension: int
    order: float
    lam: float
    form: str
    profile: Optional[Callable] = field(default=None, compare=False)
    evaluator: Optional[Callable] = field(default=None, compare=False)
    symmetric: bool = False
    far_field: Optional[complex] = None
    name: str = ""
    params: tuple = ()
    homogeneous: bool = False

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise DomainError(f"dimension must be 1 or 2, got {self.dimension}")
        if not 0.0 < self.order < 1.0:
            raise DomainError(f"order alpha must lie in (0, 1), got {self.order}")
        if not 0.0 < self.lam < 1.0:
            raise DomainError(f"ellipticity constant must lie in (0, 1), got {self.lam}")
        if self.form not in FORMS:
            raise DomainError(f"unknown kernel form {self.form!r}")
        if self.form == "general":
            if self.evaluator is None:
                raise DomainError("general kernels need an evaluator K(x, y)")
        elif self.profile is None:
            raise DomainError(f"{self.form} kernels need a profile k(z)")

    @property
    def exponent(self):
        """The singularity exponent ``d + 2*alpha``."""
        return self.dimension + 2.0 * self.order

    @property
    def translation_invariant(self):
        return self.form != "general"

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.translation_invariant:
            out = self.profile(x - y)
        else:
            out = self.evaluator(x, y)
        return np.asarray(out, dtype=complex)

    def describe(self):
        """Plain-data description used in reports and config hashes."""
        return {
            "name": self.name or self.form,
            "form": self.form,
            "dimension": self.dimension,
            "order": self.order,
            "lambda": self.lam,
            "symmetric": self.symmetric,
            "params": dict(self.params),
        }


# ---------------------------------------------------------------------------
# constants and sector geometry


def normalization_constant(d, alpha):
    """Constant ``C_{d,alpha}`` making the symbol of ``(-Delta)^alpha`` equal ``|xi|^{2 alpha}``."""
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return float(
        4.0**alpha * special.gamma(d / 2.0 + alpha)
        / (math.pi ** (d / 2.0) * abs(special.gamma(-alpha)))
    )


def sector_angle(lam):
    """Return ``Phi = pi - arccos(lam**2)``."""
    if not 0.0 < lam < 1.0:
        raise DomainError(f"lambda must lie in (0, 1), got {lam}")
    return math.pi - math.acos(lam * lam)


def _simplex_min_norm(vertices):
    """Minimise ``|sum c_k v_k|`` over the probability simplex.

    Returns a certified lower bound on the minimum (objective minus the
    Frank-Wolfe gap) and the minimiser.
    """
    v = np.asarray(vertices, dtype=complex)
    k = len(v)

    def f(c):
        return abs(np.dot(c, v))

    # coarse grid over the simplex
    steps = 400 if k == 2 else 120
    best_c, best = None, np.inf
    if k == 2:
        for t in np.linspace(0.0, 1.0, steps + 1):
            c = np.array([t, 1.0 - t])
            val = f(c)
            if val < best:
                best, best_c = val, c
    else:
        for i in range(steps + 1):
            for j in range(steps + 1 - i):
                c = np.array([i, j, steps - i - j], dtype=float) / steps
                val = f(c)
                if val < best:
                    best, best_c = val, c

    res = optimize.minimize(
        f,
        best_c,
        method="SLSQP",
        bounds=[(0.0, 1.0)] * k,
        constraints=[{"type": "eq", "fun": lambda c: np.sum(c) - 1.0}],
        options={"ftol": 1e-15, "maxiter": 500},
    )
    c = np.clip(res.x, 0.0, None)
    c = c / c.sum()
    if f(c) > best:
        c = best_c
    s = np.dot(c, v)
    val = abs(s)
    if val == 0.0:
        return 0.0, c
    grad = np.real(np.conj(s) * v) / val
    gap = float(np.dot(grad, c) - grad.min())
    return max(val - max(gap, 0.0), 0.0), c


def sector_sum_constant(theta, phi, summands=1):
    """Smallest ``C`` with ``|z| + sum|w_i| <= C |z + sum w_i|``.

    Here ``z`` ranges over the closed sector of half-angle ``theta`` and each
    ``w_i`` over the closed sector of half-angle ``pi - phi``.  By homogeneity
    only unit total mass on the boundary rays needs to be searched; the
    returned value is certified to be no smaller than the true constant.

    Raises
    ------
    InfeasibleSectorError
        If ``theta + (pi - phi) >= pi``.
    """
    psi = math.pi - phi
    if summands < 1:
        raise DomainError("summands must be >= 1")
    if theta < 0 or psi < 0:
        raise DomainError("sector half-angles must be non-negative")
    if theta + psi >= math.pi:
        raise InfeasibleSectorError(
            f"theta + (pi - phi) = {theta + psi:.6g} >= pi: no comparison constant exists"
        )
    z = complex(math.cos(theta), math.sin(theta))
    w_minus = complex(math.cos(psi), -math.sin(psi))
    if summands == 1:
        vertices = [z, w_minus]
    else:
        vertices = [z, w_minus, w_minus.conjugate()]
    lower, _ = _simplex_min_norm(vertices)
    if lower <= 0.0:
        raise InfeasibleSectorError("sector sum constant is not finite")
    return float(max(1.0, 1.0 / lower))


@dataclass(frozen=True)
class SectorParams:
    """Sector data attached to an ellipticity constant."""

    phi: float
    theta: float
    comparison_constant: float

    def contains(self, lam, closed=True):
        """Whether ``lam`` lies in the (closed) working sector ``S_theta``."""
        if lam == 0:
            return False
        a = abs(np.angle(lam))
        return a <= self.theta * (1 + 1e-12) if closed else a < self.theta


def sector_params(lam, theta=None, theta_fraction=0.9, summands=1):
    """Build :class:`SectorParams` for ellipticity constant ``lam``."""
    phi = sector_angle(lam)
    if theta is None:
        theta = theta_fraction * phi
    if not 0.0 < theta < phi:
        raise DomainError(f"theta must lie in (0, Phi={phi:.6g}), got {theta}")
    return SectorParams(phi, theta, sector_sum_constant(theta, phi, summands))


# ---------------------------------------------------------------------------
# ellipticity validation


@dataclass(frozen=True)
class EllipticityVerdict:
    passed: bool
    worst_margin: float
    lower_margin: float
    upper_margin: float
    worst_pair: tuple
    samples: int


def _sample_pairs(d, samples, seed, decades, scale):
    sampler = qmc.Halton(d=d + 2, scramble=True, seed=seed)
    pts = sampler.random(samples)
    x = scale * (2.0 * pts[:, :d] - 1.0)
    rho = 10.0 ** (-decades / 2.0 + decades * pts[:, d])
    if d == 1:
        direction = np.where(pts[:, d + 1] < 0.5, -1.0, 1.0)[:, None]
    else:
        ang = 2.0 * math.pi * pts[:, d + 1]
        direction = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    y = x + rho[:, None] * direction
    return x, y, rho


def validate_ellipticity(spec, samples=4096, seed=0, decades=4.0, scale=1.0, rtol=1e-12):
    """Spot-check the ellipticity window on quasi-random pairs.

    Pairs are drawn from a scrambled Halton sequence with separations
    spanning ``decades`` orders of magnitude.  A bound counts as satisfied
    up to a relative rounding slack ``rtol``.

    Returns
    -------
    EllipticityVerdict
    """
    if samples < 1:
        raise DomainError("samples must be >= 1")
    d = spec.dimension
    x, y, rho = _sample_pairs(d, samples, seed, decades, scale)
    vals = spec(x, y)
    bad = ~np.isfinite(vals)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise KernelEvaluationError(
            f"kernel value {vals[i]} is not finite at x={x[i].tolist()}, y={y[i].tolist()}"
        )
    scaled = vals * rho**spec.exponent
    lower = scaled.real - spec.lam
    upper = 1.0 / spec.lam - np.abs(scaled)
    margins = np.minimum(lower, upper)
    i = int(np.argmin(margins))
    tol = rtol * max(1.0, 1.0 / spec.lam)
    return EllipticityVerdict(
        passed=bool(margins.min() >= -tol),
        worst_margin=float(margins[i]),
        lower_margin=float(lower.min()),
        upper_margin=float(upper.min()),
        worst_pair=(x[i].tolist(), y[i].tolist()),
        samples=samples,
    )


# ---------------------------------------------------------------------------
# kernel factories


def _power_profile(exponent, coeff):
    def profile(z):
        return coeff * _distance(z) ** (-exponent)

    return profile


def fractional_kernel(dimension, order, lam=None):
    """The fractional Laplacian preset ``K = (C_{d,alpha}/2) |x-y|^(-d-2alpha)``.

    With the factor one half, the form's operator equals ``(-Delta)^alpha``.
    The default ``lam`` is the largest admissible value.
    """
    coeff = normalization_constant(dimension, order) / 2.0
    if lam is None:
        lam = min(coeff, 1.0 / coeff)
        if lam >= 1.0:
            lam = math.nextafter(1.0, 0.0)
    return KernelSpec(
        dimension, order, lam, "fractional",
        profile=_power_profile(dimension + 2.0 * order, coeff),
        symmetric=True, far_field=coeff, name="fractional", homogeneous=True,
    )


def power_kernel(dimension, order, lam=0.5):
    """The bare kernel ``|x-y|^(-d-2alpha)`` (coefficient one)."""
    return KernelSpec(
        dimension, order, lam, "translation_invariant",
        profile=_power_profile(dimension + 2.0 * order, 1.0),
        symmetric=True, far_field=1.0, name="power", homogeneous=True,
    )


def translation_invariant_kernel(dimension, order, lam, profile, symmetric=False,
                                 far_field=None, name="translation_invariant"):
    return KernelSpec(dimension, order, lam, "translation_invariant", profile=profile,
                      symmetric=symmetric, far_field=far_field, name=name)


def general_kernel(dimension, order, lam, evaluator, symmetric=False, far_field=None,
                   name="general"):
    return KernelSpec(dimension, order, lam, "general", evaluator=evaluator,
                      symmetric=symmetric, far_field=far_field, name=name)


def phase_perturbed_kernel(dimension, order, lam=0.8, phase_fraction=0.95, frequency=3.0):
    """Unit-modulus kernel with an oscillating, non-symmetric phase.

    ``K(x, y) = exp(i phi(x, y)) |x-y|^(-d-2alpha)`` where the phase amplitude
    is ``phase_fraction * arccos(lam)`` so that ``Re K >= lam`` throughout.
    """
    amp = phase_fraction * math.acos(lam)
    s = dimension + 2.0 * order

    def evaluator(x, y):
        arg = frequency * np.sum(x - 0.5 * y, axis=-1) + 0.3
        return np.exp(1j * amp * np.sin(arg)) * _distance(x - y) ** (-s)

    return KernelSpec(
        dimension, order, lam, "general", evaluator=evaluator, symmetric=False,
        name="phase-perturbed",
        params=(("phase_fraction", phase_fraction), ("frequency", frequency)),
    )


def checkerboard_kernel(dimension, order, lam=0.5, tile=0.25):
    """Real symmetric kernel whose coefficient jumps between ``lam`` and ``1/lam``.

    The coefficient is ``1/lam`` when the combined tile parity of ``x`` and
    ``y`` is even and ``lam`` otherwise, so both envelopes are attained.
    """
    s = dimension + 2.0 * order

    def evaluator(x, y):
        parity = np.sum(np.floor(x / tile) + np.floor(y / tile), axis=-1) % 2
        coeff = np.where(parity == 0, 1.0 / lam, lam)
        return (coeff * _distance(x - y) ** (-s)).astype(complex)

    return KernelSpec(
        dimension, order, lam, "general", evaluator=evaluator, symmetric=True,
        name="checkerboard", params=(("tile", tile),),
    )


def adjoint_kernel(spec):
    """Kernel ``K*(x, y) = conj(K(y, x))`` of the adjoint form."""
    if spec.symmetric:
        return spec
    if spec.translation_invariant:
        prof = spec.profile
        return KernelSpec(
            spec.dimension, spec.order, spec.lam, spec.form,
            profile=lambda z: np.conj(prof(-np.asarray(z))),
            symmetric=False,
            far_field=None if spec.far_field is None else complex(spec.far_field).conjugate(),
            name=f"adjoint({spec.name})", params=spec.params,
        )
    ev = spec.evaluator
    return KernelSpec(
        spec.dimension, spec.order, spec.lam, "general",
        evaluator=lambda x, y: np.conj(ev(y, x)),
        symmetric=False,
        far_field=None if spec.far_field is None else complex(spec.far_field).conjugate(),
        name=f"adjoint({spec.name})", params=spec.params,
    )


KERNEL_CATALOG = {
    "fractional": fractional_kernel,
    "phase-perturbed": phase_perturbed_kernel,
    "checkerboard": checkerboard_kernel,
    "power": power_kernel,
}


def make_kernel(name, dimension, order, lam=None, **params):
    """Build a catalog kernel by name."""
    try:
        factory = KERNEL_CATALOG[name]
    except KeyError:
        raise DomainError(
            f"unknown kernel {name!r}; catalog has {sorted(KERNEL_CATALOG)}"
        ) from None
    if lam is None:
        return factory(dimension, order, **params)
    return factory(dimension, order, lam, **params)

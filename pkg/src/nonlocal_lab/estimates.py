"""Verifiers for the energy, tail, reverse Holder and resolvent inequalities.

Every verifier reports both sides of its inequality so that callers can
assert, fit constants or compare against frozen baselines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .discretize import (
    DiscreteOperator,
    GridFunction,
    assemble,
    ball_volume,
    exterior_integral,
    make_cutoff,
    near_field_factor,
)
from .errors import DomainError, GeometryError
from .kernels import adjoint_kernel, power_kernel, sector_params
from .reports import VerificationReport
from .solve import (
    ResolventQuery,
    check_sector,
    lp_norm_bracket,
    resolve,
    resolvent_matrix,
    resolvent_norm_2,
)

__all__ = [
    "Ball",
    "CaccioppoliBreakdown",
    "caccioppoli_verify",
    "caccioppoli_sweep",
    "TailBound",
    "tail_bound_check",
    "tail_corpus",
    "fit_tail_constant",
    "WRHResult",
    "wrh_check",
    "gehring_probe",
    "PRange",
    "admissible_p_range",
    "resolvent_lp_sweep",
    "square_function_ratio",
    "lambda_lattice",
]


@dataclass(frozen=True)
class Ball:
    """Closed ball ``B(center, radius)``; cells belong when their centre does."""

    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))

    def dilate(self, factor):
        return Ball(self.center, self.radius * factor)

    def distances(self, grid):
        return np.linalg.norm(grid.centers - np.asarray(self.center), axis=-1)

    def mask(self, grid):
        if len(self.center) != grid.dimension:
            raise GeometryError("ball and grid dimensions differ")
        return self.distances(grid) <= self.radius * (1.0 + 1e-12)

    def volume(self, d):
        return ball_volume(d, self.radius)


def lambda_lattice(decades, args, per_decade=1):
    """``{10^k e^(i a)}`` for integer ``k`` in ``decades`` and ``a`` in ``args``."""
    lo, hi = decades
    mags = np.logspace(lo, hi, int(round((hi - lo) * per_decade)) + 1)
    return [complex(m * np.exp(1j * a)) for m in mags for a in args]


def _complex_noise(rng, size):
    return rng.standard_normal(size) + 1j * rng.standard_normal(size)


# ---------------------------------------------------------------------------
# Caccioppoli


@dataclass
class CaccioppoliBreakdown:
    """The seven integrals of the non-local energy estimate.

    ``lhs_terms``: ``|lam| int |u|^2 eta^2``, the two-cutoff and the
    product-cutoff Gagliardo terms over ``2B x 2B``, and the two exterior
    cross terms.  ``rhs_terms``: ``r^(-2alpha) int_{2B} |u|^2`` and
    ``int_{2B} |u| * int_{R^d minus 2B} |u(y)| / |x0 - y|^(d+2alpha)``.
    """

    lhs_terms: tuple
    rhs_terms: tuple
    ratio: float
    params: dict = field(default_factory=dict)

    @property
    def lhs(self):
        return float(sum(self.lhs_terms))

    @property
    def rhs(self):
        return float(sum(self.rhs_terms))

    def as_dict(self):
        return {
            **self.params,
            "lhs_terms": list(self.lhs_terms),
            "rhs_terms": list(self.rhs_terms),
            "lhs": self.lhs,
            "rhs": self.rhs,
            "ratio": self.ratio,
        }


def _ratio(lhs, rhs):
    if rhs == 0:
        return 0.0 if lhs == 0 else math.inf
    return lhs / rhs


def _check_caccioppoli_geometry(grid, ball):
    if grid.boundary != "zero_extension":
        raise GeometryError("the energy estimate is verified in zero_extension mode only")
    c = np.asarray(ball.center)
    if np.any(np.abs(c) + 3.0 * ball.radius > grid.half_width * (1 + 1e-12)):
        raise GeometryError("B(x0, 2r) must sit inside the box with margin r")


class _PowerWeights:
    """Corrected ``|x - y|^(-d-2alpha)`` weights matching the assembly."""

    def __init__(self, grid, alpha):
        self.grid = grid
        self.alpha = alpha
        self.s = grid.dimension + 2.0 * alpha
        self.c = near_field_factor(grid.dimension, alpha)

    def block(self, rows, cols):
        g = self.grid
        idx = g.multi_index
        mm = idx[rows][:, None, :] - idx[cols][None, :, :]
        r = np.linalg.norm(mm, axis=-1) * g.h
        with np.errstate(divide="ignore"):
            w = np.where(r > 0, r ** (-self.s), 0.0)
        shell = np.max(np.abs(mm), axis=-1) == 1
        return np.where(shell, self.c * w, w)


def caccioppoli_terms(op, u, ball, lam, eta):
    """Evaluate the seven integrals for given ``u`` and cutoff values ``eta``."""
    grid = op.grid
    d, hd, alpha = grid.dimension, grid.cell_volume, op.kernel.order
    s = d + 2.0 * alpha
    uu = u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=complex)
    e = eta.values.real if isinstance(eta, GridFunction) else np.asarray(eta, dtype=float)
    in2 = np.flatnonzero(ball.dilate(2.0).mask(grid))
    out2 = np.setdiff1d(np.arange(grid.size), in2)
    P = _PowerWeights(grid, alpha)
    Wdd = P.block(in2, in2)
    ud, ed = uu[in2], e[in2]
    diff2 = np.abs(ud[:, None] - ud[None, :]) ** 2
    t1 = abs(lam) * hd * np.sum(np.abs(uu) ** 2 * e**2)
    t2 = hd * hd * np.sum(Wdd * diff2 * (ed[:, None] ** 2 + ed[None, :] ** 2))
    prod = ud * ed
    t3 = hd * hd * np.sum(Wdd * np.abs(prod[:, None] - prod[None, :]) ** 2)
    # int_{R^d minus 2B} |x - y|^(-s) dy for x in 2B: in-box part plus exterior tail
    ext_box = hd * np.sum(P.block(in2, out2), axis=1) if out2.size else np.zeros(len(in2))
    tail, _ = exterior_integral(power_kernel(d, alpha), grid, points=grid.centers[in2],
                                both_orderings=False)
    ext = ext_box + tail.real
    t4 = hd * np.sum(np.abs(ud) ** 2 * ed**2 * ext)
    t5 = t4
    r6 = ball.radius ** (-2.0 * alpha) * hd * np.sum(np.abs(ud) ** 2)
    dist = ball.distances(grid)[out2]
    r7 = hd * np.sum(np.abs(ud)) * hd * np.sum(np.abs(uu[out2]) * dist ** (-s))
    lhs = (float(t1), float(t2), float(t3), float(t4), float(t5))
    rhs = (float(r6), float(r7))
    return lhs, rhs


def caccioppoli_verify(op: DiscreteOperator, ball: Ball, lam, forcing_seed: int,
                       theta=None, scale=1.0, forcing=None) -> CaccioppoliBreakdown:
    """Energy estimate for a local solution of the homogeneous resolvent equation.

    The solution is manufactured as ``u = (lam + A)^(-1) f`` with ``f`` a
    seeded complex random field supported outside ``B(x0, 2r)``; hence the
    equation holds against every test function supported in
    ``B(x0, 3r/2)``.  All integrals use the same corrected power-kernel
    weights as the assembly, and exterior integrals include the tail.
    """
    grid = op.grid
    _check_caccioppoli_geometry(grid, ball)
    check_sector(op, lam, theta)
    cut = make_cutoff(grid, ball.center, ball.radius)
    if forcing is None:
        rng = np.random.default_rng(forcing_seed)
        f = _complex_noise(rng, grid.size)
        f[ball.dilate(2.0).mask(grid)] = 0.0
    else:
        f = np.asarray(forcing, dtype=complex).copy()
    f = scale * f
    if not np.any(f):
        u = np.zeros(grid.size, dtype=complex)
        residual = 0.0
    else:
        sol = resolve(op, ResolventQuery(lam, GridFunction(grid, f), theta=theta))
        u, residual = sol.values, sol.meta["residual"]
    lhs, rhs = caccioppoli_terms(op, u, ball, lam, cut.values)
    lam = complex(lam)
    params = {
        "lambda": [lam.real, lam.imag],
        "abs_lambda": abs(lam),
        "arg_lambda": math.atan2(lam.imag, lam.real),
        "radius": ball.radius,
        "center": list(ball.center),
        "seed": forcing_seed,
        "residual": residual,
        "cutoff_constant": cut.gradient_bound,
    }
    return CaccioppoliBreakdown(lhs, rhs, _ratio(sum(lhs), sum(rhs)), params)


def caccioppoli_sweep(op, ball, lambdas, seeds, theta=None, uniformity_limit=100.0):
    """Run :func:`caccioppoli_verify` over a ``lambda x seed`` lattice.

    The soft verdict requires every ratio to be finite and the spread
    between the largest and smallest per-``|lambda|`` maxima to stay below
    ``uniformity_limit``.
    """
    cases = []
    for lam in sorted(lambdas, key=lambda z: (abs(z), math.atan2(z.imag, z.real))):
        for seed in sorted(seeds):
            cases.append(caccioppoli_verify(op, ball, lam, seed, theta=theta).as_dict())
    ratios = np.array([c["ratio"] for c in cases])
    finite = bool(np.all(np.isfinite(ratios)))
    per_mag = {}
    for c in cases:
        key = round(c["abs_lambda"], 12)
        per_mag[key] = max(per_mag.get(key, 0.0), c["ratio"])
    mags = np.array(list(per_mag.values()))
    spread = float(mags.max() / mags.min()) if mags.size and mags.min() > 0 else math.inf
    k = int(np.argmax(ratios))
    decades = math.log10(max(per_mag) / min(per_mag)) if per_mag and min(per_mag) > 0 else 0.0
    summary = {
        "max_ratio": float(ratios.max()),
        "min_ratio": float(ratios.min()),
        "argmax_case": k,
        "all_finite": finite,
        "uniformity_spread": spread,
        "lambda_decades": decades,
        "soft_pass": finite and spread <= uniformity_limit,
    }
    return VerificationReport(
        experiment="caccioppoli",
        params={"operator": op.describe(), "ball": {"center": list(ball.center), "radius": ball.radius},
                "seeds": sorted(seeds), "theta": theta},
        cases=cases,
        summary=summary,
        baseline_metrics=["max_ratio"],
    )


# ---------------------------------------------------------------------------
# dyadic tail bound


class TailBound(NamedTuple):
    lhs: float
    rhs: float


def tail_bound_check(u: GridFunction, ball: Ball, alpha: float, c_check: float = 1.0) -> TailBound:
    """Both sides of the dyadic-annuli tail estimate.

    ``lhs = int_{2B} |u| * int_{R^d minus 2B} |u(y)| |x0 - y|^(-d-2alpha) dy``
    and ``rhs = c_check r^(d-2alpha) sum_{k>=1} 2^(-2alpha k)
    |2^(k+1)B|^(-1) int_{2^(k+1)B} |u|^2`` with ``u = 0`` off the box.  The
    series is summed exactly: once ``2^(k+1)B`` covers the box its terms
    form a geometric series.
    """
    grid = u.grid
    d, hd, r = grid.dimension, grid.cell_volume, ball.radius
    s = d + 2.0 * alpha
    a = np.abs(u.values)
    dist = ball.distances(grid)
    in2 = dist <= 2.0 * r * (1 + 1e-12)
    lhs = hd * a[in2].sum() * hd * np.sum(a[~in2] * dist[~in2] ** (-s))
    sq = a**2
    total = 0.0
    k = 1
    while True:
        R = 2.0 ** (k + 1) * r
        inside = dist <= R * (1 + 1e-12)
        mass = hd * sq[inside].sum()
        vol = ball_volume(d, R)
        if inside.all():
            q = 2.0 ** (-(2.0 * alpha + d))
            total += 2.0 ** (-2.0 * alpha * k) * mass / vol / (1.0 - q)
            break
        total += 2.0 ** (-2.0 * alpha * k) * mass / vol
        k += 1
    rhs = c_check * r ** (d - 2.0 * alpha) * total
    return TailBound(float(lhs), float(rhs))


def tail_corpus(grid, ball, size=200, seed=0):
    """Seeded family of test functions for fitting the tail constant.

    Cycles through complex noise, smooth bumps, annulus indicators and
    algebraically decaying profiles centred at varying points.
    """
    rng = np.random.default_rng(seed)
    x = grid.centers
    dist = ball.distances(grid)
    r = ball.radius
    out = []
    for k in range(size):
        kind = k % 4
        if kind == 0:
            v = _complex_noise(rng, grid.size)
        elif kind == 1:
            c = rng.uniform(-grid.half_width, grid.half_width, grid.dimension)
            w = rng.uniform(0.1, 1.0) * grid.half_width
            v = np.exp(-np.sum((x - c) ** 2, axis=-1) / w**2) * np.exp(1j * rng.uniform(0, 2 * np.pi))
        elif kind == 2:
            lo = rng.uniform(0.0, 4.0) * r
            hi = lo + rng.uniform(0.5, 4.0) * r
            v = ((dist > lo) & (dist <= hi)).astype(complex) * rng.uniform(0.5, 2.0)
        else:
            p = rng.uniform(0.2, 3.0)
            v = (1.0 + dist / r) ** (-p) * (1 + 0.3 * _complex_noise(rng, grid.size))
        out.append(GridFunction(grid, v))
    return out


def fit_tail_constant(corpus, ball, alpha):
    """Smallest constant making the tail estimate hold on every corpus member."""
    best = 0.0
    for u in corpus:
        t = tail_bound_check(u, ball, alpha, 1.0)
        if t.rhs > 0:
            best = max(best, t.lhs / t.rhs)
        elif t.lhs > 0:
            return math.inf
    return best


# ---------------------------------------------------------------------------
# weak reverse Holder


@dataclass
class WRHResult:
    lhs: float
    rhs: float
    ratio: float
    family: list
    params: dict = field(default_factory=dict)

    def as_dict(self):
        return {**self.params, "lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio}


def wrh_family(grid, ball):
    """Candidate balls ``2^k B`` for ``k = 0..ceil(log2(L/r)) + 1`` (plus the box)."""
    kmax = int(math.ceil(math.log2(grid.half_width / ball.radius))) + 1
    return [ball.dilate(2.0**k) for k in range(kmax + 1)]


def wrh_forcing(grid, ball, iota, seed, width=1):
    """Seeded bounded complex field vanishing on ``iota B``; shape ``(N, width)``."""
    rng = np.random.default_rng(seed)
    f = rng.uniform(-1, 1, (grid.size, width)) + 1j * rng.uniform(-1, 1, (grid.size, width))
    f[ball.dilate(iota).mask(grid)] = 0.0
    return f


def wrh_check(op, ball, lam, p, iota=2.0, f_seed=0, theta=None, forcing=None, extra_balls=()):
    """Both sides of the weak reverse Holder estimate for ``T f = lam (lam + A)^(-1) f``.

    ``lam`` may be a sequence; then ``f`` has one column per entry and
    ``|.|`` is the l2 norm across columns (finite-width vector-valued case).
    The supremum over enclosing balls is replaced by the finite family of
    :func:`wrh_family` together with the whole box (and ``extra_balls``).
    """
    if not p > 2:
        raise DomainError(f"p must exceed 2, got {p}")
    if not iota > 1:
        raise DomainError(f"iota must exceed 1, got {iota}")
    grid = op.grid
    lams = [complex(z) for z in np.atleast_1d(lam)]
    width = len(lams)
    if forcing is None:
        f = wrh_forcing(grid, ball, iota, f_seed, width)
    else:
        f = np.asarray(forcing, dtype=complex).reshape(grid.size, width)
    Tf = np.zeros_like(f)
    for k, z in enumerate(lams):
        check_sector(op, z, theta)
        if np.any(f[:, k]):
            sol = resolve(op, ResolventQuery(z, GridFunction(grid, f[:, k]), theta=theta))
            Tf[:, k] = z * sol.values
    tf2 = np.sum(np.abs(Tf) ** 2, axis=1)
    f2 = np.sum(np.abs(f) ** 2, axis=1)
    inB = ball.mask(grid)
    lhs = float(np.mean(tf2[inB] ** (p / 2.0)) ** (1.0 / p)) if inB.any() else 0.0
    family = []
    masks = [(b.radius, b.mask(grid)) for b in list(wrh_family(grid, ball)) + list(extra_balls)]
    masks.append(("box", np.ones(grid.size, dtype=bool)))
    for label, m in masks:
        if m.any():
            family.append((label, float(np.sqrt(np.mean(tf2[m] + f2[m])))))
    rhs = max(v for _, v in family) if family else 0.0
    params = {"p": p, "iota": iota, "seed": f_seed, "lambda": [[z.real, z.imag] for z in lams]}
    return WRHResult(lhs, rhs, _ratio(lhs, rhs), family, params)


def gehring_probe(op, ball, lam, p, deltas=(0.01, 0.05, 0.1), seeds=(0,), iota=2.0, theta=None):
    """Ratios at the raised exponents ``p (1 + delta)``; reported, never asserted."""
    out = {}
    for delta in deltas:
        vals = [wrh_check(op, ball, lam, p * (1 + delta), iota, s, theta).ratio for s in seeds]
        out[float(delta)] = {"p": p * (1 + delta), "max_ratio": max(vals), "ratios": vals}
    return out


# ---------------------------------------------------------------------------
# exponent bookkeeping and resolvent sweeps


class PRange(NamedTuple):
    lower: float
    upper: float
    theta: Optional[float]
    beta: Optional[float]

    def contains(self, p):
        return self.lower < p < self.upper

    @property
    def midpoint_above_two(self):
        hi = min(self.upper, 6.0)
        return 0.5 * (max(self.lower, 2.0) + hi)


def admissible_p_range(d, alpha, p=None):
    """Open interval of ``p`` with ``|1/p - 1/2| < alpha/d``.

    For ``p >= 2`` in range also returns the embedding exponent
    ``theta = d(1/2 - 1/p)`` and the interpolation weight ``beta = theta/alpha``.
    """
    if d < 1:
        raise DomainError("d must be >= 1")
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    w = alpha / d
    lower = 1.0 / (0.5 + w)
    upper = math.inf if w >= 0.5 else 1.0 / (0.5 - w)
    theta = beta = None
    if p is not None:
        if not lower < p < upper:
            raise DomainError(f"p = {p} lies outside the admissible range ({lower}, {upper})")
        if p >= 2:
            theta = d * (0.5 - 1.0 / p)
            beta = theta / alpha
    return PRange(lower, upper, theta, beta)


def resolvent_lp_sweep(op, theta, p_list, lambda_lattice, dense_limit=1024, adjoint_op=None):
    """Estimate ``sup_lambda ||lam (lam + A)^(-1)||_{p -> p}`` for each ``p``.

    For ``p >= 2`` the bracket of :func:`lp_norm_bracket` is reported.  For
    ``p < 2`` the sweep is rerun on the operator of the adjoint kernel at the
    dual exponent and conjugate ``lambda``.  Values of ``p`` outside the
    admissible range are flagged for contrast but not asserted.
    """
    if op.size > dense_limit:
        raise DomainError(f"Lp sweep needs N <= {dense_limit} for the dense oracle")
    lams = [complex(z) for z in lambda_lattice]
    for z in lams:
        check_sector(op, z, theta)
    prange = admissible_p_range(op.grid.dimension, op.kernel.order)
    C = sector_params(op.kernel.lam, theta=theta).comparison_constant
    cases = []
    for p in sorted(float(x) for x in p_list):
        if p < 2 and adjoint_op is None:
            adjoint_op = op if op.kernel.symmetric else assemble(
                adjoint_kernel(op.kernel), op.grid, representation=op.representation,
                near_field=op.near_field, images=op.images)
        for z in lams:
            if p >= 2:
                T = resolvent_matrix(op, z)
                lo, hi, exact = lp_norm_bracket(T, p)
                via = "direct"
            else:
                T = resolvent_matrix(adjoint_op, z.conjugate())
                lo, hi, exact = lp_norm_bracket(T, p / (p - 1.0))
                via = "adjoint"
            cases.append({
                "p": p, "lambda": [z.real, z.imag], "abs_lambda": abs(z),
                "arg_lambda": math.atan2(z.imag, z.real), "lower": lo, "upper": hi,
                "exact": exact, "via": via, "in_range": prange.contains(p),
            })
    sup = {}
    for c in cases:
        key = str(c["p"])
        cur = sup.setdefault(key, {"lower": 0.0, "upper": 0.0, "in_range": c["in_range"]})
        cur["lower"] = max(cur["lower"], c["lower"])
        cur["upper"] = max(cur["upper"], c["upper"])
    summary = {
        "sup_by_p": sup,
        "comparison_constant": C,
        "out_of_range": sorted({c["p"] for c in cases if not c["in_range"]}),
    }
    if "2.0" in sup:
        two = sup["2.0"]
        summary["l2_within_sector_bound"] = bool(two["upper"] <= C * (1 + 1e-12))
    return VerificationReport(
        experiment="resolvent-sweep",
        params={"operator": op.describe(), "theta": theta, "p_list": sorted(p_list),
                "lambda_count": len(lams)},
        cases=cases,
        summary=summary,
        baseline_metrics=[],
    )


def square_function_ratio(op, lambdas, fs, p, theta=None):
    """``||(sum_n |T_n f_n|^2)^(1/2)||_p / ||(sum_n |f_n|^2)^(1/2)||_p``."""
    lambdas = list(lambdas)
    fs = list(fs)
    if not lambdas:
        raise DomainError("square function needs at least one resolvent")
    if len(lambdas) != len(fs):
        raise DomainError("need one right-hand side per lambda")
    grid = op.grid
    num = np.zeros(grid.size)
    den = np.zeros(grid.size)
    for z, f in zip(lambdas, fs):
        fv = f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=complex)
        check_sector(op, z, theta)
        den += np.abs(fv) ** 2
        if np.any(fv):
            u = resolve(op, ResolventQuery(z, GridFunction(grid, fv), theta=theta)).values
            num += np.abs(complex(z) * u) ** 2
    top = GridFunction(grid, np.sqrt(num)).lp_norm(p)
    bottom = GridFunction(grid, np.sqrt(den)).lp_norm(p)
    if bottom == 0:
        if top == 0:
            return 0.0
        raise DomainError("zero denominator with nonzero numerator")
    return float(top / bottom)

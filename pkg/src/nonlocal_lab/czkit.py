"""Dyadic cubes, stopping-time decompositions, maximal functions, good-lambda.

All set measures are integer cell counts so that the decomposition
certificates hold in exact arithmetic.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Optional

import numpy as np
from scipy import ndimage

from .discretize import Grid, GridFunction
from .errors import DomainError, PreconditionError
from .reports import VerificationReport

__all__ = [
    "DyadicCube",
    "CZResult",
    "cz_decompose",
    "maximal",
    "maximal_array",
    "DistributionSet",
    "distribution_set",
    "good_lambda_check",
    "good_lambda_constant",
    "max_admissible_delta",
    "calibrate_gamma",
]


@dataclass(frozen=True)
class DyadicCube:
    """A dyadic descendant of a base cube made of ``base_cells^d`` grid cells.

    Parameters
    ----------
    dimension : int
    base_cells : int
        Side of the base cube ``Q0`` in cells; cells of ``Q0`` are indexed
        row-major in a ``(base_cells,) * d`` array.
    path : tuple of int
        Child indices in ``0 .. 2^d - 1``; bit ``k`` selects the upper half
        along axis ``k``.
    base_lower, base_length : float
        Physical placement of ``Q0`` (lower corner and side length).
    """

    dimension: int
    base_cells: int
    path: tuple = ()
    base_lower: float = 0.0
    base_length: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(int(c) for c in self.path))
        if any(not 0 <= c < 2**self.dimension for c in self.path):
            raise DomainError("child indices must lie in 0 .. 2^d - 1")
        if self.base_cells % (2 ** self.level):
            raise DomainError(
                f"level {self.level} does not fit {self.base_cells} cells per side"
            )

    @property
    def level(self):
        return len(self.path)

    @property
    def side_cells(self):
        return self.base_cells // 2**self.level

    @property
    def cell_count(self):
        return self.side_cells**self.dimension

    @property
    def corner(self):
        """Lower corner in cell units."""
        corner = [0] * self.dimension
        side = self.base_cells
        for c in self.path:
            side //= 2
            for k in range(self.dimension):
                if (c >> k) & 1:
                    corner[k] += side
        return tuple(corner)

    @property
    def parent(self):
        if not self.path:
            return None
        return DyadicCube(self.dimension, self.base_cells, self.path[:-1], self.base_lower, self.base_length)

    def children(self):
        return [
            DyadicCube(self.dimension, self.base_cells, self.path + (c,), self.base_lower, self.base_length)
            for c in range(2**self.dimension)
        ]

    def slices(self):
        s = self.side_cells
        return tuple(slice(c, c + s) for c in self.corner)

    def cells(self):
        """Flat (row-major) indices of the cells of this cube."""
        mask = np.zeros((self.base_cells,) * self.dimension, dtype=bool)
        mask[self.slices()] = True
        return np.flatnonzero(mask)

    def bounds(self):
        """Physical ``[(lo, hi)]`` per axis."""
        cell = self.base_length / self.base_cells
        return [
            (self.base_lower + c * cell, self.base_lower + (c + self.side_cells) * cell)
            for c in self.corner
        ]

    def contains(self, other):
        return other.base_cells == self.base_cells and other.path[: self.level] == self.path

    def to_dict(self):
        return {"path": list(self.path), "level": self.level, "corner": list(self.corner),
                "side_cells": self.side_cells, "bounds": [list(b) for b in self.bounds()]}


class Certificate(NamedTuple):
    cube_count: int
    cube_cells: int
    parent_count: int
    parent_cells: int

    @property
    def density(self):
        return Fraction(self.cube_count, self.cube_cells)

    @property
    def parent_density(self):
        return Fraction(self.parent_count, self.parent_cells)


@dataclass
class CZResult:
    selected: list
    certificates: list
    residual_cells: int
    delta: Fraction
    root: DyadicCube

    @property
    def residual_measure(self):
        cell = (self.root.base_length / self.root.base_cells) ** self.root.dimension
        return self.residual_cells * cell

    def verify(self, A):
        """Recheck disjointness and the two density certificates exactly."""
        for i, q in enumerate(self.selected):
            for p in self.selected[i + 1:]:
                if q.contains(p) or p.contains(q):
                    return False
        for q, c in zip(self.selected, self.certificates):
            if not c.density > self.delta or not c.parent_density <= self.delta:
                return False
        return True

    def to_dict(self):
        return {
            "delta": str(self.delta),
            "residual_cells": self.residual_cells,
            "residual_measure": self.residual_measure,
            "selected": [q.to_dict() for q in self.selected],
            "certificates": [
                {"density": str(c.density), "parent_density": str(c.parent_density),
                 "count": c.cube_count, "cells": c.cube_cells,
                 "parent_count": c.parent_count, "parent_cells": c.parent_cells}
                for c in self.certificates
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _as_mask(A, root):
    shape = (root.base_cells,) * root.dimension
    arr = np.asarray(A)
    if arr.dtype == bool and arr.shape == shape:
        return arr.copy()
    idx = np.asarray(sorted(set(int(i) for i in np.ravel(arr))), dtype=int)
    total = root.base_cells**root.dimension
    if idx.size and (idx.min() < 0 or idx.max() >= total):
        raise DomainError("A contains cells outside the base cube")
    mask = np.zeros(total, dtype=bool)
    mask[idx] = True
    mask = mask.reshape(shape)
    inside = np.zeros(shape, dtype=bool)
    inside[root.slices()] = True
    if np.any(mask & ~inside):
        raise DomainError("A is not contained in Q")
    return mask


def cz_decompose(Q: DyadicCube, A, delta, max_level=None) -> CZResult:
    """Stopping-time selection of dyadic cubes where ``A`` is dense.

    Children are visited in index order; a cube is emitted the first time
    its ``A``-density exceeds ``delta``.  Cells of ``A`` left in cubes at
    ``max_level`` that were never emitted count towards the residual.

    Parameters
    ----------
    Q : DyadicCube
    A : iterable of int or boolean array
        Flat cell indices (in the base-cube numbering) of the set.
    delta : float or Fraction
        Threshold in ``(0, 1)``; converted exactly to a rational.
    max_level : int, optional
        Deepest level relative to the base cube; defaults to single cells.
    """
    delta = Fraction(delta)
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    full_depth = int(round(math.log2(Q.base_cells)))
    if 2**full_depth != Q.base_cells:
        raise DomainError("base cube side must be a power of two")
    if max_level is None:
        max_level = full_depth
    if not Q.level <= max_level <= full_depth:
        raise DomainError(f"max_level must lie in [{Q.level}, {full_depth}]")
    mask = _as_mask(A, Q)
    count = int(mask[Q.slices()].sum())
    if count == 0:
        raise PreconditionError("A must have positive measure")
    if not count < delta * Q.cell_count:
        raise PreconditionError(
            f"|A| = {count} cells is not below delta |Q| = {float(delta * Q.cell_count)} cells"
        )
    # integer prefix sums for O(1) cube counts
    pre = mask.astype(np.int64)
    for ax in range(Q.dimension):
        pre = np.cumsum(pre, axis=ax)
    pre = np.pad(pre, [(1, 0)] * Q.dimension)

    def cube_count(q):
        lo = q.corner
        s = q.side_cells
        if Q.dimension == 1:
            return int(pre[lo[0] + s] - pre[lo[0]])
        a, b = lo
        return int(pre[a + s, b + s] - pre[a, b + s] - pre[a + s, b] + pre[a, b])

    selected, certs = [], []
    residual = 0
    stack = [(Q, count)]
    while stack:
        parent, pcount = stack.pop()
        kids = []
        for child in parent.children():
            c = cube_count(child)
            if c == 0:
                continue
            if c * delta.denominator > delta.numerator * child.cell_count:
                selected.append(child)
                certs.append(Certificate(c, child.cell_count, pcount, parent.cell_count))
            elif child.level < max_level:
                kids.append((child, c))
            else:
                residual += c
        stack.extend(reversed(kids))
    return CZResult(selected, certs, residual, delta, Q)


# ---------------------------------------------------------------------------
# maximal functions


def _box_means(g, s):
    """Means of ``g`` over all ``s``-sided axis cubes, indexed by lower corner."""
    d = g.ndim
    pre = g.astype(float)
    for ax in range(d):
        pre = np.cumsum(pre, axis=ax)
    pre = np.pad(pre, [(1, 0)] * d)
    if d == 1:
        sums = pre[s:] - pre[:-s]
    else:
        sums = pre[s:, s:] - pre[:-s, s:] - pre[s:, :-s] + pre[:-s, :-s]
    return sums / s**d


def maximal_array(g):
    """Grid maximal function of a non-negative array (rectangular grids allowed)."""
    g = np.asarray(g, dtype=float)
    d = g.ndim
    out = g.copy()
    for s in range(2, min(g.shape) + 1):
        means = _box_means(g, s)
        # after padding, the window starting at i covers corners i-s+1 .. i
        m = np.pad(means, [(s - 1, s - 1)] * d, constant_values=-np.inf)
        for ax in range(d):
            m = ndimage.maximum_filter1d(m, size=s, axis=ax, mode="constant", cval=-np.inf)
        # the filter window at j starts at j - s//2
        out = np.maximum(out, m[tuple(slice(s // 2, s // 2 + n) for n in g.shape)])
    return out


def maximal(g, localized_to: Optional[DyadicCube] = None):
    """Hardy-Littlewood maximal function over grid-aligned cubes.

    ``(Mg)_i`` is the largest cell mean of ``g`` over axis-parallel cubes
    made of whole cells (integer side) that contain cell ``i``.  With
    ``localized_to`` only cubes inside that dyadic cube are used and cells
    outside it are set to 0.

    Parameters
    ----------
    g : GridFunction or ndarray
        Non-negative real values; arrays may be flat (1D) or ``(n,)*d``.
    """
    if isinstance(g, GridFunction):
        arr = g.values
        if np.any(np.abs(arr.imag) > 0):
            raise DomainError("maximal function needs real input")
        arr = arr.real.reshape(g.grid.shape)
    else:
        arr = np.asarray(g, dtype=float)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise DomainError("maximal function needs finite non-negative input")
    if localized_to is None:
        res = maximal_array(arr)
    else:
        if arr.shape != (localized_to.base_cells,) * localized_to.dimension:
            raise DomainError("localising cube does not match the grid")
        res = np.zeros_like(arr, dtype=float)
        sl = localized_to.slices()
        res[sl] = maximal_array(arr[sl])
    if isinstance(g, GridFunction):
        return GridFunction(g.grid, res.ravel())
    return res


class DistributionSet(NamedTuple):
    indices: np.ndarray
    count: int
    measure: float


def distribution_set(g, lam, cell_volume=None, maximal_values=None):
    """``E(lam) = {i : (Mg)_i > lam}`` with its measure ``h^d * count``."""
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    if maximal_values is None:
        mg = maximal(g)
    else:
        mg = maximal_values
    vals = mg.values.real if isinstance(mg, GridFunction) else np.asarray(mg, dtype=float).ravel()
    if cell_volume is None:
        cell_volume = g.grid.cell_volume if isinstance(g, GridFunction) else 1.0
    idx = np.flatnonzero(vals > lam)
    return DistributionSet(idx, int(idx.size), float(idx.size * cell_volume))


# ---------------------------------------------------------------------------
# good-lambda


def good_lambda_constant(delta, q):
    """``A = 1 / (2 delta^(2/q))``."""
    return 1.0 / (2.0 * delta ** (2.0 / q))


def max_admissible_delta(q, d, shrink=1e-6):
    """Largest ``delta`` (up to a relative shrink) with ``1/(2 delta^(2/q)) > 5^d``."""
    return (2.0 * 5.0**d) ** (-q / 2.0) * (1.0 - shrink)


def _plain_values(g):
    if isinstance(g, GridFunction):
        return g.values.real.reshape(g.grid.shape), g.grid.cell_volume
    return np.asarray(g, dtype=float), 1.0


def good_lambda_check(Tf_sq, f_sq, q, delta, gamma, lambda_grid):
    """Check ``|E(A lam)| <= delta |E(lam)| + |{M f_sq > gamma lam}|`` on a grid of ``lam``.

    Measures are cell counts compared in exact rational arithmetic; the
    reported measures are scaled by the cell volume.
    """
    if not q > 2:
        raise DomainError("q must exceed 2")
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    if not gamma > 0:
        raise DomainError("gamma must be positive")
    T, hd = _plain_values(Tf_sq)
    F, _ = _plain_values(f_sq)
    d = T.ndim
    A = good_lambda_constant(delta, q)
    if not A > 5.0**d:
        raise PreconditionError(
            f"A = 1/(2 delta^(2/q)) = {A:.6g} must exceed 5^d = {5**d}; "
            f"need delta < {(2.0 * 5.0**d) ** (-q / 2.0):.6g}"
        )
    MT = maximal(T).ravel()
    MF = maximal(F).ravel()
    dfrac = Fraction(delta)
    cases = []
    for lam in sorted(float(x) for x in lambda_grid):
        eA = int(np.sum(MT > A * lam))
        e = int(np.sum(MT > lam))
        fset = int(np.sum(MF > gamma * lam))
        holds = Fraction(eA) <= dfrac * e + fset
        cases.append({
            "lambda": lam,
            "E_A_lambda": eA * hd,
            "delta_E_lambda": float(dfrac * e) * hd,
            "F_gamma_lambda": fset * hd,
            "margin": float(dfrac * e + fset - eA) * hd,
            "holds": bool(holds),
        })
    passed = all(c["holds"] for c in cases)
    summary = {
        "pass": passed,
        "A": A,
        "delta": delta,
        "gamma": gamma,
        "failures": sum(not c["holds"] for c in cases),
        "min_margin": min((c["margin"] for c in cases), default=0.0),
    }
    return VerificationReport(
        experiment="good-lambda",
        params={"q": q, "delta": delta, "gamma": gamma, "lambda_count": len(cases)},
        cases=cases,
        summary=summary,
    )


def calibrate_gamma(Tf_sq, f_sq, q, delta, lambda_grid, candidates=None):
    """Largest candidate ``gamma`` for which the good-lambda verdict passes."""
    if candidates is None:
        candidates = np.logspace(-6, 6, 49)
    best = None
    for gamma in sorted(candidates):
        if good_lambda_check(Tf_sq, f_sq, q, delta, gamma, lambda_grid).summary["pass"]:
            best = float(gamma)
    return best

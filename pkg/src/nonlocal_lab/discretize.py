"""Grids, grid functions, cutoffs and the discrete non-local operator.

The discrete form on a uniform grid with spacing ``h`` and ``N = n**d``
cells is

    Q(u, v) = h^(2d) sum_{i != j} Kt_ij (u_i - u_j) conj(v_i - v_j)
              + h^d sum_i tail_i u_i conj(v_i),

with ``Kt`` the kernel sampled at cell centres (nearest-shell pairs carry a
correction factor, see :func:`near_field_factor`).  The matrix ``A`` with
``<Au, v> = Q(u, v)`` under ``<u, v> = h^d sum u conj(v)`` is

    (Au)_i = h^d sum_j W_ij (u_i - u_j) + tail_i u_i,   W = Kt + Kt^T,

which is complex symmetric.
"""
from __future__ import annotations

import functools
import math
import threading
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import mpmath
import numpy as np
from scipy import integrate, linalg, special

from .errors import (
    ConfigurationError,
    DomainError,
    GeometryError,
    KernelEvaluationError,
    UnsupportedRepresentationError,
)
from .kernels import KernelSpec, sector_params

__all__ = [
    "Grid",
    "GridFunction",
    "CutoffFunction",
    "DiscreteOperator",
    "assemble",
    "seminorm",
    "make_cutoff",
    "near_field_factor",
    "exterior_integral",
    "sphere_measure",
]

BOUNDARIES = ("periodic", "zero_extension")
DENSE_LIMIT = 4096


def sphere_measure(d):
    """Surface measure of the unit sphere in ``R^d`` (2 for ``d = 1``)."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def ball_volume(d, r):
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0) * r**d


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on ``[-L, L]^d``.

    Parameters
    ----------
    dimension : int
    half_width : float
    cells_per_dim : int
    boundary : {'periodic', 'zero_extension'}
    """

    dimension: int
    half_width: float
    cells_per_dim: int
    boundary: str = "zero_extension"

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ConfigurationError(f"dimension must be 1 or 2, got {self.dimension}")
        if not self.half_width > 0:
            raise ConfigurationError(f"half_width must be positive, got {self.half_width}")
        if int(self.cells_per_dim) != self.cells_per_dim or self.cells_per_dim < 2:
            raise ConfigurationError(f"cells_per_dim must be an integer >= 2, got {self.cells_per_dim}")
        if self.boundary not in BOUNDARIES:
            raise ConfigurationError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")

    @property
    def h(self):
        return 2.0 * self.half_width / self.cells_per_dim

    @property
    def size(self):
        return self.cells_per_dim**self.dimension

    @property
    def shape(self):
        return (self.cells_per_dim,) * self.dimension

    @property
    def cell_volume(self):
        return self.h**self.dimension

    @cached_property
    def coords(self):
        """One-dimensional centre coordinates ``-L + (i + 1/2) h``."""
        n = self.cells_per_dim
        return -self.half_width + (np.arange(n) + 0.5) * self.h

    @cached_property
    def centers(self):
        """Cell centres, shape ``(N, d)``, row-major."""
        axes = np.meshgrid(*([self.coords] * self.dimension), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)

    @cached_property
    def multi_index(self):
        """Integer cell indices, shape ``(N, d)``."""
        idx = np.indices(self.shape).reshape(self.dimension, -1).T
        return idx

    def displacement(self, x, y):
        """``x - y`` using the torus metric in periodic mode."""
        z = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        if self.boundary == "periodic":
            period = 2.0 * self.half_width
            z = z - period * np.round(z / period)
        return z

    def describe(self):
        return {
            "dimension": self.dimension,
            "half_width": self.half_width,
            "cells_per_dim": self.cells_per_dim,
            "boundary": self.boundary,
        }


@dataclass
class GridFunction:
    """Complex cell-valued function on a :class:`Grid`."""

    grid: Grid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex).ravel()
        if v.shape != (self.grid.size,):
            raise DomainError(f"expected {self.grid.size} values, got {v.size}")
        self.values = v

    @classmethod
    def from_callable(cls, grid, func):
        return cls(grid, func(grid.centers))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.size, dtype=complex))

    def lp_norm(self, p=2.0):
        """Discrete ``(h^d sum |u_i|^p)^(1/p)``; ``p = inf`` gives the max."""
        a = np.abs(self.values)
        if np.isinf(p):
            return float(a.max(initial=0.0))
        return float((self.grid.cell_volume * np.sum(a**p)) ** (1.0 / p))

    def mean(self, index_set=None, power=1.0):
        """Cell average of ``|u|^power`` over an index set (all cells by default)."""
        a = np.abs(self.values) ** power
        if index_set is not None:
            a = a[np.asarray(index_set)]
        if a.size == 0:
            return 0.0
        return float(np.sum(a) / a.size)

    def inner(self, other):
        return complex(self.grid.cell_volume * np.vdot(other.values, self.values))

    def _wrap(self, values):
        return GridFunction(self.grid, values)

    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise DomainError("grid functions live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return self._wrap(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.values - self._other(other))

    def __neg__(self):
        return self._wrap(-self.values)

    def __mul__(self, other):
        return self._wrap(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._wrap(self.values / self._other(other))

    def conj(self):
        return self._wrap(self.values.conj())

    def reshape(self):
        return self.values.reshape(self.grid.shape)

    # serialisation ---------------------------------------------------

    def save(self, path):
        """Write the little-endian complex binary plus a ``.hdr`` text header."""
        path = Path(path)
        self.values.astype("<c16").tofile(path)
        g = self.grid
        header = (
            f"d {g.dimension}\nL {g.half_width!r}\nn {g.cells_per_dim}\n"
            f"boundary {g.boundary}\n"
        )
        Path(str(path) + ".hdr").write_text(header)

    @classmethod
    def load(cls, path):
        path = Path(path)
        fields = {}
        for line in Path(str(path) + ".hdr").read_text().splitlines():
            if line.strip():
                key, value = line.split(None, 1)
                fields[key] = value.strip()
        grid = Grid(int(fields["d"]), float(fields["L"]), int(fields["n"]), fields["boundary"])
        return cls(grid, np.fromfile(path, dtype="<c16"))

    def to_csv(self, path, max_cells=65536):
        if self.grid.size > max_cells:
            raise DomainError(f"CSV export is limited to {max_cells} cells")
        d = self.grid.dimension
        cols = [f"x{k}" for k in range(d)] + ["re", "im"]
        data = np.column_stack([self.grid.centers, self.values.real, self.values.imag])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


# ---------------------------------------------------------------------------
# cutoff functions


@dataclass(frozen=True)
class CutoffFunction:
    center: tuple
    radius: float
    values: GridFunction
    gradient_bound: float
    profile: str = "smoothstep"


def _smoothstep(t):
    return t * t * (3.0 - 2.0 * t)


def make_cutoff(grid, center, r):
    """Smoothstep cutoff equal to one on ``B(center, r)``, zero off ``B(center, 3r/2)``.

    The recorded ``gradient_bound`` is ``r`` times the largest adjacent-cell
    difference quotient, i.e. the measured constant ``C_d``.
    """
    c = np.atleast_1d(np.asarray(center, dtype=float))
    if c.shape != (grid.dimension,):
        raise GeometryError(f"center must have {grid.dimension} coordinates")
    if r < 4.0 * grid.h:
        raise GeometryError(f"radius {r} is not resolved: need r >= 4h = {4 * grid.h}")
    if np.any(np.abs(c) + 1.5 * r > grid.half_width * (1 + 1e-12)):
        raise GeometryError("B(center, 3r/2) is not contained in the box")
    dist = np.linalg.norm(grid.centers - c, axis=-1)
    eta = _smoothstep(np.clip((1.5 * r - dist) / (0.5 * r), 0.0, 1.0))
    field_ = eta.reshape(grid.shape)
    slope = 0.0
    for axis in range(grid.dimension):
        diff = np.abs(np.diff(field_, axis=axis))
        if diff.size:
            slope = max(slope, float(diff.max()) / grid.h)
    return CutoffFunction(tuple(c.tolist()), float(r), GridFunction(grid, eta), slope * r)


# ---------------------------------------------------------------------------
# near-field correction


@functools.lru_cache(maxsize=None)
def near_field_factor(d, alpha):
    """Weight factor for nearest-shell pairs (``|m|_inf = 1``).

    Collocating ``|x - y|^(-d-2alpha)`` at cell centres misses the
    regularised lattice sum ``Z_d = sum_{m != 0} |m|^(2-d-2alpha)``, which
    produces an ``O(h^(2-2alpha))`` error in the symbol.  Scaling the nearest
    shell by ``c = 1 - Z_d / S_1``, ``S_1 = sum_{|m|_inf = 1} |m|^(2-d-2alpha)``,
    cancels that term.
    """
    if d == 1:
        return float(1.0 - special.zeta(2.0 * alpha - 1.0))
    if d == 2:
        with mpmath.workdps(30):
            z = 4 * mpmath.zeta(alpha) * mpmath.dirichlet(alpha, [0, 1, 0, -1])
        shell = 4.0 + 4.0 * 2.0 ** (-alpha)
        return float(1.0 - float(z) / shell)
    raise DomainError(f"no near-field factor for d = {d}")


def _shell_mask(offsets):
    """``|m|_inf == 1`` for integer offsets of shape ``(..., d)``."""
    return np.max(np.abs(offsets), axis=-1) == 1


# ---------------------------------------------------------------------------
# exterior quadrature


def _gauss(nodes):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * (x + 1.0), 0.5 * w


def _radial_rule(a, R, panels, nodes):
    """Log-spaced composite Gauss rule on ``[a, R]``; ``a`` has shape ``(P,)``."""
    t, w = _gauss(nodes)
    la, lR = np.log(a), math.log(R)
    width = (lR - la) / panels
    k = np.arange(panels)
    s = la[:, None, None] + width[:, None, None] * (k[None, :, None] + t[None, None, :])
    rho = np.exp(s).reshape(len(a), -1)
    wts = (width[:, None, None] * w[None, None, :] * np.exp(s)).reshape(len(a), -1)
    return rho, wts


def _angular_rule(x, L, ta, wa):
    """Gauss rule in the polar angle around each point, split at the box corners.

    Returns angles, weights and the distance to the box boundary along each
    angle, all of shape ``(P, 4 * len(ta))``.
    """
    P = len(x)
    corners = np.array([[L, L], [-L, L], [-L, -L], [L, -L]])
    ang = np.arctan2(corners[None, :, 1] - x[:, None, 1], corners[None, :, 0] - x[:, None, 0])
    ang = np.sort(np.mod(ang, 2 * np.pi), axis=1)
    edges = np.concatenate([ang, ang[:, :1] + 2 * np.pi], axis=1)
    lo, hi = edges[:, :-1], edges[:, 1:]
    phi = (lo[..., None] + (hi - lo)[..., None] * ta).reshape(P, -1)
    wphi = ((hi - lo)[..., None] * wa).reshape(P, -1)
    e = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    safe = np.where(np.abs(e) > 1e-300, e, 1.0)
    exits = np.where(np.abs(e) > 1e-300, (np.sign(e) * L - x[:, None, :]) / safe, np.inf)
    return phi, wphi, np.min(exits, axis=-1)


def _pair_sum(kernel, x, y, both):
    vals = kernel(x, y)
    if both:
        vals = vals + kernel(y, x)
    return vals


def exterior_integral(kernel, grid, points=None, both_orderings=True, R_factor=8.0,
                      radial_panels=None, radial_nodes=None, angular_nodes=12, chunk=None):
    """Integrate ``K(x, y) (+ K(y, x))`` over ``y`` outside the box.

    Quadrature is carried out in polar coordinates around each point out to
    radius ``R = R_factor * L``.  Beyond ``R`` the remainder is added in
    closed form from ``kernel.far_field`` when known; otherwise the midpoint
    of the envelope interval ``[0, c sigma R^(-2alpha)/(2alpha)/lam]`` is
    used and its half-width returned.

    Returns
    -------
    values : ndarray of complex, shape (P,)
    half_width : ndarray of float, shape (P,)
    """
    d, L = grid.dimension, grid.half_width
    if points is None:
        points = grid.centers
    points = np.atleast_2d(np.asarray(points, dtype=float))
    R = R_factor * L
    alpha = kernel.order
    orderings = 2.0 if both_orderings else 1.0
    base = orderings * sphere_measure(d) * R ** (-2.0 * alpha) / (2.0 * alpha)
    if kernel.far_field is not None:
        rem = complex(kernel.far_field) * base
        half = 0.0
    else:
        rem = 0.5 * base / kernel.lam
        half = 0.5 * base / kernel.lam
    out = np.empty(len(points), dtype=complex)
    if kernel.homogeneous:
        # exact radial integral of c rho^(-1-2alpha) from the exit distance on
        coeff = orderings * complex(kernel.far_field) / (2.0 * alpha)
        if d == 1:
            x = points[:, 0]
            out = coeff * ((L - x) ** (-2.0 * alpha) + (L + x) ** (-2.0 * alpha))
        else:
            ta, wa = _gauss(4 * angular_nodes)
            for start in range(0, len(points), 4096):
                x = points[start:start + 4096]
                phi, wphi, rexit = _angular_rule(x, L, ta, wa)
                out[start:start + len(x)] = coeff * np.sum(wphi * rexit ** (-2.0 * alpha), axis=1)
        return out, np.zeros(len(points))
    if d == 1:
        panels = radial_panels or 24
        nodes = radial_nodes or 16
        chunk = chunk or 2048
        for start in range(0, len(points), chunk):
            x = points[start:start + chunk, 0]
            total = np.zeros(len(x), dtype=complex)
            for sign in (1.0, -1.0):
                a = L - sign * x
                rho, wts = _radial_rule(a, R, panels, nodes)
                xx = np.broadcast_to(x[:, None], rho.shape)[..., None]
                yy = (x[:, None] + sign * rho)[..., None]
                total += np.sum(wts * _pair_sum(kernel, xx, yy, both_orderings), axis=1)
            out[start:start + chunk] = total
    else:
        panels = radial_panels or 12
        nodes = radial_nodes or 8
        chunk = chunk or 64
        ta, wa = _gauss(angular_nodes)
        for start in range(0, len(points), chunk):
            x = points[start:start + chunk]
            P = len(x)
            phi, wphi, rexit = _angular_rule(x, L, ta, wa)
            e = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
            rho, wr = _radial_rule(rexit.ravel(), R, panels, nodes)
            rho = rho.reshape(P, phi.shape[1], -1)
            wr = wr.reshape(P, phi.shape[1], -1)
            y = x[:, None, None, :] + rho[..., None] * e[:, :, None, :]
            xx = np.broadcast_to(x[:, None, None, :], y.shape)
            vals = _pair_sum(kernel, xx, y, both_orderings)
            out[start:start + P] = np.sum(vals * wr * rho * wphi[..., None], axis=(1, 2))
    if not np.all(np.isfinite(out)):
        raise KernelEvaluationError("exterior quadrature produced non-finite values")
    return out + rem, np.full(len(points), half)


# ---------------------------------------------------------------------------
# weights


def _lattice_remainder(grid, z, M, s):
    """``sum_{|k|_inf > M} |z + 2Lk|^(-s)`` for the homogeneous kernel."""
    L = grid.half_width
    period = 2.0 * L
    if grid.dimension == 1:
        t = z[..., 0] / period
        return period ** (-s) * (special.zeta(s, M + 1 + t) + special.zeta(s, M + 1 - t))
    alpha = (s - 2.0) / 2.0
    I = integrate.quad(lambda t: (1.0 + t * t) ** (-1.0 - alpha), 0.0, 1.0)[0]
    a = (2 * M + 1) * L
    value = period ** (-2.0) * 8.0 * I * a ** (-2.0 * alpha) / (2.0 * alpha)
    return np.full(z.shape[:-1], value)


def _far_coefficient(kernel):
    if kernel.far_field is not None:
        return complex(kernel.far_field)
    return 0.5 * (kernel.lam + 1.0 / kernel.lam)


def _default_images(d):
    return 8 if d == 1 else 3


def _stencil_weights(kernel, grid, near_field, images, image_cutoff):
    """Offset weights ``w(m) = Kt(m h) + Kt(-m h)`` on the stencil lattice."""
    n, d, h = grid.cells_per_dim, grid.dimension, grid.h
    prof = kernel.profile
    c = near_field_factor(d, kernel.order) if near_field == "corrected" else 1.0
    if grid.boundary == "zero_extension":
        m1 = np.arange(2 * n)
        m1 = np.where(m1 >= n, m1 - 2 * n, m1)
        m1[n] = 0  # offset +-n never occurs
        mesh = np.stack(np.meshgrid(*([m1] * d), indexing="ij"), axis=-1)
        w = np.zeros(mesh.shape[:-1], dtype=complex)
        nz = np.any(mesh != 0, axis=-1)
        z = mesh[nz] * h
        vals = prof(z) + prof(-z)
        vals = np.where(_shell_mask(mesh[nz]), c * vals, vals)
        w[nz] = vals
        if d == 1:
            w[n] = 0.0
        else:
            w[n, :] = 0.0
            w[:, n] = 0.0
        return w
    m1 = np.arange(n)
    m1 = np.where(m1 >= (n + 1) // 2, m1 - n, m1)
    mesh = np.stack(np.meshgrid(*([m1] * d), indexing="ij"), axis=-1)
    w = np.zeros(mesh.shape[:-1], dtype=complex)
    if images == "nearest":
        nz = np.any(mesh != 0, axis=-1)
        z = grid.displacement(mesh[nz] * h, 0.0)
        vals = prof(z) + prof(-z)
        mm = np.rint(z / h).astype(int)
        vals = np.where(_shell_mask(mm), c * vals, vals)
        w[nz] = vals
        return w
    M = _default_images(d) if image_cutoff is None else int(image_cutoff)
    ks = np.arange(-M, M + 1)
    for k in np.stack(np.meshgrid(*([ks] * d), indexing="ij"), axis=-1).reshape(-1, d):
        mm = mesh + n * k
        nz = np.any(mm != 0, axis=-1)
        z = mm[nz] * h
        vals = prof(z) + prof(-z)
        vals = np.where(_shell_mask(mm[nz]), c * vals, vals)
        w[nz] += vals
    rem = _lattice_remainder(grid, mesh * h, M, kernel.exponent)
    nz = np.any(mesh != 0, axis=-1)
    w[nz] += 2.0 * _far_coefficient(kernel) * rem[nz]
    return w


def _dense_kernel_matrix(kernel, grid, near_field, images, image_cutoff):
    """Matrix ``Kt_ij`` (zero diagonal) by direct kernel evaluation."""
    N, d, h, n = grid.size, grid.dimension, grid.h, grid.cells_per_dim
    x = grid.centers
    idx = grid.multi_index
    c = near_field_factor(d, kernel.order) if near_field == "corrected" else 1.0
    K = np.zeros((N, N), dtype=complex)
    rows = np.arange(N)
    step = max(1, 2_000_000 // max(N, 1))
    if grid.boundary == "zero_extension" or images == "nearest":
        for i0 in range(0, N, step):
            sl = slice(i0, min(N, i0 + step))
            xi = x[sl, None, :]
            yj = np.broadcast_to(x[None, :, :], (xi.shape[0], N, d))
            mm = idx[sl, None, :] - idx[None, :, :]
            if grid.boundary == "periodic":
                mm = mm - n * np.round(mm / n).astype(int)
                yj = xi - mm * h
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = kernel(np.broadcast_to(xi, yj.shape), yj)
                vals = np.where(_shell_mask(mm), c * vals, vals)
            K[sl] = vals
        K[rows, rows] = 0.0
        return K
    M = _default_images(d) if image_cutoff is None else int(image_cutoff)
    ks = np.arange(-M, M + 1)
    period = 2.0 * grid.half_width
    for i0 in range(0, N, step):
        sl = slice(i0, min(N, i0 + step))
        xi = x[sl, None, :]
        base = idx[sl, None, :] - idx[None, :, :]
        base = base - n * np.round(base / n).astype(int)
        acc = np.zeros((xi.shape[0], N), dtype=complex)
        for k in np.stack(np.meshgrid(*([ks] * d), indexing="ij"), axis=-1).reshape(-1, d):
            mm = base + n * k
            yj = xi - mm * h
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = kernel(np.broadcast_to(xi, yj.shape), yj)
                vals = np.where(np.any(mm != 0, axis=-1), vals, 0.0)
            acc += np.where(_shell_mask(mm), c * vals, vals)
        rem = _lattice_remainder(grid, base * h, M, kernel.exponent)
        acc += _far_coefficient(kernel) * rem
        K[sl] = acc
    K[rows, rows] = 0.0
    return K


# ---------------------------------------------------------------------------
# the operator


class DiscreteOperator:
    """Assembled realisation of the discrete form.

    Use :func:`assemble` to construct.  Instances are treated as immutable;
    the only mutable state is an internal, lock-protected cache of
    factorisations of ``lam + A``.
    """

    def __init__(self, grid, kernel, representation, *, weights=None, matrix=None,
                 tail=None, tail_half_width=None, near_field="corrected", images="lattice"):
        self.grid = grid
        self.kernel = kernel
        self.representation = representation
        self.near_field = near_field
        self.images = images
        N = grid.size
        self.tail = np.zeros(N, dtype=complex) if tail is None else np.asarray(tail, dtype=complex)
        self.tail_half_width = (
            np.zeros(N) if tail_half_width is None else np.asarray(tail_half_width, dtype=float)
        )
        self._lock = threading.Lock()
        self._factor_cache = {}
        hd = grid.cell_volume
        if representation == "dense":
            W = matrix + matrix.T
            self.pair_weights = matrix
            self._dense = hd * (np.diag(W.sum(axis=1)) - W)
            self._dense[np.diag_indices(N)] += self.tail
        elif representation == "stencil":
            self.stencil = weights
            self._stencil_hat = np.fft.fftn(weights)
            if grid.boundary == "periodic":
                total = weights.sum()
                self._symbol = (hd * (total - self._stencil_hat)).ravel()
                self._rowsum = np.full(N, total)
            else:
                ones = np.ones(grid.shape)
                self._rowsum = self._toeplitz_apply(ones).ravel()
        else:
            raise ConfigurationError(f"unknown representation {representation!r}")

    # basic properties -------------------------------------------------

    @property
    def size(self):
        return self.grid.size

    @property
    def shape(self):
        return (self.size, self.size)

    @property
    def periodic(self):
        return self.grid.boundary == "periodic"

    @property
    def has_symbol(self):
        return self.representation == "stencil" and self.periodic

    @property
    def symbol(self):
        """Eigenvalues of a periodic stencil operator in FFT order."""
        if not self.has_symbol:
            raise UnsupportedRepresentationError("symbol requires a periodic stencil operator")
        return self._symbol

    def sector(self, theta=None, theta_fraction=0.9):
        return sector_params(self.kernel.lam, theta=theta, theta_fraction=theta_fraction)

    def describe(self):
        return {
            "grid": self.grid.describe(),
            "kernel": self.kernel.describe(),
            "representation": self.representation,
            "near_field": self.near_field,
            "images": self.images,
            "tail_half_width_max": float(self.tail_half_width.max(initial=0.0)),
        }

    # application ------------------------------------------------------

    def _toeplitz_apply(self, u):
        n = self.grid.cells_per_dim
        pad = [(0, n)] * self.grid.dimension
        U = np.fft.fftn(np.pad(u, pad))
        out = np.fft.ifftn(self._stencil_hat * U)
        return out[tuple(slice(0, n) for _ in range(self.grid.dimension))]

    def matvec(self, u):
        """``A u`` for a flat array (or a stack of flat columns, shape ``(N, k)``)."""
        u = np.asarray(u, dtype=complex)
        if u.ndim == 2:
            return np.column_stack([self.matvec(u[:, k]) for k in range(u.shape[1])])
        if self.representation == "dense":
            return self._dense @ u
        shape = self.grid.shape
        if self.periodic:
            return np.fft.ifftn(self._symbol.reshape(shape) * np.fft.fftn(u.reshape(shape))).ravel()
        conv = self._toeplitz_apply(u.reshape(shape)).ravel()
        return self.grid.cell_volume * (self._rowsum * u - conv) + self.tail * u

    def apply(self, u):
        return GridFunction(self.grid, self.matvec(u.values))

    def form(self, u, v=None):
        """``Q(u, v) = <A u, v>``."""
        uu = u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=complex)
        vv = uu if v is None else (v.values if isinstance(v, GridFunction) else np.asarray(v, dtype=complex))
        return complex(self.grid.cell_volume * np.vdot(vv, self.matvec(uu)))

    def to_dense(self):
        if self.representation == "dense":
            return self._dense.copy()
        N = self.size
        if N > DENSE_LIMIT:
            raise UnsupportedRepresentationError(f"dense materialisation limited to N <= {DENSE_LIMIT}")
        idx = self.grid.multi_index
        mm = idx[:, None, :] - idx[None, :, :]
        mm = np.mod(mm, self.stencil.shape[0])
        W = self.stencil[tuple(mm[..., k] for k in range(self.grid.dimension))]
        hd = self.grid.cell_volume
        A = -hd * W
        A[np.diag_indices(N)] += hd * self._rowsum + self.tail
        return A

    def diagonal(self):
        """Diagonal of ``A``."""
        if self.representation == "dense":
            return np.diag(self._dense).copy()
        return self.grid.cell_volume * self._rowsum + self.tail

    def pair_weight_matrix(self):
        """Symmetrised weights ``W_ij = Kt_ij + Kt_ji`` (zero diagonal)."""
        if self.representation == "dense":
            return self.pair_weights + self.pair_weights.T
        hd = self.grid.cell_volume
        W = -self.to_dense() / hd
        W[np.diag_indices(self.size)] = 0.0
        return W

    # factorisations ---------------------------------------------------

    def factor(self, lam):
        """LU factors of ``lam + A`` (cached per ``lam``)."""
        key = complex(lam)
        with self._lock:
            lu = self._factor_cache.get(key)
        if lu is not None:
            return lu
        M = self.to_dense()
        M[np.diag_indices(self.size)] += key
        lu = linalg.lu_factor(M, check_finite=False)
        with self._lock:
            self._factor_cache.setdefault(key, lu)
            if len(self._factor_cache) > 64:
                self._factor_cache.pop(next(iter(self._factor_cache)))
        return lu


def assemble(spec: KernelSpec, grid: Grid, representation="auto", near_field="corrected",
             images="lattice", image_cutoff=None, tail=True):
    """Assemble the discrete operator of ``spec`` on ``grid``.

    Parameters
    ----------
    spec : KernelSpec
    grid : Grid
    representation : {'auto', 'dense', 'stencil'}
        ``'auto'`` picks the FFT stencil for translation-invariant kernels.
    near_field : {'corrected', 'center'}
        ``'center'`` keeps plain centre collocation on the nearest shell.
    images : {'lattice', 'nearest'}
        Periodic mode only.  ``'lattice'`` sums periodic images with a
        closed-form far-field remainder; ``'nearest'`` uses the torus metric.
    image_cutoff : int, optional
        Number of image shells ``M`` kept explicitly.
    tail : bool
        Include exterior tail weights in zero-extension mode.

    Returns
    -------
    DiscreteOperator
    """
    if spec.dimension != grid.dimension:
        raise ConfigurationError(
            f"kernel dimension {spec.dimension} does not match grid dimension {grid.dimension}"
        )
    if grid.boundary == "zero_extension" and grid.cells_per_dim < 4:
        raise ConfigurationError("zero_extension assembly needs at least 4 cells per dimension")
    if near_field not in ("corrected", "center"):
        raise ConfigurationError(f"unknown near_field mode {near_field!r}")
    if images not in ("lattice", "nearest"):
        raise ConfigurationError(f"unknown images mode {images!r}")
    if representation == "auto":
        representation = "stencil" if spec.translation_invariant else "dense"
    if representation == "stencil" and not spec.translation_invariant:
        raise UnsupportedRepresentationError("stencil representation needs a translation-invariant kernel")
    if representation == "dense" and grid.size > DENSE_LIMIT:
        raise ConfigurationError(f"dense assembly limited to N <= {DENSE_LIMIT}, got {grid.size}")

    tails = halves = None
    if grid.boundary == "zero_extension" and tail:
        tails, halves = exterior_integral(spec, grid)

    if representation == "stencil":
        w = _stencil_weights(spec, grid, near_field, images, image_cutoff)
        if not np.all(np.isfinite(w)):
            raise KernelEvaluationError("kernel produced non-finite stencil weights")
        return DiscreteOperator(grid, spec, "stencil", weights=w, tail=tails,
                                tail_half_width=halves, near_field=near_field, images=images)
    K = _dense_kernel_matrix(spec, grid, near_field, images, image_cutoff)
    if not np.all(np.isfinite(K)):
        bad = np.argwhere(~np.isfinite(K))[0]
        raise KernelEvaluationError(
            f"kernel value not finite at x={grid.centers[bad[0]].tolist()}, "
            f"y={grid.centers[bad[1]].tolist()}"
        )
    return DiscreteOperator(grid, spec, "dense", matrix=K, tail=tails, tail_half_width=halves,
                            near_field=near_field, images=images)


def seminorm(u, alpha, region=None):
    """Discrete Gagliardo seminorm squared by centre collocation.

    ``h^(2d) sum_{i != j} |u_i - u_j|^2 / |x_i - x_j|^(d + 2alpha)`` over the
    cells whose centres lie in ``region`` (a ball-like object with
    ``mask(grid)``), or over the whole grid.
    """
    grid = u.grid
    vals = u.values
    x = grid.centers
    if region is not None:
        sel = np.flatnonzero(region.mask(grid))
        vals, x = vals[sel], x[sel]
    s = grid.dimension + 2.0 * alpha
    total = 0.0
    step = max(1, 1_000_000 // max(len(x), 1))
    for i0 in range(0, len(x), step):
        xi = x[i0:i0 + step]
        z = grid.displacement(xi[:, None, :], x[None, :, :])
        r = np.linalg.norm(z, axis=-1)
        diff = np.abs(vals[i0:i0 + step, None] - vals[None, :]) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            contrib = np.where(r > 0, diff * r ** (-s), 0.0)
        total += contrib.sum()
    return float(grid.cell_volume**2 * total)

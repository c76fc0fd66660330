"""Resolvent solves, fast application, semigroups and mild solutions.

Throughout, ``T_lam = lam (lam + A)^(-1)`` denotes the scaled resolvent.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, expm_multiply, gmres

from .discretize import DiscreteOperator, Grid, GridFunction, assemble
from .errors import ConvergenceError, DomainError, UnsupportedRepresentationError
from .kernels import fractional_kernel, normalization_constant, sector_angle

__all__ = [
    "ResolventQuery",
    "MildSolutionQuery",
    "MildSolution",
    "resolve",
    "resolvent_matrix",
    "apply_fast",
    "semigroup_apply",
    "mild_solution",
    "resolvent_norm_2",
    "lp_norm_lower_bound",
    "lp_norm_bracket",
    "check_sector",
    "METHODS",
]

METHODS = ("auto", "dense_lu", "krylov", "spectral")
RESIDUAL_TOL = 1e-10


def check_sector(op, lam, theta=None):
    """Raise :class:`DomainError` unless ``lam`` lies in the closed sector ``S_theta``.

    Without ``theta`` the open sector ``S_Phi`` of the operator is used.
    """
    lam = complex(lam)
    if lam == 0:
        raise DomainError("lambda = 0 is excluded from every sector")
    phi = sector_angle(op.kernel.lam)
    arg = abs(math.atan2(lam.imag, lam.real))
    if theta is None:
        if arg >= phi:
            raise DomainError(f"|arg lambda| = {arg:.6g} is not below Phi = {phi:.6g}")
        return
    if not 0.0 < theta < phi:
        raise DomainError(f"theta must lie in (0, Phi = {phi:.6g}), got {theta}")
    if arg > theta * (1.0 + 1e-12):
        raise DomainError(f"|arg lambda| = {arg:.6g} exceeds theta = {theta:.6g}")


@dataclass
class ResolventQuery:
    """Solve ``(lam + A) u = f``.

    Parameters
    ----------
    lam : complex
    rhs : GridFunction or ndarray
    method : {'auto', 'dense_lu', 'krylov', 'spectral'}
    theta : float, optional
        Working sector aperture; ``lam`` must satisfy ``|arg lam| <= theta``.
    """

    lam: complex
    rhs: object
    method: str = "auto"
    theta: Optional[float] = None


def _pick_method(op, method):
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}; choose from {METHODS}")
    if method == "auto":
        if op.has_symbol:
            return "spectral"
        return "dense_lu" if op.size <= 4096 else "krylov"
    if method == "spectral" and not op.has_symbol:
        raise UnsupportedRepresentationError("spectral solves need a periodic stencil operator")
    return method


def _residual(op, lam, u, f):
    r = lam * u + op.matvec(u) - f
    fn = np.linalg.norm(f)
    return float(np.linalg.norm(r) / fn) if fn > 0 else float(np.linalg.norm(r))


def _preconditioner(op, lam):
    """Circulant inverse of ``lam + s A_frac`` with the same order."""
    grid = op.grid
    pgrid = Grid(grid.dimension, grid.half_width, grid.cells_per_dim, "periodic")
    frac = assemble(fractional_kernel(grid.dimension, op.kernel.order), pgrid)
    coeff = normalization_constant(grid.dimension, op.kernel.order) / 2.0
    if op.kernel.far_field is not None:
        scale = abs(complex(op.kernel.far_field)) / coeff
    else:
        scale = 1.0 / coeff
    shift = lam + complex(np.mean(op.tail))
    sym = (shift + scale * frac.symbol).reshape(grid.shape)
    shape = grid.shape

    def apply(v):
        return np.fft.ifftn(np.fft.fftn(v.reshape(shape)) / sym).ravel()

    return LinearOperator((op.size, op.size), matvec=apply, dtype=complex)


def _solve_array(op, lam, f, method, maxiter):
    info = {"method": method, "iterations": 0}
    if method == "spectral":
        shape = op.grid.shape
        u = np.fft.ifftn(np.fft.fftn(f.reshape(shape)) / (lam + op.symbol.reshape(shape))).ravel()
    elif method == "dense_lu":
        lu = op.factor(lam)
        u = linalg.lu_solve(lu, f, check_finite=False)
        if _residual(op, lam, u, f) > RESIDUAL_TOL:
            u = u + linalg.lu_solve(lu, f - lam * u - op.matvec(u), check_finite=False)
            info["refined"] = True
    else:
        A = LinearOperator((op.size, op.size), matvec=lambda v: lam * v + op.matvec(v), dtype=complex)
        M = _preconditioner(op, lam)
        counter = {"n": 0}

        def cb(_):
            counter["n"] += 1

        u, _ = gmres(A, f, rtol=1e-13, atol=0.0, restart=60, maxiter=maxiter, M=M,
                     callback=cb, callback_type="pr_norm")
        info["iterations"] = counter["n"]
    info["residual"] = _residual(op, lam, u, f)
    return u, info


def resolve(op: DiscreteOperator, q: ResolventQuery, maxiter=200) -> GridFunction:
    """Solve ``(lam + A) u = f`` and check the relative residual.

    Returns
    -------
    GridFunction
        ``meta`` holds ``residual``, ``iterations``, ``method`` and ``seconds``.

    Raises
    ------
    DomainError
        ``lam`` outside the sector.
    ConvergenceError
        Relative residual above ``1e-10``.
    """
    check_sector(op, q.lam, q.theta)
    method = _pick_method(op, q.method)
    f = q.rhs.values if isinstance(q.rhs, GridFunction) else np.asarray(q.rhs, dtype=complex)
    lam = complex(q.lam)
    t0 = time.perf_counter()
    u, info = _solve_array(op, lam, f, method, maxiter)
    info["seconds"] = time.perf_counter() - t0
    if not info["residual"] <= RESIDUAL_TOL:
        raise ConvergenceError(
            f"{method} solve stopped at relative residual {info['residual']:.3e}",
            best_residual=info["residual"], iterations=info["iterations"],
        )
    info["lambda"] = [lam.real, lam.imag]
    return GridFunction(op.grid, u, meta=info)


def resolvent_matrix(op, lam, scaled=True):
    """Dense ``lam (lam + A)^(-1)`` (or ``(lam + A)^(-1)`` if not ``scaled``)."""
    lam = complex(lam)
    if op.has_symbol:
        N = op.size
        eye = np.eye(N, dtype=complex)
        shape = op.grid.shape
        axes = tuple(range(1, op.grid.dimension + 1))
        cols = eye.reshape((N,) + shape)
        sym = (lam + op.symbol.reshape(shape))
        R = np.fft.ifftn(np.fft.fftn(cols, axes=axes) / sym, axes=axes).reshape(N, N).T
    else:
        R = linalg.lu_solve(op.factor(lam), np.eye(op.size, dtype=complex), check_finite=False)
    return lam * R if scaled else R


def apply_fast(op: DiscreteOperator, u: GridFunction) -> GridFunction:
    """``A u`` by FFT convolution; stencil operators only."""
    if op.representation != "stencil":
        raise UnsupportedRepresentationError("apply_fast needs a translation-invariant stencil operator")
    return GridFunction(op.grid, op.matvec(u.values))


# ---------------------------------------------------------------------------
# semigroup


def semigroup_apply(op: DiscreteOperator, t: float, u0: GridFunction) -> GridFunction:
    """``exp(-tA) u0``.

    Periodic stencil operators use their exact FFT diagonalisation; otherwise
    Pade scaling-and-squaring (``N <= 1024``) or the truncated Taylor action
    of ``expm_multiply`` is used, with a half-step comparison recorded as
    ``meta['accuracy_estimate']``.
    """
    if t < 0:
        raise DomainError("t must be non-negative")
    if t == 0:
        return GridFunction(op.grid, u0.values.copy(), meta={"path": "identity", "accuracy_estimate": 0.0})
    if op.has_symbol:
        shape = op.grid.shape
        v = np.fft.ifftn(np.exp(-t * op.symbol.reshape(shape)) * np.fft.fftn(u0.values.reshape(shape)))
        return GridFunction(op.grid, v.ravel(), meta={"path": "spectral", "accuracy_estimate": 0.0})
    if op.size <= 1024:
        A = op.to_dense()
        full = linalg.expm(-t * A)
        half = linalg.expm(-0.5 * t * A)
        v = full @ u0.values
        w = half @ (half @ u0.values)
        path = "pade"
    else:
        # A is complex symmetric, so A^H x = conj(A conj(x))
        Aop = LinearOperator(op.shape, matvec=lambda x: -op.matvec(x),
                             rmatvec=lambda x: -np.conj(op.matvec(np.conj(x))), dtype=complex)
        tr = -complex(np.sum(op.diagonal()))
        v = expm_multiply(Aop * t, u0.values, traceA=t * tr)
        half = expm_multiply(Aop * (0.5 * t), u0.values, traceA=0.5 * t * tr)
        w = expm_multiply(Aop * (0.5 * t), half, traceA=0.5 * t * tr)
        path = "taylor"
    nv = np.linalg.norm(v)
    est = float(np.linalg.norm(v - w) / nv) if nv > 0 else 0.0
    return GridFunction(op.grid, v, meta={"path": path, "accuracy_estimate": est})


# ---------------------------------------------------------------------------
# mild solutions


@dataclass
class MildSolutionQuery:
    """Forcing samples on a uniform time grid ``t_k = k tau``, ``k = 0..M``.

    Parameters
    ----------
    forcing : ndarray, shape (M + 1, N), or sequence of GridFunction
    horizon : float
        ``T = M tau``.
    r_exponent : float
        Time integrability exponent ``r`` in ``(1, inf)``.
    p_exponent : float
        Space integrability exponent ``p``.
    """

    forcing: object
    horizon: float
    r_exponent: float = 2.0
    p_exponent: float = 2.0

    def samples(self):
        f = self.forcing
        if isinstance(f, (list, tuple)) and f and isinstance(f[0], GridFunction):
            f = np.stack([g.values for g in f])
        f = np.asarray(f, dtype=complex)
        if f.ndim != 2 or f.shape[0] < 2:
            raise DomainError("forcing must have shape (M + 1, N) with M >= 1")
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        if not self.r_exponent > 1:
            raise DomainError("r must exceed 1")
        if not self.p_exponent >= 1:
            raise DomainError("p must be at least 1")
        return f

    @property
    def steps(self):
        return self.samples().shape[0] - 1

    @property
    def tau(self):
        return self.horizon / self.steps


@dataclass
class MildSolution:
    times: np.ndarray
    u: np.ndarray
    du: np.ndarray
    Au: np.ndarray
    norms: dict
    warnings: list = field(default_factory=list)


def _spectral_radius(op, iters=40, seed=0):
    if op.has_symbol:
        return float(np.abs(op.symbol).max())
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.size) + 1j * rng.standard_normal(op.size)
    est = 0.0
    for _ in range(iters):
        w = op.matvec(v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        est = nw / np.linalg.norm(v)
        v = w / nw
    return float(est)


def _phi_functions(z):
    """``exp(z), phi1(z), phi2(z)`` elementwise, stable near ``z = 0``."""
    z = np.asarray(z, dtype=complex)
    e = np.exp(z)
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    p1 = np.where(small, 1 + z / 2 + z * z / 6 + z**3 / 24, (e - 1) / zs)
    p2 = np.where(small, 0.5 + z / 6 + z * z / 24 + z**3 / 120, (e - 1 - z) / zs**2)
    return e, p1, p2


def _bochner(values, tau, p, r, hd):
    space = (hd * np.sum(np.abs(values) ** p, axis=1)) ** (1.0 / p)
    return float((tau * np.sum(space**r)) ** (1.0 / r))


def mild_solution(op: DiscreteOperator, q: MildSolutionQuery) -> MildSolution:
    """Variation-of-constants solution of ``u' + Au = f``, ``u(0) = 0``.

    Each step integrates the piecewise-linear interpolant of the forcing
    exactly:

        u_{k+1} = E u_k + tau [phi1(-tau A) f_k + phi2(-tau A)(f_{k+1} - f_k)],

    with ``E = exp(-tau A)``.  Returns the samples together with the
    discrete ``L^r(L^p)`` norms of ``u'`` (centred differences), ``Au`` and
    ``f``.
    """
    f = q.samples()
    if f.shape[1] != op.size:
        raise DomainError(f"forcing has {f.shape[1]} cells, operator has {op.size}")
    M = f.shape[0] - 1
    tau = q.horizon / M
    notes = []
    rho = _spectral_radius(op)
    if rho * tau > 50:
        notes.append(f"spectral radius * tau = {rho * tau:.3g} > 50: step may be too coarse")
    u = np.zeros_like(f)
    if op.has_symbol:
        shape = op.grid.shape
        axes = tuple(range(1, op.grid.dimension + 1))
        fh = np.fft.fftn(f.reshape((M + 1,) + shape), axes=axes).reshape(M + 1, -1)
        e, p1, p2 = _phi_functions(-tau * op.symbol)
        uh = np.zeros_like(fh)
        for k in range(M):
            uh[k + 1] = e * uh[k] + tau * (p1 * fh[k] + p2 * (fh[k + 1] - fh[k]))
        u = np.fft.ifftn(uh.reshape((M + 1,) + shape), axes=axes).reshape(M + 1, -1)
    elif op.size <= 1024:
        N = op.size
        B = np.zeros((3 * N, 3 * N), dtype=complex)
        B[:N, :N] = -tau * op.to_dense()
        B[:N, N:2 * N] = np.eye(N)
        B[N:2 * N, 2 * N:] = np.eye(N)
        X = linalg.expm(B)
        E, P1, P2 = X[:N, :N], X[:N, N:2 * N], X[:N, 2 * N:]
        for k in range(M):
            u[k + 1] = E @ u[k] + tau * (P1 @ f[k] + P2 @ (f[k + 1] - f[k]))
    else:
        N = op.size

        def aug(v):
            v = np.ravel(v).astype(complex)
            out = np.empty_like(v)
            out[:N] = -tau * op.matvec(v[:N]) + tau * (v[N] * f_df + v[N + 1] * f_lo)
            out[N] = v[N + 1]
            out[N + 1] = 0.0
            return out

        def aug_adjoint(v):
            v = np.ravel(v).astype(complex)
            top = v[:N]
            out = np.empty_like(v)
            out[:N] = -tau * np.conj(op.matvec(np.conj(top)))
            out[N] = tau * np.vdot(f_df, top)
            out[N + 1] = tau * np.vdot(f_lo, top) + v[N]
            return out

        for k in range(M):
            f_lo, f_df = f[k], f[k + 1] - f[k]
            Bop = LinearOperator((N + 2, N + 2), matvec=aug, rmatvec=aug_adjoint, dtype=complex)
            w = np.concatenate([u[k], [0.0, 1.0]])
            u[k + 1] = expm_multiply(Bop, w, traceA=0.0)[:N]
    du = np.gradient(u, tau, axis=0, edge_order=1)
    Au = np.stack([op.matvec(u[k]) for k in range(M + 1)])
    hd = op.grid.cell_volume
    p, r = q.p_exponent, q.r_exponent
    norms = {
        "du": _bochner(du, tau, p, r, hd),
        "Au": _bochner(Au, tau, p, r, hd),
        "f": _bochner(f, tau, p, r, hd),
        "spectral_radius_tau": rho * tau,
    }
    for note in notes:
        warnings.warn(note, RuntimeWarning, stacklevel=2)
    return MildSolution(np.arange(M + 1) * tau, u, du, Au, norms, notes)


# ---------------------------------------------------------------------------
# operator norms


def resolvent_norm_2(op, lam):
    """``||lam (lam + A)^(-1)||_{2 -> 2}``."""
    lam = complex(lam)
    if op.has_symbol:
        return float(np.max(np.abs(lam / (lam + op.symbol))))
    M = op.to_dense()
    M[np.diag_indices(op.size)] += lam
    smin = linalg.svdvals(M, check_finite=False).min()
    return float(abs(lam) / smin)


def _dual(y, p):
    """Vector attaining the ``p``-norm duality pairing with ``y``."""
    a = np.abs(y)
    npow = np.sum(a**p) ** ((p - 1.0) / p)
    with np.errstate(invalid="ignore", divide="ignore"):
        phase = np.where(a > 0, y / np.where(a > 0, a, 1.0), 0.0)
    return phase * a ** (p - 1.0) / npow


def _pnorm(x, p):
    if np.isinf(p):
        return float(np.abs(x).max())
    return float(np.sum(np.abs(x) ** p) ** (1.0 / p))


def lp_norm_lower_bound(T, p, starts=4, iters=60, seed=0):
    """Power-iteration lower bound for ``||T||_{p -> p}`` (dense ``T``).

    Higham's p-norm iteration is run from several starting vectors; the
    largest ratio ``||T x||_p / ||x||_p`` seen is returned, so the value is a
    certified lower bound.
    """
    T = np.asarray(T, dtype=complex)
    if p == 1:
        return float(np.abs(T).sum(axis=0).max())
    if np.isinf(p):
        return float(np.abs(T).sum(axis=1).max())
    q = p / (p - 1.0)
    rng = np.random.default_rng(seed)
    N = T.shape[1]
    cands = [np.ones(N, dtype=complex)]
    j = int(np.argmax(np.abs(T).sum(axis=0)))
    e = np.zeros(N, dtype=complex)
    e[j] = 1.0
    cands.append(e)
    for _ in range(max(0, starts - 2)):
        cands.append(rng.standard_normal(N) + 1j * rng.standard_normal(N))
    best = 0.0
    TH = T.conj().T
    for x in cands:
        x = x / _pnorm(x, p)
        for _ in range(iters):
            y = T @ x
            ny = _pnorm(y, p)
            best = max(best, ny)
            if ny == 0:
                break
            z = TH @ _dual(y, p)
            if _pnorm(z, q) <= np.real(np.vdot(x, z)) * (1 + 1e-14):
                break
            x = _dual(z, q)
            x = x / _pnorm(x, p)
    return float(best)


def lp_norm_bracket(T, p, **kwargs):
    """Return ``(lower, upper, exact)`` for ``||T||_{p -> p}``.

    Exact for ``p`` in ``{1, 2, inf}``.  Otherwise the upper bound comes
    from Riesz-Thorin interpolation between ``p = 2`` and the nearer endpoint.
    """
    T = np.asarray(T, dtype=complex)
    n1 = float(np.abs(T).sum(axis=0).max())
    ninf = float(np.abs(T).sum(axis=1).max())
    if p == 1:
        return n1, n1, True
    if np.isinf(p):
        return ninf, ninf, True
    n2 = float(linalg.svdvals(T, check_finite=False).max())
    if p == 2:
        return n2, n2, True
    lower = lp_norm_lower_bound(T, p, **kwargs)
    if p > 2:
        upper = n2 ** (2.0 / p) * ninf ** (1.0 - 2.0 / p)
    else:
        upper = n1 ** (2.0 / p - 1.0) * n2 ** (2.0 - 2.0 / p)
    return lower, max(upper, lower), False

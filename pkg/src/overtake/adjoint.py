"""Backward solvers for the horizon-T adjoint BSDE

    dp = -H_x(t, u_hat, x_hat, p, h) dt + h dW,   p_T = 0,

along a simulated candidate trajectory.

Both solvers use the same backward Euler scheme, explicit in the adjoint
arguments: on step ``k`` the driver is evaluated at ``(p[k+1], h[k])``.
Conditional expectations given F_{t_k} are replaced by least-squares
projections on polynomials of the candidate state and the declared exogenous
states at ``t_k``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb
from typing import Optional

import numpy as np

from .errors import InputError, LatticeMismatchError, NumericalError, PreconditionError
from .model import hamiltonian_partial_x
from .paths import PathEnsemble
from .stats import roundoff_floor

log = logging.getLogger(__name__)

RANK_RTOL = 1e-10
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class RegressionBasis:
    """Total-degree polynomials in the standardized conditioning features."""

    degree: int = 3
    standardize: bool = True

    def __post_init__(self):
        if self.degree < 0:
            raise InputError("basis degree must be >= 0")

    @staticmethod
    def n_features(dim, degree):
        return comb(dim + degree, degree)

    def design(self, columns, degree=None):
        """Design matrix for one time step; constant features are dropped."""
        degree = self.degree if degree is None else degree
        n = columns[0].shape[0] if columns else 0
        live = []
        for c in columns:
            sd = float(np.std(c))
            if sd <= 1e-14 * max(1.0, float(np.max(np.abs(c)))):
                continue
            live.append((c - np.mean(c)) / sd if self.standardize else c)
        feats = [np.ones(n)]
        for d in range(1, degree + 1):
            for combo in combinations_with_replacement(range(len(live)), d):
                col = live[combo[0]].copy()
                for j in combo[1:]:
                    col *= live[j]
                feats.append(col)
        return np.column_stack(feats)


class _Projector:
    """Orthogonal projection onto the span of one step's design matrix."""

    def __init__(self, basis, columns):
        self.degree = basis.degree
        self.reduced = False
        while True:
            X = basis.design(columns, self.degree)
            q, r = np.linalg.qr(X)
            d = np.abs(np.diag(r))
            if d.min() > RANK_RTOL * d.max() or self.degree == 0:
                break
            self.degree -= 1
            self.reduced = True
        if d.min() <= RANK_RTOL * d.max():
            raise NumericalError("regression design is rank deficient even at degree 0")
        self.q = q
        self.rank = X.shape[1]

    def __call__(self, y):
        return self.q @ (self.q.T @ y)


@dataclass
class AdjointSolution:
    horizon: float
    p: PathEnsemble
    h: PathEnsemble
    solver: str
    diagnostics: dict = field(default_factory=dict)
    # inputs kept for residual diagnostics; never serialized
    model: object = field(default=None, repr=False)
    x_hat: Optional[PathEnsemble] = field(default=None, repr=False)
    u_hat: Optional[PathEnsemble] = field(default=None, repr=False)
    exo: dict = field(default_factory=dict, repr=False)
    lattice_key: tuple = ()

    def __post_init__(self):
        if np.any(self.p.values[:, -1] != 0.0):
            raise NumericalError("terminal condition p_T = 0 violated")

    @property
    def n_steps(self):
        return self.p.grid.n_steps

    def hx(self, k):
        return hamiltonian_partial_x(
            self.model,
            k * self.p.grid.dt,
            self.u_hat.values[:, k],
            self.x_hat.values[:, k],
            self.p.values[:, k + 1],
            self.h.values[:, k],
            {name: v.values[:, k] for name, v in self.exo.items()},
        )


def _prepare(model, x_hat, u_hat, lattice, T, exo):
    n = lattice.grid.index_of(T)
    if n < 1:
        raise InputError("adjoint horizon must contain at least one step")
    if x_hat.n_paths != lattice.n_paths or x_hat.grid.n_steps < n or abs(x_hat.grid.dt - lattice.grid.dt) > 1e-15:
        raise LatticeMismatchError("candidate ensembles do not live on this lattice")
    exo = exo or {}
    missing = [name for name in model.exogenous_names if name not in exo]
    if missing:
        raise InputError(f"exogenous paths {missing} are required; pass the candidate trajectory's exo")
    return (
        n,
        x_hat.truncate(n),
        u_hat.truncate(n),
        {k: v.truncate(n) for k, v in exo.items()},
        lattice.increments[:, :n],
    )


def _features(x_hat, exo, k):
    return [x_hat.values[:, k]] + [v.values[:, k] for v in exo.values()]


def solve_adjoint_lsmc(model, x_hat, u_hat, lattice, T, basis=None, exo=None):
    """Least-squares Monte Carlo backward induction.

    For k = n-1, ..., 0::

        h_k = E[(p_{k+1} - E[p_{k+1} | F_k]) dW_k | F_k] / dt
        p_k = E[p_{k+1} + H_x(t_k, u_k, x_k, p_{k+1}, h_k) dt | F_k]

    Subtracting the projected ``p_{k+1}`` leaves the conditional mean of the
    h-target unchanged and removes most of its variance; when ``p_{k+1}`` lies
    in the basis span, ``h_k`` is exactly zero.
    """
    basis = basis or RegressionBasis()
    n, xh, uh, ex, dW = _prepare(model, x_hat, u_hat, lattice, T, exo)
    dt = lattice.grid.dt
    n_paths = lattice.n_paths
    p = np.zeros((n_paths, n + 1))
    h = np.zeros((n_paths, n + 1))
    r2 = np.ones(n)
    reductions = 0
    for k in range(n - 1, -1, -1):
        proj = _Projector(basis, _features(xh, ex, k))
        reductions += proj.reduced
        nxt = p[:, k + 1]
        h[:, k] = proj((nxt - proj(nxt)) * dW[:, k]) / dt
        target = nxt + hamiltonian_partial_x(
            model, k * dt, uh.values[:, k], xh.values[:, k], nxt, h[:, k],
            {name: v.values[:, k] for name, v in ex.items()},
        ) * dt
        p[:, k] = proj(target)
        r2[k] = _r_squared(target, p[:, k])
    if reductions:
        log.warning("basis degree auto-reduced on %d of %d steps", reductions, n)
    return AdjointSolution(
        horizon=float(T),
        p=PathEnsemble(xh.grid, p),
        h=PathEnsemble(xh.grid, h),
        solver="lsmc",
        diagnostics={"r2": r2, "degree_reductions": reductions, "basis_degree": basis.degree},
        model=model, x_hat=xh, u_hat=uh, exo=ex, lattice_key=lattice.key,
    )


def _r_squared(y, fitted):
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot <= roundoff_floor(y) ** 2 * y.size:
        return 1.0
    return 1.0 - float(np.sum((y - fitted) ** 2)) / ss_tot


def _vanishing_along(model, name, xh, uh, ex, n):
    dt = xh.grid.dt
    for k in range(n):
        v = model.evaluate(name, k * dt, uh.values[:, k], xh.values[:, k],
                           {nm: e.values[:, k] for nm, e in ex.items()})
        if np.any(v != 0.0):
            return False
    return True


def adjoint_free_driver(model, x_hat, u_hat, exo=None, n_steps=None):
    """True when ``f_x`` and ``sigma_x`` vanish along the candidate path."""
    n = x_hat.grid.n_steps if n_steps is None else n_steps
    exo = exo or {}
    return _vanishing_along(model, "f_x", x_hat, u_hat, exo, n) and _vanishing_along(
        model, "sigma_x", x_hat, u_hat, exo, n
    )


def solve_adjoint_explicit(model, x_hat, u_hat, lattice, T, basis=None, exo=None, quadrature="accurate"):
    """Conditional-expectation representation for adjoint-free drivers.

    With ``f_x = sigma_x = 0`` the adjoint is ``p_t = E[int_t^T g_x ds | F_t]``.
    If ``g_x`` is identical across paths at every node the tail integral is
    deterministic: regression is skipped and ``h = 0``.

    ``quadrature="left"`` uses the left Riemann tail ``sum_{j>=k} g_x(t_j) dt``,
    the exact solution of the discrete backward scheme that certificate
    estimates are consistent with. ``"accurate"`` integrates each step by
    8-point Gauss-Legendre in time (deterministic branch, coefficients frozen
    at the step's left node) or by the trapezoid rule (path-dependent branch).
    """
    if quadrature not in ("left", "accurate"):
        raise InputError(f"unknown quadrature {quadrature!r}")
    basis = basis or RegressionBasis()
    n, xh, uh, ex, dW = _prepare(model, x_hat, u_hat, lattice, T, exo)
    if not adjoint_free_driver(model, xh, uh, ex, n):
        raise PreconditionError(
            "explicit solver requires f_x = sigma_x = 0 along the candidate; use the lsmc solver"
        )
    dt = lattice.grid.dt
    n_paths = lattice.n_paths
    gx = np.empty((n_paths, n + 1))
    for k in range(n + 1):
        gx[:, k] = model.evaluate("g_x", k * dt, uh.values[:, k], xh.values[:, k],
                                  {name: v.values[:, k] for name, v in ex.items()})
    deterministic = bool(np.all(gx[:, :n] == gx[0:1, :n]))
    diagnostics = {"deterministic": deterministic, "quadrature": quadrature,
                   "basis_degree": basis.degree, "degree_reductions": 0}

    if deterministic:
        if quadrature == "left":
            step = gx[0, :n] * dt
        else:
            step = _gauss_legendre_steps(model, xh, uh, ex, n, dt)
        col = np.zeros(n + 1)
        col[:n] = np.cumsum(step[::-1])[::-1]
        p = np.broadcast_to(col, (n_paths, n + 1))
        h = np.broadcast_to(np.zeros(n + 1), (n_paths, n + 1))
        diagnostics["r2"] = np.ones(n)
    else:
        if quadrature == "left":
            step = gx[:, :n] * dt
        else:
            step = 0.5 * (gx[:, :n] + gx[:, 1:]) * dt
        tail = np.zeros((n_paths, n + 1))
        tail[:, :n] = np.cumsum(step[:, ::-1], axis=1)[:, ::-1]
        p = np.zeros((n_paths, n + 1))
        h = np.zeros((n_paths, n + 1))
        r2 = np.ones(n)
        reductions = 0
        for k in range(n - 1, -1, -1):
            proj = _Projector(basis, _features(xh, ex, k))
            reductions += proj.reduced
            p[:, k] = proj(tail[:, k])
            r2[k] = _r_squared(tail[:, k], p[:, k])
            nxt = p[:, k + 1]
            h[:, k] = proj((nxt - proj(nxt)) * dW[:, k]) / dt
        diagnostics["r2"] = r2
        diagnostics["degree_reductions"] = reductions
    return AdjointSolution(
        horizon=float(T),
        p=PathEnsemble(xh.grid, p),
        h=PathEnsemble(xh.grid, h),
        solver="explicit",
        diagnostics=diagnostics,
        model=model, x_hat=xh, u_hat=uh, exo=ex, lattice_key=lattice.key,
    )


def _gauss_legendre_steps(model, xh, uh, ex, n, dt):
    out = np.empty(n)
    half = 0.5 * dt
    for k in range(n):
        s = k * dt + half * (1.0 + _GL_NODES)
        u = np.full_like(s, uh.values[0, k])
        x = np.full_like(s, xh.values[0, k])
        e = {name: np.full_like(s, v.values[0, k]) for name, v in ex.items()}
        out[k] = half * float(np.dot(_GL_WEIGHTS, model.evaluate("g_x", s, u, x, e)))
    return out


def resolve_solver(choice, model, x_hat, u_hat, exo=None):
    if choice == "auto":
        return "explicit" if adjoint_free_driver(model, x_hat, u_hat, exo) else "lsmc"
    if choice not in ("lsmc", "explicit"):
        raise InputError(f"unknown solver {choice!r}")
    return choice


def solve_adjoint(model, x_hat, u_hat, lattice, T, solver="auto", basis=None, exo=None, quadrature="accurate"):
    n = lattice.grid.index_of(T)
    kind = resolve_solver(solver, model, x_hat.truncate(n), u_hat.truncate(n),
                          {k: v.truncate(n) for k, v in (exo or {}).items()})
    if kind == "explicit":
        return solve_adjoint_explicit(model, x_hat, u_hat, lattice, T, basis, exo, quadrature=quadrature)
    return solve_adjoint_lsmc(model, x_hat, u_hat, lattice, T, basis, exo)


# ---------------------------------------------------------------- diagnostics


@dataclass
class DiagnosticsReport:
    horizon: float
    mean_residual: np.ndarray
    se_residual: np.ndarray
    rms_residual: np.ndarray
    tolerance: np.ndarray
    flagged_steps: list
    terminal_residual: float
    r2: np.ndarray
    max_abs_z: float

    @property
    def passed(self):
        return not self.flagged_steps and self.terminal_residual == 0.0


def adjoint_diagnostics(sol, lattice, z=3.0):
    """Discrete BSDE residuals ``p_{k+1} - p_k + H_x dt - h_k dW_k``.

    A correct solution leaves per-step residuals that are martingale
    increments, so their cross-path mean is zero up to sampling error. Steps
    whose mean exceeds ``z`` standard errors plus a roundoff floor are flagged.
    """
    if sol.lattice_key and sol.lattice_key != lattice.key:
        raise LatticeMismatchError("adjoint solution was computed on a different lattice")
    n = sol.n_steps
    dt = lattice.grid.dt
    p = sol.p.values
    h = sol.h.values
    dW = lattice.increments
    n_paths = p.shape[0]
    mean = np.empty(n)
    se = np.empty(n)
    rms = np.empty(n)
    tol = np.empty(n)
    for k in range(n):
        drive = sol.hx(k) * dt
        mart = h[:, k] * dW[:, k]
        rho = p[:, k + 1] - p[:, k] + drive - mart
        mean[k] = float(np.mean(rho))
        se[k] = float(np.std(rho, ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else float("inf")
        rms[k] = float(np.sqrt(np.mean(rho**2)))
        tol[k] = z * se[k] + roundoff_floor(p[:, k + 1], p[:, k], drive, mart)
    flagged = [int(k) for k in np.flatnonzero(np.abs(mean) > tol)]
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = np.where(se > 0, np.abs(mean) / se, 0.0)
    return DiagnosticsReport(
        horizon=sol.horizon,
        mean_residual=mean,
        se_residual=se,
        rms_residual=rms,
        tolerance=tol,
        flagged_steps=flagged,
        terminal_residual=float(np.max(np.abs(p[:, n]))),
        r2=np.asarray(sol.diagnostics.get("r2", np.ones(n))),
        max_abs_z=float(np.max(zs)) if n else 0.0,
    )

"""Built-in problems with analytic oracles.

``example1``: dx = u dt + sigma_t dW, x_0 = 0, U = [-1, 1], payoff rate
f_t x with a nonnegative deterministic weight f_t. The candidate u = 1 is
overtaking optimal; the adjoint is p_t^T = int_t^T f_s ds.

``example2``: capital dk = (u - delta k) dt + sigma dW with payoff rate
e^{-rt}(pi_t k - u - u^2/2). Simulated in the variable x = e^{delta t} k, in
which the drift no longer depends on the state. The candidate is u = q - 1
with q_t = e^{(r+delta)t} E[int_t^inf e^{-(r+delta)s} pi_s ds | F_t].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import InputError
from .model import ControlSet, Exogenous, LinearFlags, ModelSpec
from .paths import ControlPolicy

log = logging.getLogger(__name__)


def _zero(t, u, x, exo):
    return 0.0


def _one(t, u, x, exo):
    return 1.0


# ---------------------------------------------------------------- example 1


@dataclass(frozen=True)
class Example1Params:
    rho: float = 1.0
    sigma: float = 1.0
    f_fn: Optional[Callable] = None
    sigma_fn: Optional[Callable] = None
    check_t_max: float = 64.0

    def weight(self):
        if self.f_fn is not None:
            return self.f_fn
        rho = self.rho
        return lambda t: np.exp(-rho * np.asarray(t, dtype=float))

    def diffusion(self):
        if self.sigma_fn is not None:
            return self.sigma_fn
        s = self.sigma
        return lambda t: np.full(np.shape(t), s) if np.ndim(t) else s

    def validate(self):
        if self.f_fn is None and not self.rho > 0:
            raise InputError("example1.rho must be positive")
        ts = np.linspace(0.0, self.check_t_max, 4097)
        fv = np.asarray(self.weight()(ts), dtype=float)
        if not np.all(np.isfinite(fv)) or np.any(fv < 0):
            raise InputError("example1 weight f_t must be finite and nonnegative")
        sv = np.broadcast_to(np.asarray(self.diffusion()(ts), dtype=float), ts.shape)
        if not np.all(np.isfinite(sv)):
            raise InputError("example1 sigma_t must be finite")


class Example1Oracle:
    """Deterministic adjoint and constant-challenger values for example 1."""

    def __init__(self, params, candidate_value=1.0):
        self.params = params
        self.f = params.weight()
        self.candidate_value = float(candidate_value)

    def _integral(self, fn, a, b):
        if b <= a:
            return 0.0
        if self.params.f_fn is None:
            return None
        val, _ = integrate.quad(fn, a, b, limit=500, epsabs=1e-13, epsrel=1e-12)
        return val

    def p(self, t, T):
        """``int_t^T f_s ds`` (zero for ``t >= T``)."""
        t = np.asarray(t, dtype=float)
        if self.params.f_fn is None:
            rho = self.params.rho
            return np.where(t < T, (np.exp(-rho * t) - np.exp(-rho * T)) / rho, 0.0)
        return np.vectorize(lambda s: self._integral(lambda v: float(self.f(v)), s, T))(t)

    def gap_const(self, u_bar, T):
        """``J_T(candidate) - J_T(u_bar)`` for constant controls.

        The expected state gap is ``(c - u_bar) t``, so the value gap is
        ``(c - u_bar) int_0^T f_t t dt``.
        """
        d = self.candidate_value - u_bar
        if self.params.f_fn is None:
            rho = self.params.rho
            moment = (1.0 - (1.0 + rho * T) * math.exp(-rho * T)) / rho**2
        else:
            moment = self._integral(lambda v: float(self.f(v)) * v, 0.0, T)
        return d * moment

    def gamma_const(self, u_bar, T):
        """``int_0^T p_t (u_bar - c) dt`` in continuous time."""
        if self.params.f_fn is None:
            rho = self.params.rho
            ip = (1.0 - math.exp(-rho * T)) / rho**2 - T * math.exp(-rho * T) / rho
        else:
            ip = self._integral(lambda v: float(self.p(v, T)), 0.0, T)
        return (u_bar - self.candidate_value) * ip


def build_example1(params=None, candidate=None):
    params = params or Example1Params()
    params.validate()
    f_w = params.weight()
    s_w = params.diffusion()
    model = ModelSpec(
        f=lambda t, u, x, exo: u,
        sigma=lambda t, u, x, exo: s_w(t),
        g=lambda t, u, x, exo: f_w(t) * x,
        f_x=_zero,
        f_u=_one,
        sigma_x=_zero,
        sigma_u=_zero,
        g_x=lambda t, u, x, exo: f_w(t),
        g_u=_zero,
        control_set=ControlSet.interval(-1.0, 1.0),
        x0=0.0,
        linear_flags=LinearFlags(True, True, True),
        name="example1",
        params={"rho": params.rho, "sigma": params.sigma},
    )
    cand = candidate or ControlPolicy.constant(1.0, label="candidate")
    value = cand.value if cand.kind == "constant" else 1.0
    return model, cand, Example1Oracle(params, value)


# ---------------------------------------------------------------- example 2


@dataclass(frozen=True)
class Example2Params:
    r: float = 0.05
    delta: float = 0.10
    sigma: float = 0.2
    k0: float = 1.0
    u_lo: float = 0.0
    u_hi: float = 2.0
    pi: str = "constant"
    pi_bar: float = 0.3
    theta: float = 0.5
    eta: float = 0.05
    pi_max: float = 1.0
    pi0: Optional[float] = None
    T_q: Optional[float] = None
    convex_planted: bool = False
    linearized: bool = False

    @property
    def rho(self):
        return self.r + self.delta

    @property
    def pi_start(self):
        return self.pi_bar if self.pi0 is None else self.pi0

    def validate(self):
        if not self.r > 0:
            raise InputError("example2.r must be positive")
        if not self.delta > 0:
            raise InputError("example2.delta must be positive")
        if not self.k0 > 0:
            raise InputError("example2.k0 must be positive")
        if not self.u_lo <= self.u_hi:
            raise InputError("example2.u_lo must not exceed example2.u_hi")
        if self.pi not in ("constant", "ou"):
            raise InputError(f"example2.pi must be 'constant' or 'ou', got {self.pi!r}")
        if self.pi_bar < 0:
            raise InputError("example2.pi_bar must be nonnegative")
        if self.pi == "ou":
            if not (self.theta > 0 and self.eta >= 0 and self.pi_max > 0):
                raise InputError("example2 OU needs theta > 0, eta >= 0, pi_max > 0")
            if not 0 <= self.pi_start <= self.pi_max or self.pi_bar > self.pi_max:
                raise InputError("example2 OU start and mean must lie in [0, pi_max]")


class Example2Oracle:
    """Tobin's q, the adjoint identity for H_u and closed-form value gaps."""

    def __init__(self, params, t_q):
        self.params = params
        self.t_q = float(t_q)

    @property
    def q_bar(self):
        return self.params.pi_bar / self.params.rho

    def q(self, t, pi=None):
        """Marginal q, truncated at ``t_q`` for the OU branch.

        For the OU branch the conditional mean of the unclipped process,
        ``pi_bar + (pi_t - pi_bar) e^{-theta (s - t)}``, is integrated in
        closed form over ``[t, t_q]``.
        """
        P = self.params
        if P.pi == "constant":
            shape = np.broadcast_shapes(np.shape(t), np.shape(pi))
            return np.full(shape, self.q_bar) if shape else self.q_bar
        rho, th = P.rho, P.theta
        tau = np.maximum(self.t_q - np.asarray(t, dtype=float), 0.0)
        return P.pi_bar * (1 - np.exp(-rho * tau)) / rho + (np.asarray(pi) - P.pi_bar) * (
            1 - np.exp(-(rho + th) * tau)
        ) / (rho + th)

    def truncation_bound(self, t):
        P = self.params
        if P.pi == "constant":
            return 0.0
        return P.pi_max * math.exp(-P.rho * (self.t_q - t)) / P.rho

    def expected_q_at(self, T, t, pi_t):
        """``E[q_T | F_t]`` using the untruncated OU formula."""
        P = self.params
        if P.pi == "constant":
            return np.full(np.shape(pi_t), self.q_bar) if np.ndim(pi_t) else self.q_bar
        rho, th = P.rho, P.theta
        mean_pi_T = P.pi_bar + (np.asarray(pi_t) - P.pi_bar) * np.exp(-th * (T - t))
        return P.pi_bar / rho + (mean_pi_T - P.pi_bar) / (rho + th)

    def hu(self, t, T, pi_t=None):
        """``H_u(t, u_hat, x_hat, p^T) = -e^{-rT} e^{-delta (T - t)} E[q_T | F_t]``."""
        P = self.params
        eq = self.expected_q_at(T, t, pi_t if pi_t is not None else P.pi_bar)
        return -math.exp(-P.r * T) * np.exp(-P.delta * (T - np.asarray(t))) * eq

    def gamma_bound(self, T, du_max):
        P = self.params
        return math.exp(-P.r * T) * self.q_bar * du_max / P.delta

    def gamma_const(self, u_bar, T):
        """Continuous-time certificate integral for a constant challenger."""
        P = self.params
        u_hat = self.q_bar - 1.0
        return -math.exp(-P.r * T) * self.q_bar * (u_bar - u_hat) * (1 - math.exp(-P.delta * T)) / P.delta


def _geometric(lam, n, dt):
    """``sum_{k<n} e^{-lam k dt}``."""
    z = math.exp(-lam * dt)
    return n if z == 1.0 else (1 - z**n) / (1 - z)


def oracle_gap_example2_const(params, u_bar, T, dt=None, u_hat=None):
    """``J_T(u_hat) - J_T(u_bar)`` for constant productivity and constant controls.

    With ``D = u_hat - u_bar`` the expected capital gap is
    ``D (1 - e^{-delta t}) / delta`` and noise cancels in the payoff mean, so

        gap = (pi D / delta) [A(r) - A(r + delta)] - (D + S) A(r),
        A(lam) = (1 - e^{-lam T}) / lam,   S = (u_hat^2 - u_bar^2) / 2.

    With ``dt`` the same quantity is returned for the Euler scheme in
    ``x = e^{delta t} k`` with left Riemann sums: the expected state gap at
    node ``k`` is ``D sum_{j<k} e^{delta t_j} dt`` and integrals become the
    geometric sums ``G(lam) = sum_{k<n} e^{-lam t_k}``.
    """
    P = params
    if P.pi != "constant":
        raise InputError("the closed-form gap oracle needs constant productivity")
    if u_hat is None:
        u_hat = P.pi_bar / P.rho - 1.0
    D = u_hat - u_bar
    S = 0.5 * (u_hat**2 - u_bar**2)
    r, de, pi = P.r, P.delta, P.pi_bar
    if dt is None:
        A = lambda lam: -math.expm1(-lam * T) / lam
        return (pi * D / de) * (A(r) - A(r + de)) - (D + S) * A(r)
    n = int(round(T / dt))
    a = math.exp(de * dt)
    G = lambda lam: _geometric(lam, n, dt)
    return pi * D * dt**2 / (a - 1.0) * (G(r) - G(r + de)) - (D + S) * dt * G(r)


def example2_gap_quadrature(params, u_bar, T, n=320000):
    """Independent check of the continuous oracle: composite Simpson on the
    closed-form expected payoff gap."""
    P = params
    u_hat = P.pi_bar / P.rho - 1.0
    D = u_hat - u_bar
    t = np.linspace(0.0, T, n + 1)
    dk = D * (1 - np.exp(-P.delta * t)) / P.delta
    rate = np.exp(-P.r * t) * (P.pi_bar * dk - D - 0.5 * (u_hat**2 - u_bar**2))
    return float(integrate.simpson(rate, x=t))


def _ou_step(params):
    th, mean, eta, cap = params.theta, params.pi_bar, params.eta, params.pi_max

    def step(t, value, dW, dt):
        return np.clip(value + th * (mean - value) * dt + eta * dW, 0.0, cap)

    return step


def build_example2(params=None, t_max=32.0, candidate=None):
    """Transformed model, candidate ``q - 1`` and oracle.

    ``t_max`` is the largest certification horizon; the OU q is truncated at
    ``T_q = t_max + 10 / (r + delta)`` unless set explicitly.
    """
    P = params or Example2Params()
    P.validate()
    r, de, sg = P.r, P.delta, P.sigma
    t_q = P.T_q if P.T_q is not None else t_max + 10.0 / P.rho
    oracle = Example2Oracle(P, t_q)

    if P.pi == "constant":
        pi_bar = P.pi_bar
        pi_of = lambda exo: pi_bar
        exogenous = ()
    else:
        pi_of = lambda exo: exo["pi"]
        exogenous = (Exogenous("pi", P.pi_start, _ou_step(P), (0.0, P.pi_max)),)

    quad = 0.0 if P.linearized else (-1.0 if P.convex_planted else 0.5)
    # running cost -u - quad*u^2 ; planted convexity uses +u^2
    def g(t, u, x, exo):
        return np.exp(-r * t) * (np.exp(-de * t) * pi_of(exo) * x - u - quad * u * u)

    def g_u(t, u, x, exo):
        return np.exp(-r * t) * (-1.0 - 2.0 * quad * u)

    def g_x(t, u, x, exo):
        return np.exp(-(r + de) * t) * pi_of(exo)

    model = ModelSpec(
        f=lambda t, u, x, exo: np.exp(de * t) * u,
        sigma=lambda t, u, x, exo: sg * np.exp(de * t),
        g=g,
        f_x=_zero,
        f_u=lambda t, u, x, exo: np.exp(de * t),
        sigma_x=_zero,
        sigma_u=_zero,
        g_x=g_x,
        g_u=g_u,
        control_set=ControlSet.interval(P.u_lo, P.u_hi),
        x0=P.k0,
        exogenous=exogenous,
        linear_flags=LinearFlags(True, True, P.linearized),
        name="example2",
        params={"r": r, "delta": de, "sigma": sg, "pi": P.pi, "pi_bar": P.pi_bar},
    )

    if candidate is None:
        if P.pi == "constant":
            u_hat = oracle.q_bar - 1.0
            if not P.u_lo <= u_hat <= P.u_hi:
                log.warning("candidate q - 1 = %g lies outside [%g, %g]", u_hat, P.u_lo, P.u_hi)
            candidate = ControlPolicy.constant(u_hat, label="candidate")
        else:
            lo_q = float(oracle.q(0.0, 0.0)) - 1.0
            hi_q = float(oracle.q(0.0, P.pi_max)) - 1.0
            if lo_q < P.u_lo or hi_q > P.u_hi:
                log.warning("candidate q - 1 spans [%g, %g], outside [%g, %g]", lo_q, hi_q, P.u_lo, P.u_hi)
            candidate = ControlPolicy.feedback(lambda t, x, exo: oracle.q(t, exo["pi"]) - 1.0, label="candidate")
    return model, candidate, oracle


def capital_model(params=None):
    """Example 2 in the original capital variable (Euler-discretized as is)."""
    P = params or Example2Params()
    P.validate()
    r, de, sg = P.r, P.delta, P.sigma
    pi_bar = P.pi_bar
    return ModelSpec(
        f=lambda t, u, x, exo: u - de * x,
        sigma=lambda t, u, x, exo: sg,
        g=lambda t, u, x, exo: np.exp(-r * t) * (pi_bar * x - u - 0.5 * u * u),
        f_x=lambda t, u, x, exo: -de,
        f_u=_one,
        sigma_x=_zero,
        sigma_u=_zero,
        g_x=lambda t, u, x, exo: np.exp(-r * t) * pi_bar,
        g_u=lambda t, u, x, exo: np.exp(-r * t) * (-1.0 - u),
        control_set=ControlSet.interval(P.u_lo, P.u_hi),
        x0=P.k0,
        linear_flags=LinearFlags(True, True, False),
        name="example2-capital",
    )


def simulate_capital(params, u, lattice):
    """Capital paths ``k`` on ``lattice`` with exponential integration of the
    depreciation term, ``k_{j+1} = e^{-delta dt} (k_j + u_j dt + sigma dW_j)``.

    This is the exact image of the Euler scheme for ``x = e^{delta t} k``.
    ``u`` is an array of control values, one column per step.
    """
    P = params
    dt = lattice.grid.dt
    n = lattice.grid.n_steps
    k = np.empty((lattice.n_paths, n + 1))
    k[:, 0] = P.k0
    decay = math.exp(-P.delta * dt)
    for j in range(n):
        k[:, j + 1] = decay * (k[:, j] + u[:, j] * dt + P.sigma * lattice.increments[:, j])
    return k


# ---------------------------------------------------------------- linear driver


def build_linear_driver(a=-0.5, c=1.0, sigma=0.5, x0=1.0, u=0.0):
    """``dx = (a x + u) dt + sigma dW``, payoff rate ``c x``.

    The adjoint driver ``a p + c`` is deterministic, so
    ``p_t = (c / a)(e^{a (T - t)} - 1)``; see :func:`linear_driver_adjoint`.
    """
    model = ModelSpec(
        f=lambda t, u, x, exo: a * x + u,
        sigma=lambda t, u, x, exo: sigma,
        g=lambda t, u, x, exo: c * x,
        f_x=lambda t, u, x, exo: a,
        f_u=_one,
        sigma_x=_zero,
        sigma_u=_zero,
        g_x=lambda t, u, x, exo: c,
        g_u=_zero,
        control_set=ControlSet.interval(-1.0, 1.0),
        x0=x0,
        linear_flags=LinearFlags(True, True, True),
        name="linear-driver",
        params={"a": a, "c": c, "sigma": sigma},
    )
    return model, ControlPolicy.constant(u, label="candidate")


def linear_driver_adjoint(t, T, a=-0.5, c=1.0):
    t = np.asarray(t, dtype=float)
    return (c / a) * np.expm1(a * (T - t))


# ---------------------------------------------------------------- registry


def planted_gx_fault(model, offset=1.0):
    """Copy of ``model`` whose declared ``g_x`` is off by ``offset``."""
    gx = model.g_x
    return replace(model, g_x=lambda t, u, x, exo: gx(t, u, x, exo) + offset, name=model.name + "-gx-fault")


SCENARIOS = {
    "example1": (Example1Params, build_example1),
    "example2": (Example2Params, build_example2),
}


def default_challengers(name, model, candidate):
    """Challenger specs used when a run config does not list any."""
    if name == "example1":
        return ["const:0", "const:-1", "const:0.5", "sin:1:1", "needle:1:0.5:-0.5"]
    lo, hi = model.control_set.hull
    return [f"const:{lo:g}", f"const:{hi:g}", "const:0.5", "shift:0.5", "shift:-0.5",
            "needle:1:0.5:0.5", "needle:1:0.5:-0.5"]

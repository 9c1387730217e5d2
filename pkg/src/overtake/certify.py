"""Certificate integrals across a horizon sweep and the resulting verdict.

For each horizon ``T`` the adjoint ``(p^T, h^T)`` is solved along the
candidate, and for every challenger ``u``

    gamma(T) = E sum_k H_u(t_k, u_hat_k, x_hat_k, p_{k+1}, h_k) (u_k - u_hat_k) dt
    gap(T)   = J_T(u_hat) - J_T(u)

are estimated on common random numbers. ``H_u`` is always evaluated along the
candidate trajectory; challengers contribute only their control values.
Taking the adjoint at the right node of each step (the same arguments the
backward scheme feeds to the driver) makes ``gap + gamma`` vanish exactly for
affine models, mirroring the Ito product-rule identity in discrete time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adjoint import RegressionBasis, adjoint_diagnostics, resolve_solver, solve_adjoint_explicit, solve_adjoint_lsmc
from .errors import InputError, LatticeMismatchError, NumericalError, PreconditionError
from .model import check_concavity, hamiltonian_partial_u, validate_model
from .paths import Trajectory, check_same_lattice, running_payoff, simulate_forward
from .stats import mean_ci, roundoff_floor

log = logging.getLogger(__name__)

VERDICTS = ("OO-evidence", "WOO-evidence", "inconclusive", "refuted")


@dataclass(frozen=True)
class HorizonSweep:
    horizons: tuple
    dt: float

    def __post_init__(self):
        hs = tuple(float(h) for h in self.horizons)
        if len(hs) < 3:
            raise InputError("a horizon sweep needs at least 3 horizons")
        if any(b <= a for a, b in zip(hs, hs[1:])):
            raise InputError("horizons must be strictly increasing")
        for T in hs:
            k = T / self.dt
            if abs(k - round(k)) > 1e-9 * max(1.0, k) or round(k) < 1:
                raise InputError(f"horizon {T:g} is not a multiple of dt={self.dt:g}")
        object.__setattr__(self, "horizons", hs)

    @property
    def t_max(self):
        return self.horizons[-1]

    def tail(self):
        """Horizons used as the finite surrogate of T -> infinity."""
        m = len(self.horizons)
        size = min(m, max(2, math.ceil(m / 3) + 1))
        return self.horizons[-size:]


@dataclass
class CertificateEntry:
    challenger: str
    T: float
    gamma: float
    gamma_ci: float
    gap: float
    gap_ci: float

    @property
    def slack(self):
        """``gap - gamma_tilde`` with ``gamma_tilde = -gamma``."""
        return self.gap + self.gamma

    @property
    def tolerance(self):
        return 2.0 * (self.gap_ci + self.gamma_ci) + roundoff_floor(self.gap, self.gamma, factor=1e5)


@dataclass
class BoundCheck:
    passed: bool
    violations: list


@dataclass
class EqualityCheck:
    passed: bool
    violations: list
    max_abs_sum: float


@dataclass
class Trend:
    challenger: str
    tail_horizons: tuple
    tail_mean: float
    slope: float
    status: str  # nonpositive | vanishing | positive
    sup_ok: bool
    inf_ok: bool
    bounded_away: bool
    decay_rate: float = float("nan")


@dataclass
class CertificateReport:
    entries: list
    trends: dict
    verdict: str
    solver: str
    horizons: tuple
    challengers: list
    candidate: str
    bound: Optional[BoundCheck] = None
    equality: Optional[EqualityCheck] = None
    linear_verified: bool = False
    concavity: object = None
    validation: object = None
    adjoint: dict = field(default_factory=dict)
    clamps: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def series(self, challenger):
        return [e for e in self.entries if e.challenger == challenger]

    def entry(self, challenger, T):
        for e in self.entries:
            if e.challenger == challenger and abs(e.T - T) < 1e-12:
                return e
        raise KeyError((challenger, T))


# ---------------------------------------------------------------- estimators


def _candidate_hu(model, candidate, adjoint, n):
    dt = candidate.grid.dt
    out = np.empty((candidate.n_paths, n))
    for k in range(n):
        out[:, k] = hamiltonian_partial_u(
            model, k * dt, candidate.u.values[:, k], candidate.x.values[:, k],
            adjoint.p.values[:, k + 1], adjoint.h.values[:, k], candidate.exo_at(k),
        )
    return out


def _as_trajectory(model, policy, lattice, T, workers):
    if isinstance(policy, Trajectory):
        return policy
    return simulate_forward(model, policy, lattice, t_end=T, workers=workers)


def _check_horizon(traj, lattice, T, what):
    if traj.lattice_key != lattice.key:
        raise LatticeMismatchError(f"{what} was simulated on a different lattice")
    n = lattice.grid.index_of(T)
    if traj.grid.n_steps < n:
        raise LatticeMismatchError(f"{what} does not reach T={T:g}")
    return n


def gamma_samples(model, candidate, adjoint, challenger, lattice, T):
    n = _check_horizon(candidate, lattice, T, "candidate")
    if abs(adjoint.horizon - T) > 1e-9 * max(1.0, T):
        raise LatticeMismatchError(f"adjoint horizon {adjoint.horizon:g} != T={T:g}")
    if adjoint.lattice_key and adjoint.lattice_key != lattice.key:
        raise LatticeMismatchError("adjoint was solved on a different lattice")
    return _gamma_path_sums(_candidate_hu(model, candidate, adjoint, n), candidate, challenger, lattice, T)


def _gamma_path_sums(hu, candidate, challenger, lattice, T):
    n = _check_horizon(challenger, lattice, T, "challenger")
    du = challenger.u.values[:, :n] - candidate.u.values[:, :n]
    return np.sum(hu * du, axis=1) * lattice.grid.dt


def estimate_gamma(model, candidate, adjoint, challenger, lattice, T, workers=1):
    """Certificate integral for one challenger at horizon ``T`` with 95% CI.

    ``candidate`` is the simulated candidate trajectory; ``challenger`` is a
    policy or a trajectory on the same lattice.
    """
    ch = _as_trajectory(model, challenger, lattice, T, workers)
    return mean_ci(gamma_samples(model, candidate, adjoint, ch, lattice, T))


def gap_samples(model, candidate, challenger, lattice, T):
    n = _check_horizon(candidate, lattice, T, "candidate")
    _check_horizon(challenger, lattice, T, "challenger")
    check_same_lattice(candidate, challenger)
    return running_payoff(model, candidate, n) - running_payoff(model, challenger, n)


def estimate_gap(model, candidate, challenger, lattice, T, workers=1):
    """Paired estimate of ``J_T(candidate) - J_T(challenger)`` with 95% CI."""
    cand = _as_trajectory(model, candidate, lattice, T, workers)
    ch = _as_trajectory(model, challenger, lattice, T, workers)
    return mean_ci(gap_samples(model, cand, ch, lattice, T))


def check_gap_bound(entries):
    """``gap >= -gamma`` within two CI half-widths (plus roundoff) everywhere.

    Under concavity of the Hamiltonian this is the finite-horizon bound the
    sufficiency argument rests on; violations point at a non-concave model or
    a solver error.
    """
    bad = [(e.challenger, e.T, e.slack) for e in entries if e.slack < -e.tolerance]
    return BoundCheck(passed=not bad, violations=bad)


def check_linear_equality(entries, model, linear_verified=None):
    """``|gap + gamma| <= 2 (gap_ci + gamma_ci)`` (plus roundoff) everywhere.

    Only meaningful for models affine in ``(u, x)``; ``linear_verified`` is
    the outcome of ``validate_model`` and is recomputed when omitted.
    """
    if not model.linear_flags.all:
        raise PreconditionError(f"model {model.name!r} is not declared affine in (u, x)")
    if linear_verified is None:
        linear_verified = validate_model(model, raise_on_failure=False).linear_verified
    if not linear_verified:
        raise PreconditionError(f"model {model.name!r} failed the affinity check")
    bad = [(e.challenger, e.T, e.slack) for e in entries if abs(e.slack) > e.tolerance]
    worst = max((abs(e.slack) for e in entries), default=0.0)
    return EqualityCheck(passed=not bad, violations=bad, max_abs_sum=worst)


# ---------------------------------------------------------------- verdict


def fit_trend(challenger, entries, tail):
    pts = [e for e in entries if any(abs(e.T - T) < 1e-12 for T in tail)]
    pts.sort(key=lambda e: e.T)
    Ts = np.array([e.T for e in pts])
    g = np.array([e.gamma for e in pts])
    ci = np.array([e.gamma_ci for e in pts])
    floor = np.array([roundoff_floor(e.gamma, e.gap, factor=1e5) for e in pts])
    upper = g + ci + floor
    lower = g - ci - floor
    slope = float(np.polyfit(Ts, g, 1)[0]) if len(pts) >= 2 else 0.0
    vanishing = bool(
        len(pts) >= 2 and np.all(lower > 0) and np.all(upper[1:] < lower[:-1])
    )
    rate = float("nan")
    if len(pts) >= 2 and np.all(g > 0):
        rate = float(-np.polyfit(Ts, np.log(g), 1)[0])
    if np.max(upper) <= 0:
        status = "nonpositive"
    elif vanishing:
        status = "vanishing"
    else:
        status = "positive"
    return Trend(
        challenger=challenger,
        tail_horizons=tuple(float(t) for t in Ts),
        tail_mean=float(np.mean(g)),
        slope=slope,
        status=status,
        sup_ok=bool(np.max(upper) <= 0 or vanishing),
        inf_ok=bool(np.min(upper) <= 0 or vanishing),
        bounded_away=bool(np.min(lower) > 0 and not vanishing),
        decay_rate=rate,
    )


def decide(trends, linear_verified):
    """Finite-horizon surrogate of the limsup/liminf conditions.

    A challenger supports the limsup condition when its tail upper confidence
    bounds are all non-positive or when the tail is positive but strictly
    decreasing beyond its CIs (evidence of decay to zero). The liminf version
    only needs one non-positive upper bound. ``refuted`` requires a
    linear-verified model, where the conditions are also necessary.
    """
    ts = list(trends.values())
    if linear_verified and any(t.bounded_away for t in ts):
        return "refuted"
    if all(t.sup_ok for t in ts):
        return "OO-evidence"
    if all(t.inf_ok for t in ts):
        return "WOO-evidence"
    return "inconclusive"


# ---------------------------------------------------------------- pipeline


def run_certification(
    model,
    candidate,
    challengers,
    sweep,
    lattice,
    solver="auto",
    basis=None,
    *,
    workers=1,
    validation=None,
    concavity=None,
    quadrature="left",
):
    """Full certificate over a horizon sweep.

    ``candidate`` is a policy; ``challengers`` maps ids to policies (a list of
    policies is keyed by their labels). Validation failures are raised;
    the concavity check is run and recorded but does not gate.
    """
    basis = basis or RegressionBasis()
    if not isinstance(challengers, dict):
        challengers = {c.label: c for c in challengers}
    if not challengers:
        raise InputError("at least one challenger is required")
    if abs(sweep.dt - lattice.grid.dt) > 1e-12 or lattice.grid.t_end < sweep.t_max * (1 - 1e-12):
        raise InputError("lattice grid does not cover the horizon sweep")

    warnings = []
    if validation is None:
        validation = validate_model(model, raise_on_failure=True)
    if concavity is None:
        concavity = check_concavity(model)
    if not concavity.passed:
        warnings.append(f"concavity check failed (worst eigenvalue {concavity.worst_eigenvalue:.3e}); "
                        "sufficiency argument does not apply")
    linear_verified = bool(validation.linear_verified)

    T_max = sweep.t_max
    cand = simulate_forward(model, candidate, lattice, t_end=T_max, workers=workers)
    kind = resolve_solver(solver, model, cand.x, cand.u, cand.exo)
    log.info("certifying %s with %s solver over %s", candidate.label, kind, sweep.horizons)
    non_markov = [e.name for e in model.exogenous if not e.markov]
    if kind == "lsmc" and non_markov:
        warnings.append(f"exogenous {non_markov} not Markov in its current value; "
                        "regression adjoint is an approximation")

    entries, adj_info, failures = [], {}, {}
    clamps = {cid: 0 for cid in challengers}
    for T in sweep.horizons:
        n = lattice.grid.index_of(T)
        try:
            if kind == "explicit":
                sol = solve_adjoint_explicit(model, cand.x, cand.u, lattice, T, basis, cand.exo, quadrature=quadrature)
            else:
                sol = solve_adjoint_lsmc(model, cand.x, cand.u, lattice, T, basis, cand.exo)
            diag = adjoint_diagnostics(sol, lattice)
            hu = _candidate_hu(model, cand, sol, n)
            adj_info[T] = {
                "p0_mean": float(np.mean(sol.p.values[:, 0])),
                "terminal_residual": diag.terminal_residual,
                "max_abs_mean_residual": float(np.max(np.abs(diag.mean_residual))),
                "flagged_steps": len(diag.flagged_steps),
                "min_r2": float(np.min(diag.r2)),
                "degree_reductions": int(sol.diagnostics.get("degree_reductions", 0)),
            }
            del sol
            for cid, policy in challengers.items():
                ch = simulate_forward(model, policy, lattice, t_end=T, workers=workers)
                if T == T_max:
                    clamps[cid] = ch.clamped
                g, gci = mean_ci(_gamma_path_sums(hu, cand, ch, lattice, T))
                d, dci = mean_ci(gap_samples(model, cand, ch, lattice, T))
                entries.append(CertificateEntry(cid, float(T), g, gci, d, dci))
        except (NumericalError, PreconditionError) as exc:
            failures[T] = str(exc)
            warnings.append(f"horizon {T:g} failed: {exc}")
            log.error("horizon %g failed: %s", T, exc)

    for cid, c in clamps.items():
        if c:
            warnings.append(f"challenger {cid} was clamped to the control hull on {c} values")
    if cand.clamped:
        warnings.append(f"candidate was clamped to the control hull on {cand.clamped} values")

    bound = check_gap_bound(entries)
    if not bound.passed and concavity.passed:
        warnings.append(f"gap bound violated at {len(bound.violations)} points despite concavity pass")
    equality = None
    if linear_verified:
        equality = check_linear_equality(entries, model, linear_verified=True)

    tail = sweep.tail()
    trends = {}
    for cid in challengers:
        series = [e for e in entries if e.challenger == cid]
        if any(T not in {e.T for e in series} for T in tail):
            continue
        trends[cid] = fit_trend(cid, series, tail)
    verdict = decide(trends, linear_verified) if len(trends) == len(challengers) else "inconclusive"
    if failures:
        verdict = "inconclusive" if verdict != "refuted" else verdict

    return CertificateReport(
        entries=entries,
        trends=trends,
        verdict=verdict,
        solver=kind,
        horizons=sweep.horizons,
        challengers=list(challengers),
        candidate=candidate.label,
        bound=bound,
        equality=equality,
        linear_verified=linear_verified,
        concavity=concavity,
        validation=validation,
        adjoint=adj_info,
        clamps=dict(clamps, candidate=cand.clamped),
        failures=failures,
        warnings=warnings,
    )


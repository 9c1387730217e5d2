"""Time grids, Brownian lattices, control policies and Euler-Maruyama paths."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InputError, LatticeMismatchError, NumericalError
from .stats import mean_ci

log = logging.getLogger(__name__)

NODE_RTOL = 1e-9
BLOWUP_GUARD = 1e12
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class TimeGrid:
    t_end: float
    n_steps: int

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InputError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not (np.isfinite(self.t_end) and self.t_end > 0):
            raise InputError(f"t_end must be positive, got {self.t_end}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "t_end", float(self.t_end))

    @classmethod
    def from_dt(cls, dt, t_end):
        n = t_end / dt
        k = int(round(n))
        if k < 1 or abs(n - k) > NODE_RTOL * max(1.0, n):
            raise InputError(f"dt={dt} does not divide the horizon {t_end}")
        return cls(k * dt, k)

    @property
    def dt(self):
        return self.t_end / self.n_steps

    @property
    def nodes(self):
        return np.arange(self.n_steps + 1) * self.dt

    def time(self, k):
        return k * self.dt

    def index_of(self, t):
        """Node index of ``t``; raises if ``t`` is not a grid node."""
        k = t / self.dt
        i = int(round(k))
        if abs(k - i) > NODE_RTOL * max(1.0, k) or not 0 <= i <= self.n_steps:
            raise InputError(f"T={t} is not a node of the grid (dt={self.dt}, t_end={self.t_end})")
        return i

    def truncate(self, n_steps):
        if not 1 <= n_steps <= self.n_steps:
            raise InputError(f"cannot truncate a {self.n_steps}-step grid to {n_steps} steps")
        return TimeGrid(n_steps * self.dt, n_steps)


@dataclass(frozen=True)
class PathEnsemble:
    """``values[i, k]`` is the value on path ``i`` at node ``k``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[1] != self.grid.n_steps + 1:
            raise InputError(f"ensemble shape {v.shape} inconsistent with {self.grid.n_steps}-step grid")
        if not np.all(np.isfinite(v)):
            raise NumericalError("ensemble contains NaN or Inf entries")

    @property
    def n_paths(self):
        return self.values.shape[0]

    def truncate(self, n_steps):
        return PathEnsemble(self.grid.truncate(n_steps), self.values[:, : n_steps + 1])


def _chunks(n, workers):
    workers = max(1, min(int(workers), n))
    edges = np.linspace(0, n, workers + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _run_chunks(fn, n, workers):
    parts = _chunks(n, workers)
    if len(parts) == 1:
        fn(parts[0])
        return
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        for fut in [pool.submit(fn, s) for s in parts]:
            fut.result()


@dataclass(frozen=True)
class BrownianLattice:
    """Brownian increments, one counter-based Philox stream per path.

    Path ``i`` draws from ``Philox(key=(seed, i))``; increments are a pure
    function of ``(seed, i, k)``, hence independent of worker count, and a
    longer grid with the same ``dt`` extends a shorter one column by column.
    """

    seed: int
    n_paths: int
    grid: TimeGrid
    increments: np.ndarray

    @property
    def dt(self):
        return self.grid.dt

    @property
    def key(self):
        return (self.seed, self.n_paths, round(self.grid.dt, 15))

    def truncate(self, n_steps):
        return BrownianLattice(self.seed, self.n_paths, self.grid.truncate(n_steps), self.increments[:, :n_steps])


def path_stream(seed, path):
    return np.random.Generator(np.random.Philox(key=[int(seed) & _MASK64, int(path)]))


def make_lattice(seed, n_paths, grid, workers=1):
    if int(n_paths) < 1:
        raise InputError("n_paths must be >= 1")
    n_paths = int(n_paths)
    inc = np.empty((n_paths, grid.n_steps))
    scale = np.sqrt(grid.dt)

    def fill(rows):
        for i in range(rows.start, rows.stop):
            inc[i] = path_stream(seed, i).standard_normal(grid.n_steps) * scale

    _run_chunks(fill, n_paths, workers)
    return BrownianLattice(int(seed), n_paths, grid, inc)


# ---------------------------------------------------------------- policies


@dataclass(frozen=True)
class ControlPolicy:
    """A control process evaluated step by step along simulated paths.

    ``constant`` holds ``value``; ``deterministic`` calls ``fn(t)``;
    ``feedback`` calls ``fn(t, x, exo)``; ``tabulated`` reads column ``k``
    of ``table``.
    """

    kind: str
    value: float = 0.0
    fn: Optional[Callable] = None
    table: Optional[PathEnsemble] = None
    label: str = ""

    @classmethod
    def constant(cls, value, label=None):
        return cls("constant", value=float(value), label=label or f"const:{float(value):g}")

    @classmethod
    def deterministic(cls, fn, label="deterministic"):
        return cls("deterministic", fn=fn, label=label)

    @classmethod
    def feedback(cls, fn, label="feedback"):
        return cls("feedback", fn=fn, label=label)

    @classmethod
    def tabulated(cls, table, label="tabulated"):
        return cls("tabulated", table=table, label=label)

    def raw(self, k, t, x, exo, rows=slice(None)):
        n = x.shape[0]
        if self.kind == "constant":
            return np.full(n, self.value)
        if self.kind == "deterministic":
            return np.broadcast_to(np.asarray(self.fn(t), dtype=float), (n,)).copy()
        if self.kind == "feedback":
            return np.broadcast_to(np.asarray(self.fn(t, x, exo), dtype=float), (n,)).copy()
        if self.kind == "tabulated":
            return np.array(self.table.values[rows, k], dtype=float)
        raise InputError(f"unknown policy kind {self.kind!r}")


def needle(base, t0, width, height, label=None):
    """``base`` plus ``height`` on ``[t0, t0 + width)``."""

    def fn(t, x, exo):
        bump = height if t0 <= t < t0 + width else 0.0
        return _policy_value(base, t, x, exo) + bump

    return ControlPolicy.feedback(fn, label or f"needle:{t0:g}:{width:g}:{height:g}")


def shifted(base, delta, label=None):
    return ControlPolicy.feedback(
        lambda t, x, exo: _policy_value(base, t, x, exo) + delta, label or f"shift:{delta:g}"
    )


def _policy_value(policy, t, x, exo):
    if policy.kind == "tabulated":
        raise InputError("tabulated policies cannot be perturbed by time")
    return policy.raw(None, t, x, exo)


# ---------------------------------------------------------------- simulation


@dataclass
class Trajectory:
    """Forward simulation output on one lattice."""

    x: PathEnsemble
    u: PathEnsemble
    exo: dict
    lattice_key: tuple
    clamped: int = 0
    label: str = ""

    @property
    def grid(self):
        return self.x.grid

    @property
    def n_paths(self):
        return self.x.n_paths

    def exo_at(self, k):
        return {name: ens.values[:, k] for name, ens in self.exo.items()}

    def truncate(self, n_steps):
        return Trajectory(
            self.x.truncate(n_steps),
            self.u.truncate(n_steps),
            {k: v.truncate(n_steps) for k, v in self.exo.items()},
            self.lattice_key,
            self.clamped,
            self.label,
        )

    @property
    def clamp_rate(self):
        return self.clamped / self.u.values.size


def simulate_forward(model, policy, lattice, t_end=None, workers=1, blowup=BLOWUP_GUARD):
    """Euler-Maruyama with left-endpoint coefficients.

    ``x[k+1] = x[k] + f(t_k, u_k, x_k) dt + sigma(t_k, u_k, x_k) dW_k``;
    exogenous processes advance on the same increments. Policy values outside
    the control hull are clamped and counted.
    """
    n = lattice.grid.n_steps if t_end is None else lattice.grid.index_of(t_end)
    if n < 1:
        raise InputError("simulation horizon must contain at least one step")
    grid = lattice.grid.truncate(n)
    dt = grid.dt
    n_paths = lattice.n_paths
    xs = np.empty((n_paths, n + 1))
    us = np.empty((n_paths, n + 1))
    exos = {e.name: np.empty((n_paths, n + 1)) for e in model.exogenous}
    clamped = np.zeros(n_paths, dtype=np.int64)
    lo, hi = model.control_set.hull

    def run(rows):
        m = rows.stop - rows.start
        x = np.full(m, float(model.x0))
        exo = {e.name: np.full(m, float(e.initial)) for e in model.exogenous}
        for k in range(n + 1):
            t = k * dt
            xs[rows, k] = x
            for name, v in exo.items():
                exos[name][rows, k] = v
            u = policy.raw(k, t, x, exo, rows)
            out = (u < lo) | (u > hi)
            if out.any():
                clamped[rows] += out
                u = np.clip(u, lo, hi)
            us[rows, k] = u
            if k == n:
                break
            dw = lattice.increments[rows, k]
            x = x + model.evaluate("f", t, u, x, exo) * dt + model.evaluate("sigma", t, u, x, exo) * dw
            bad = ~(np.abs(x) <= blowup)
            if bad.any():
                i = rows.start + int(np.flatnonzero(bad)[0])
                raise NumericalError(f"state blow-up on path {i} at step {k + 1} (|x| > {blowup:g})")
            if model.exogenous:
                exo = {e.name: np.asarray(e.step(t, exo[e.name], dw, dt), dtype=float) for e in model.exogenous}

    _run_chunks(run, n_paths, workers)
    total = int(clamped.sum())
    if total:
        log.warning("policy %s clamped %d of %d control values", policy.label, total, us.size)
    return Trajectory(
        PathEnsemble(grid, xs),
        PathEnsemble(grid, us),
        {name: PathEnsemble(grid, v) for name, v in exos.items()},
        lattice.key,
        total,
        policy.label,
    )


def check_same_lattice(*trajectories):
    keys = {tr.lattice_key for tr in trajectories}
    if len(keys) > 1:
        raise LatticeMismatchError(f"trajectories come from different lattices: {sorted(keys)}")


def running_payoff(model, traj, n_steps):
    """Per-path left Riemann sum of ``g`` over the first ``n_steps`` steps."""
    dt = traj.grid.dt
    acc = np.zeros(traj.n_paths)
    for k in range(n_steps):
        acc += model.evaluate("g", k * dt, traj.u.values[:, k], traj.x.values[:, k], traj.exo_at(k)) * dt
    return acc


def estimate_value(model, policy, lattice, T, workers=1):
    """Monte Carlo estimate of ``E int_0^T g dt`` with a 95% CI half-width."""
    if T > lattice.grid.t_end * (1 + NODE_RTOL):
        raise InputError(f"T={T} exceeds the lattice horizon {lattice.grid.t_end}")
    n = lattice.grid.index_of(T)
    if isinstance(policy, Trajectory):
        traj = policy
    else:
        traj = simulate_forward(model, policy, lattice, t_end=T, workers=workers)
    return mean_ci(running_payoff(model, traj, n))

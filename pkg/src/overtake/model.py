"""Problem data, the Hamilton-Pontryagin function and numerical model checks.

Coefficient functions share the signature ``fn(t, u, x, exo)`` where ``t`` is
a scalar or array of times, ``u`` and ``x`` are arrays of controls and states
and ``exo`` maps exogenous process names to arrays of their current values.
They must broadcast elementwise so that one call evaluates a whole
cross-section of paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Optional

import numpy as np

from .errors import InputError, ModelError, ModelValidationError

Coefficient = Callable[..., np.ndarray]

FD_STEP = 1e-5
FD_RTOL = 1e-5
CURVATURE_STEP = 1e-3
CURVATURE_TOL = 1e-6


@dataclass(frozen=True)
class ControlSet:
    kind: str
    lo: float = float("nan")
    hi: float = float("nan")
    points: tuple = ()

    def __post_init__(self):
        if self.kind == "interval":
            if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.lo > self.hi:
                raise InputError(f"invalid control interval [{self.lo}, {self.hi}]")
        elif self.kind == "finite":
            pts = tuple(float(v) for v in self.points)
            if not pts or any(b <= a for a, b in zip(pts, pts[1:])):
                raise InputError("finite control set must be nonempty and strictly increasing")
            object.__setattr__(self, "points", pts)
        else:
            raise InputError(f"unknown control set kind {self.kind!r}")

    @classmethod
    def interval(cls, lo, hi):
        return cls("interval", float(lo), float(hi))

    @classmethod
    def finite(cls, points):
        return cls("finite", points=tuple(points))

    @property
    def hull(self):
        """Interval hull, the convex set on which concavity is checked."""
        if self.kind == "interval":
            return self.lo, self.hi
        return self.points[0], self.points[-1]

    def clamp(self, u):
        lo, hi = self.hull
        return np.clip(u, lo, hi)


@dataclass(frozen=True)
class Exogenous:
    """Scalar exogenous process driven by the model's Brownian motion.

    ``step(t, value, dW, dt)`` advances all paths by one grid step, so the
    process is a functional of the Brownian path up to ``t``.
    ``sample_range`` bounds the values drawn by the model checks. Set
    ``markov=False`` when the step depends on more than the current value;
    regression on the current value is then only an approximation.
    """

    name: str
    initial: float
    step: Callable[[float, np.ndarray, np.ndarray, float], np.ndarray]
    sample_range: tuple = (0.0, 1.0)
    markov: bool = True


class LinearFlags(NamedTuple):
    f: bool = False
    sigma: bool = False
    g: bool = False

    @property
    def all(self):
        return self.f and self.sigma and self.g


@dataclass(frozen=True)
class ModelSpec:
    f: Coefficient
    sigma: Coefficient
    g: Coefficient
    f_x: Coefficient
    f_u: Coefficient
    sigma_x: Coefficient
    sigma_u: Coefficient
    g_x: Coefficient
    g_u: Coefficient
    control_set: ControlSet
    x0: float
    exogenous: tuple = ()
    linear_flags: LinearFlags = LinearFlags()
    name: str = "model"
    params: Mapping = field(default_factory=dict)

    @property
    def exogenous_names(self):
        return tuple(e.name for e in self.exogenous)

    def evaluate(self, which, t, u, x, exo=None):
        return _evaluate(getattr(self, which), which, t, u, x, exo)


def _evaluate(fn, name, t, u, x, exo):
    u = np.asarray(u, dtype=float)
    x = np.asarray(x, dtype=float)
    try:
        out = fn(t, u, x, exo if exo is not None else {})
    except Exception as exc:  # coefficient code is user-supplied
        raise ModelError(f"evaluation of {name} failed: {exc}") from exc
    shape = np.broadcast_shapes(np.shape(t), u.shape, x.shape)
    out = np.broadcast_to(np.asarray(out, dtype=float), shape)
    if not np.all(np.isfinite(out)):
        raise ModelError(f"{name} returned non-finite values")
    return out


def hamiltonian(model, t, u, x, p, h, exo=None):
    """``p*f + h*sigma + g`` at ``(t, u, x)``."""
    return (
        p * model.evaluate("f", t, u, x, exo)
        + h * model.evaluate("sigma", t, u, x, exo)
        + model.evaluate("g", t, u, x, exo)
    )


def hamiltonian_partial_u(model, t, u, x, p, h, exo=None):
    return (
        p * model.evaluate("f_u", t, u, x, exo)
        + h * model.evaluate("sigma_u", t, u, x, exo)
        + model.evaluate("g_u", t, u, x, exo)
    )


def hamiltonian_partial_x(model, t, u, x, p, h, exo=None):
    """BSDE driver ``p*f_x + h*sigma_x + g_x``."""
    return (
        p * model.evaluate("f_x", t, u, x, exo)
        + h * model.evaluate("sigma_x", t, u, x, exo)
        + model.evaluate("g_x", t, u, x, exo)
    )


# ---------------------------------------------------------------- sampling


@dataclass
class SampleBox:
    t: tuple = (0.0, 32.0)
    x: Optional[tuple] = None
    p: tuple = (-10.0, 10.0)
    h: tuple = (-10.0, 10.0)


def _default_x_range(model):
    half = 10.0 * max(1.0, abs(model.x0))
    return model.x0 - half, model.x0 + half


def _draw(model, n, rng, box, t_min=None):
    t_lo, t_hi = box.t
    if t_min is not None:
        t_lo = max(t_lo, t_min)
        t_hi = max(t_hi, t_lo)
    lo, hi = model.control_set.hull
    xr = box.x or _default_x_range(model)
    pts = {
        "t": rng.uniform(t_lo, t_hi, n),
        "u": rng.uniform(lo, hi, n),
        "x": rng.uniform(xr[0], xr[1], n),
    }
    exo = {e.name: rng.uniform(e.sample_range[0], e.sample_range[1], n) for e in model.exogenous}
    return pts, exo


def _point_rows(pts, exo, idx, limit=5):
    rows = []
    for i in list(idx)[:limit]:
        row = {k: float(v[i]) for k, v in pts.items()}
        row.update({k: float(v[i]) for k, v in exo.items()})
        rows.append(row)
    return rows


# ---------------------------------------------------------------- validation


@dataclass
class ValidationReport:
    n_samples: int
    max_errors: dict
    curvature: dict
    failures: dict
    linear_violations: dict
    linear_verified: bool

    @property
    def passed(self):
        return not self.failures and not self.linear_violations

    def summary_lines(self):
        lines = [f"validation over {self.n_samples} samples: {'pass' if self.passed else 'FAIL'}"]
        for name in sorted(self.max_errors):
            lines.append(f"  {name:<8s} max rel error {self.max_errors[name]:.3e}")
        for name in sorted(self.curvature):
            lines.append(f"  {name:<8s} max |second difference| {self.curvature[name]:.3e}")
        return lines


_PARTIALS = (
    ("f_u", "f", "u"),
    ("f_x", "f", "x"),
    ("sigma_u", "sigma", "u"),
    ("sigma_x", "sigma", "x"),
    ("g_u", "g", "u"),
    ("g_x", "g", "x"),
)


def _central_difference(model, parent, var, t, u, x, exo, step):
    if var == "u":
        hstep = step * np.maximum(1.0, np.abs(u))
        hi = model.evaluate(parent, t, u + hstep, x, exo)
        lo = model.evaluate(parent, t, u - hstep, x, exo)
    else:
        hstep = step * np.maximum(1.0, np.abs(x))
        hi = model.evaluate(parent, t, u, x + hstep, exo)
        lo = model.evaluate(parent, t, u, x - hstep, exo)
    return (hi - lo) / (2.0 * hstep)


def second_differences(fn, t, u, x, exo, step=CURVATURE_STEP):
    """Finite-difference Hessian entries (uu, xx, ux) of ``fn`` in ``(u, x)``.

    ``fn(t, u, x, exo)`` must already return finite arrays.
    """
    hu = step * np.maximum(1.0, np.abs(u))
    hx = step * np.maximum(1.0, np.abs(x))
    c = fn(t, u, x, exo)
    uu = (fn(t, u + hu, x, exo) - 2.0 * c + fn(t, u - hu, x, exo)) / hu**2
    xx = (fn(t, u, x + hx, exo) - 2.0 * c + fn(t, u, x - hx, exo)) / hx**2
    ux = (
        fn(t, u + hu, x + hx, exo)
        - fn(t, u + hu, x - hx, exo)
        - fn(t, u - hu, x + hx, exo)
        + fn(t, u - hu, x - hx, exo)
    ) / (4.0 * hu * hx)
    return uu, xx, ux, c


def validate_model(
    model,
    sample_budget=1000,
    rng_seed=0,
    *,
    box=None,
    rtol=FD_RTOL,
    step=FD_STEP,
    curvature_tol=CURVATURE_TOL,
    raise_on_failure=True,
):
    """Compare declared partials against central finite differences.

    The error measure is ``|declared - fd| / max(1, |fd|)``. Second
    differences of ``f``, ``sigma`` and ``g`` are always reported; they count
    as violations only for coefficients the model declares affine.
    """
    if sample_budget < 1:
        raise InputError("sample_budget must be >= 1")
    rng = np.random.default_rng(rng_seed)
    box = box or SampleBox()
    pts, exo = _draw(model, sample_budget, rng, box)
    t, u, x = pts["t"], pts["u"], pts["x"]

    max_errors, failures = {}, {}
    for name, parent, var in _PARTIALS:
        declared = model.evaluate(name, t, u, x, exo)
        fd = _central_difference(model, parent, var, t, u, x, exo, step)
        err = np.abs(declared - fd) / np.maximum(1.0, np.abs(fd))
        max_errors[name] = float(err.max())
        bad = np.flatnonzero(err > rtol)
        if bad.size:
            failures[name] = _point_rows(pts, exo, bad)

    curvature, linear_violations = {}, {}
    for parent, flag in zip(("f", "sigma", "g"), model.linear_flags):
        fn = lambda tt, uu, xx, ee, _p=parent: model.evaluate(_p, tt, uu, xx, ee)
        d_uu, d_xx, d_ux, c = second_differences(fn, t, u, x, exo)
        worst = np.maximum.reduce([np.abs(d_uu), np.abs(d_xx), np.abs(d_ux)])
        curvature[parent] = float(worst.max())
        if flag:
            bad = np.flatnonzero(worst > curvature_tol * np.maximum(1.0, np.abs(c)))
            if bad.size:
                linear_violations[parent] = _point_rows(pts, exo, bad)

    report = ValidationReport(
        n_samples=sample_budget,
        max_errors=max_errors,
        curvature=curvature,
        failures=failures,
        linear_violations=linear_violations,
        linear_verified=model.linear_flags.all and not linear_violations,
    )
    if raise_on_failure and not report.passed:
        parts = []
        for name, rows in failures.items():
            parts.append(f"{name} disagrees with finite differences "
                         f"(max rel error {max_errors[name]:.3e}) at e.g. {rows[:3]}")
        for name, rows in linear_violations.items():
            parts.append(f"{name} declared affine but has curvature "
                         f"{curvature[name]:.3e} at e.g. {rows[:3]}")
        raise ModelValidationError(f"model {model.name!r} failed validation: " + "; ".join(parts), report)
    return report


# ---------------------------------------------------------------- concavity


@dataclass
class ConcavityReport:
    passed: bool
    n_samples: int
    worst_eigenvalue: float
    worst_sample: dict
    t_min: float
    note: str = (
        "sampled evidence only: concavity of (u, x) -> H was tested at random "
        "(t, u, x, p, h) draws, not proven"
    )


def check_concavity(
    model,
    t_min=0.0,
    sample_budget=1000,
    rng_seed=0,
    *,
    box=None,
    tol=CURVATURE_TOL,
    step=CURVATURE_STEP,
):
    """Sample the finite-difference Hessian of ``(u, x) -> H`` and test that
    both eigenvalues are ``<= tol * max(1, |H|)``.

    ``p`` and ``h`` are drawn from ``box.p`` and ``box.h`` (default
    ``[-10, 10]`` each). Failures are report content, never exceptions.
    """
    rng = np.random.default_rng(rng_seed)
    box = box or SampleBox()
    pts, exo = _draw(model, sample_budget, rng, box, t_min=t_min)
    pts["p"] = rng.uniform(*box.p, sample_budget)
    pts["h"] = rng.uniform(*box.h, sample_budget)
    p, h = pts["p"], pts["h"]

    def ham(tt, uu, xx, ee):
        return hamiltonian(model, tt, uu, xx, p, h, ee)

    a, c, b, value = second_differences(ham, pts["t"], pts["u"], pts["x"], exo, step)
    mid = 0.5 * (a + c)
    rad = np.sqrt((0.5 * (a - c)) ** 2 + b**2)
    lam_max = mid + rad
    scaled = lam_max / np.maximum(1.0, np.abs(value))
    i = int(np.argmax(scaled))
    worst = _point_rows(pts, exo, [i])[0]
    worst["eigenvalue"] = float(lam_max[i])
    return ConcavityReport(
        passed=bool(scaled[i] <= tol),
        n_samples=sample_budget,
        worst_eigenvalue=float(lam_max[i]),
        worst_sample=worst,
        t_min=float(t_min),
    )

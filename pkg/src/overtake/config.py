"""Plain-text run configuration.

One ``key = value`` pair per line, UTF-8, ``#`` starts a comment. Unknown
keys are rejected with their line number. Scenario parameters are namespaced
(``example2.r = 0.05``); list values are separated by commas or semicolons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .errors import InputError
from .paths import ControlPolicy, needle, shifted
from .scenarios import SCENARIOS, Example1Params, Example2Params

SOLVERS = ("auto", "lsmc", "explicit")

_SCENARIO_KEYS = {
    "example1": {"rho": float, "sigma": float},
    "example2": {
        "r": float, "delta": float, "sigma": float, "k0": float, "u_lo": float, "u_hi": float,
        "pi": str, "pi_bar": float, "theta": float, "eta": float, "pi_max": float, "pi0": float,
        "T_q": float,
    },
}


@dataclass
class RunConfig:
    scenario: str = "example1"
    seed: int = 1
    n_paths: int = 2**14
    dt: float = 1.0 / 64
    horizons: tuple = (2.0, 4.0, 8.0, 16.0, 32.0)
    basis_degree: int = 3
    solver: str = "auto"
    candidate: str = "default"
    challengers: tuple = ()
    needles: tuple = ()
    output_dir: str = "overtake-out"
    workers: int = 1
    validation_samples: int = 1000
    concavity_samples: int = 1000
    tol_fd: float = 1e-5
    tol_concavity: float = 1e-6
    scenario_params: dict = field(default_factory=dict)
    source: Optional[str] = None
    input_lines: tuple = ()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise InputError(f"unknown scenario {self.scenario!r}; choose from {sorted(SCENARIOS)}")
        if self.seed < 0 or self.seed >= 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")
        if self.n_paths < 2:
            raise InputError("n_paths must be >= 2")
        if not (0 < self.dt <= 1):
            raise InputError("dt must lie in (0, 1]")
        if len(self.horizons) < 3:
            raise InputError("horizons needs at least 3 values")
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise InputError("horizons must be strictly increasing")
        for T in self.horizons:
            k = T / self.dt
            if abs(k - round(k)) > 1e-9 * max(1.0, k) or T <= 0:
                raise InputError(f"dt={self.dt:g} does not divide horizon {T:g}")
        if not 0 <= self.basis_degree <= 8:
            raise InputError("basis_degree must lie in [0, 8]")
        if self.solver not in SOLVERS:
            raise InputError(f"solver must be one of {SOLVERS}")
        if self.workers < 1:
            raise InputError("workers must be >= 1")
        if self.validation_samples < 1 or self.concavity_samples < 1:
            raise InputError("sample budgets must be >= 1")
        allowed = _SCENARIO_KEYS[self.scenario]
        for key in self.scenario_params:
            if key not in allowed:
                raise InputError(f"unknown parameter {self.scenario}.{key}")
        for spec in self.challengers + ((self.candidate,) if self.candidate != "default" else ()):
            _check_policy_spec(spec)
        for spec in self.needles:
            _check_needle_spec(spec)
        return self

    def scenario_param_object(self):
        cls = Example1Params if self.scenario == "example1" else Example2Params
        return cls(**self.scenario_params)

    def echo_lines(self):
        """The input file with comments dropped and whitespace normalized,
        or the full normalized field listing for configs built in code."""
        return self.input_lines or tuple(self.echo())

    def echo(self):
        """Normalized ``key = value`` lines describing every field."""
        lines = [
            f"scenario = {self.scenario}",
            f"seed = {self.seed}",
            f"n_paths = {self.n_paths}",
            f"dt = {_fmt(self.dt)}",
            f"horizons = {', '.join(_fmt(h) for h in self.horizons)}",
            f"basis_degree = {self.basis_degree}",
            f"solver = {self.solver}",
            f"candidate = {self.candidate}",
            f"challengers = {'; '.join(self.challengers)}",
            f"needles = {'; '.join(self.needles)}",
            f"validation_samples = {self.validation_samples}",
            f"concavity_samples = {self.concavity_samples}",
            f"tol.fd = {_fmt(self.tol_fd)}",
            f"tol.concavity = {_fmt(self.tol_concavity)}",
        ]
        for key in sorted(self.scenario_params):
            v = self.scenario_params[key]
            lines.append(f"{self.scenario}.{key} = {_fmt(v) if isinstance(v, float) else v}")
        return lines


def _fmt(v):
    return repr(float(v))


def parse_number(text, what):
    text = text.strip()
    try:
        if "/" in text:
            return float(Fraction(text))
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise InputError(f"{what}: expected a number, got {text!r}") from None


def parse_int(text, what):
    try:
        return int(text.strip())
    except ValueError:
        raise InputError(f"{what}: expected an integer, got {text!r}") from None


def _split_list(text):
    return tuple(p.strip() for p in text.replace(";", ",").split(",") if p.strip())


def _split_specs(text):
    # policy specs contain ':' and may contain '-', so only ';' separates them
    sep = ";" if ";" in text else ","
    return tuple(p.strip() for p in text.split(sep) if p.strip())


_TOP_KEYS = {
    "scenario": ("scenario", str),
    "seed": ("seed", "int"),
    "n_paths": ("n_paths", "int"),
    "dt": ("dt", "num"),
    "horizons": ("horizons", "numlist"),
    "basis_degree": ("basis_degree", "int"),
    "solver": ("solver", str),
    "candidate": ("candidate", str),
    "challengers": ("challengers", "specs"),
    "needles": ("needles", "specs"),
    "output_dir": ("output_dir", str),
    "workers": ("workers", "int"),
    "validation_samples": ("validation_samples", "int"),
    "concavity_samples": ("concavity_samples", "int"),
    "tol.fd": ("tol_fd", "num"),
    "tol.concavity": ("tol_concavity", "num"),
}


def _convert(kind, text, what):
    if kind == "int":
        return parse_int(text, what)
    if kind == "num":
        return parse_number(text, what)
    if kind == "numlist":
        return tuple(parse_number(p, what) for p in _split_list(text))
    if kind == "specs":
        return _split_specs(text)
    return text.strip()


def parse_config_text(text, source="<string>"):
    values, params, seen, lines = {}, {}, {}, []
    scenario_line = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise InputError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        lines.append(f"{key} = {' '.join(value.split())}")
        what = f"{source}:{lineno}: {key}"
        if key in _TOP_KEYS:
            attr, kind = _TOP_KEYS[key]
            values[attr] = _convert(kind, value, what)
            if key == "scenario":
                scenario_line = lineno
            continue
        ns, _, name = key.partition(".")
        if ns in _SCENARIO_KEYS and name in _SCENARIO_KEYS[ns]:
            typ = _SCENARIO_KEYS[ns][name]
            params[(ns, name, lineno)] = value.strip() if typ is str else parse_number(value, what)
            continue
        raise InputError(f"{source}:{lineno}: unknown key {key!r}")
    scenario = values.get("scenario", RunConfig.scenario)
    scenario_params = {}
    for (ns, name, lineno), v in params.items():
        if ns != scenario:
            raise InputError(f"{source}:{lineno}: parameter {ns}.{name} does not belong to scenario "
                             f"{scenario!r} (line {scenario_line or 'default'})")
        scenario_params[name] = v
    cfg = RunConfig(**values, scenario_params=scenario_params, source=source,
                    input_lines=tuple(lines))
    try:
        return cfg.validate()
    except InputError as exc:
        key = _key_for_error(str(exc))
        where = f"{source}:{seen[key]}: " if key in seen else f"{source}: "
        raise InputError(where + str(exc)) from None


def _key_for_error(msg):
    for key in ("horizons", "dt", "seed", "n_paths", "basis_degree", "solver", "workers", "scenario",
                "challengers", "candidate", "needles"):
        if key in msg:
            return "horizons" if "divide horizon" in msg else key
    return None


def load_config(path):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {path}")
    try:
        text = p.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not valid UTF-8 ({exc})") from None
    return parse_config_text(text, source=str(path))


# ---------------------------------------------------------------- policy specs


def _check_policy_spec(spec):
    head, *args = spec.split(":")
    arity = {"const": 1, "shift": 1, "sin": (2, 3), "needle": 3}
    if head not in arity:
        raise InputError(f"unknown control spec {spec!r} (const:v, shift:d, sin:amp:freq[:offset], "
                         "needle:t0:width:height)")
    want = arity[head]
    if (len(args) not in want) if isinstance(want, tuple) else len(args) != want:
        raise InputError(f"wrong number of arguments in control spec {spec!r}")
    for a in args:
        parse_number(a, f"control spec {spec!r}")


def _check_needle_spec(spec):
    parts = spec.split(":")
    if len(parts) != 3:
        raise InputError(f"needle spec {spec!r} must be t0:width:height")
    for a in parts:
        parse_number(a, f"needle spec {spec!r}")


def parse_policy(spec, candidate):
    """Build a policy from ``const:v``, ``shift:d``, ``sin:amp:freq[:offset]``
    or ``needle:t0:width:height``; the last two perturb or replace relative
    to ``candidate`` where that makes sense."""
    _check_policy_spec(spec)
    head, *args = spec.split(":")
    nums = [parse_number(a, spec) for a in args]
    if head == "const":
        return ControlPolicy.constant(nums[0], label=spec)
    if head == "shift":
        return shifted(candidate, nums[0], label=spec)
    if head == "sin":
        amp, freq = nums[0], nums[1]
        off = nums[2] if len(nums) > 2 else 0.0
        return ControlPolicy.deterministic(lambda t: off + amp * math.sin(freq * t), label=spec)
    t0, width, height = nums
    return needle(candidate, t0, width, height, label=spec)

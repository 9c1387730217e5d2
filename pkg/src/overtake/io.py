"""Files on disk: path ensembles, adjoint sidecars and certificate reports.

A report directory holds ``gamma_series.csv``, ``certificate.csv``,
``diagnostics.csv``, ``metadata.json`` and ``summary.txt``. The summary is
always rendered from the other four files, so re-rendering a saved report
reproduces it byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InputError
from .paths import PathEnsemble, TimeGrid

MAGIC = b"OVTK1"
_HEADER = struct.Struct("<5sqqd")  # magic, n_paths, n_steps, t_end

GAMMA_COLUMNS = ("challenger_id", "T", "gamma", "gamma_ci95", "gap", "gap_ci95", "slack")
CERT_COLUMNS = ("challenger_id", "status", "tail_mean", "slope", "decay_rate", "sup_ok", "inf_ok",
                "bounded_away", "clamped")
DIAG_COLUMNS = ("scope", "T", "quantity", "value")


def fmt(v):
    """Shortest round-tripping text for a number."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# ---------------------------------------------------------------- ensembles


def write_ensemble_binary(ens, path):
    v = np.ascontiguousarray(ens.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, ens.n_paths, ens.grid.n_steps, ens.grid.t_end))
        fh.write(v.tobytes(order="C"))


def read_ensemble_binary(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size or data[:5] != MAGIC:
        raise InputError(f"{path}: not an OVTK1 ensemble file")
    _, n_paths, n_steps, t_end = _HEADER.unpack_from(data)
    want = _HEADER.size + 8 * n_paths * (n_steps + 1)
    if len(data) != want:
        raise InputError(f"{path}: expected {want} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(n_paths, n_steps + 1)
    return PathEnsemble(TimeGrid(t_end, n_steps), values.astype(float))


def write_ensemble_csv(ens, path):
    g = ens.grid
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# t_end={fmt(g.t_end)} n_steps={g.n_steps} dt={fmt(g.dt)} n_paths={ens.n_paths}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path"] + [f"t{k}" for k in range(g.n_steps + 1)])
        for i, row in enumerate(ens.values):
            w.writerow([i] + [fmt(v) for v in row])


def read_ensemble_csv(path):
    with open(path, encoding="utf-8") as fh:
        head = fh.readline()
        if not head.startswith("#"):
            raise InputError(f"{path}: missing grid metadata line")
        meta = dict(kv.split("=", 1) for kv in head[1:].split())
        try:
            grid = TimeGrid(float(meta["t_end"]), int(meta["n_steps"]))
        except (KeyError, ValueError) as exc:
            raise InputError(f"{path}: bad grid metadata ({exc})") from None
        rows = list(csv.reader(fh))
    values = np.array([[float(c) for c in r[1:]] for r in rows[1:]], dtype=float).reshape(len(rows) - 1, -1)
    return PathEnsemble(grid, values)


def write_ensemble(ens, path):
    path = Path(path)
    (write_ensemble_csv if path.suffix == ".csv" else write_ensemble_binary)(ens, path)


def read_ensemble(path):
    path = Path(path)
    return read_ensemble_csv(path) if path.suffix == ".csv" else read_ensemble_binary(path)


# ---------------------------------------------------------------- adjoint


def write_adjoint(sol, diag, directory, stem=None):
    """``p`` and ``h`` as binary ensembles plus a JSON sidecar."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    stem = stem or f"adjoint_T{sol.horizon:g}"
    write_ensemble_binary(sol.p, d / f"{stem}_p.ovtk")
    write_ensemble_binary(sol.h, d / f"{stem}_h.ovtk")
    side = {
        "horizon": sol.horizon,
        "solver": sol.solver,
        "n_paths": sol.p.n_paths,
        "n_steps": sol.p.grid.n_steps,
        "lattice_key": list(sol.lattice_key),
        "p_file": f"{stem}_p.ovtk",
        "h_file": f"{stem}_h.ovtk",
        "solver_diagnostics": _jsonable(sol.diagnostics),
        "terminal_residual": diag.terminal_residual,
        "flagged_steps": [int(k) for k in diag.flagged_steps],
        "max_abs_z": diag.max_abs_z,
        "passed": diag.passed,
        "version": __version__,
    }
    (d / f"{stem}.json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return d / f"{stem}.json"


def read_adjoint(sidecar):
    sidecar = Path(sidecar)
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    p = read_ensemble_binary(sidecar.parent / meta["p_file"])
    h = read_ensemble_binary(sidecar.parent / meta["h_file"])
    return meta, p, h


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


# ---------------------------------------------------------------- reports


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(c) if not isinstance(c, str) else c for c in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def gamma_rows(report):
    return [(e.challenger, e.T, e.gamma, e.gamma_ci, e.gap, e.gap_ci, e.slack) for e in report.entries]


def write_gamma_series(report, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_csv(d / "gamma_series.csv", GAMMA_COLUMNS, gamma_rows(report))
    return d / "gamma_series.csv"


def _diagnostic_rows(report):
    rows = []
    val = report.validation
    if val is not None:
        rows.append(("validation", "", "n_samples", int(val.n_samples)))
        for name in sorted(val.max_errors):
            rows.append(("validation", "", f"max_rel_error_{name}", float(val.max_errors[name])))
        rows.append(("validation", "", "linear_verified", bool(val.linear_verified)))
    con = report.concavity
    if con is not None:
        rows.append(("concavity", "", "passed", bool(con.passed)))
        rows.append(("concavity", "", "n_samples", int(con.n_samples)))
        rows.append(("concavity", "", "worst_eigenvalue", float(con.worst_eigenvalue)))
    for T in sorted(report.adjoint):
        for key in sorted(report.adjoint[T]):
            rows.append(("adjoint", T, key, report.adjoint[T][key]))
    for cid in sorted(report.clamps):
        rows.append(("clamps", "", cid, int(report.clamps[cid])))
    if report.bound is not None:
        rows.append(("bound", "", "passed", report.bound.passed))
        rows.append(("bound", "", "violations", len(report.bound.violations)))
    if report.equality is not None:
        rows.append(("equality", "", "passed", report.equality.passed))
        rows.append(("equality", "", "max_abs_sum", report.equality.max_abs_sum))
    return rows


def write_report(report, directory, config=None, extra_meta=None):
    """Write the report file set and return the rendered summary text."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_gamma_series(report, d)
    cert = []
    for cid in report.challengers:
        t = report.trends.get(cid)
        if t is None:
            cert.append((cid, "missing", float("nan"), float("nan"), float("nan"), False, False, False,
                         int(report.clamps.get(cid, 0))))
            continue
        cert.append((cid, t.status, t.tail_mean, t.slope, t.decay_rate, t.sup_ok, t.inf_ok, t.bounded_away,
                     int(report.clamps.get(cid, 0))))
    _write_csv(d / "certificate.csv", CERT_COLUMNS, cert)
    _write_csv(d / "diagnostics.csv", DIAG_COLUMNS, _diagnostic_rows(report))
    meta = {
        "version": __version__,
        "verdict": report.verdict,
        "solver": report.solver,
        "candidate": report.candidate,
        "horizons": [float(h) for h in report.horizons],
        "challengers": list(report.challengers),
        "linear_verified": bool(report.linear_verified),
        "warnings": list(report.warnings),
        "failures": {fmt(k): v for k, v in sorted(report.failures.items())},
    }
    if config is not None:
        meta["seed"] = config.seed
        meta["config"] = list(config.echo_lines())
    meta.update(extra_meta or {})
    (d / "metadata.json").write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    text = render_summary(d)
    (d / "summary.txt").write_text(text, encoding="utf-8")
    return text


def _read_csv(path):
    if not Path(path).is_file():
        raise InputError(f"missing report file {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def render_summary(directory):
    """Summary text built only from the saved CSV and JSON files."""
    d = Path(directory)
    meta_path = d / "metadata.json"
    if not meta_path.is_file():
        raise InputError(f"{d} is not a report directory (metadata.json missing)")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    gamma = _read_csv(d / "gamma_series.csv")
    cert = _read_csv(d / "certificate.csv")
    diag = _read_csv(d / "diagnostics.csv")

    out = [
        f"verdict: {meta['verdict']}",
        f"candidate: {meta['candidate']}",
        f"solver: {meta['solver']}",
        f"linear verified: {'yes' if meta['linear_verified'] else 'no'}",
    ]
    if "seed" in meta:
        out.append(f"seed: {meta['seed']}")
    out.append(f"version: {meta['version']}")
    out.append("")
    out.append("gamma series (gamma +- ci95 | gap +- ci95 | slack)")
    width = max([len(r["challenger_id"]) for r in gamma] + [10])
    for r in gamma:
        out.append(
            f"  {r['challenger_id']:<{width}} T={r['T']:<6} gamma={r['gamma']} +- {r['gamma_ci95']}"
            f"  gap={r['gap']} +- {r['gap_ci95']}  slack={r['slack']}"
        )
    out.append("")
    out.append("tail trends")
    for r in cert:
        out.append(
            f"  {r['challenger_id']:<{width}} {r['status']:<11} tail_mean={r['tail_mean']} slope={r['slope']}"
            f" decay_rate={r['decay_rate']} clamped={r['clamped']}"
        )
    out.append("")
    out.append("diagnostics")
    for r in diag:
        scope = r["scope"] + (f"[T={r['T']}]" if r["T"] else "")
        out.append(f"  {scope} {r['quantity']} = {r['value']}")
    if meta.get("failures"):
        out.append("")
        out.append("failed horizons")
        for T, msg in meta["failures"].items():
            out.append(f"  T={T}: {msg}")
    if meta.get("warnings"):
        out.append("")
        out.append("warnings")
        out.extend(f"  {w}" for w in meta["warnings"])
    return "\n".join(out) + "\n"

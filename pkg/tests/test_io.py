import json
import re

import numpy as np
import pytest

from overtake import ControlPolicy, HorizonSweep, InputError, TimeGrid, make_lattice, run_certification
from overtake import adjoint_diagnostics, simulate_forward, solve_adjoint_lsmc
from overtake.config import RunConfig
from overtake.io import (
    GAMMA_COLUMNS,
    MAGIC,
    read_adjoint,
    read_ensemble,
    render_summary,
    write_adjoint,
    write_ensemble,
    write_report,
)
from overtake.paths import PathEnsemble
from overtake.scenarios import build_example1, build_linear_driver


@pytest.fixture
def ensemble():
    rng = np.random.default_rng(1)
    return PathEnsemble(TimeGrid(1.5, 6), rng.normal(size=(4, 7)) * 1e3)


@pytest.mark.parametrize("suffix", [".ovtk", ".csv"])
def test_ensemble_round_trip_is_exact(tmp_path, ensemble, suffix):
    path = tmp_path / f"e{suffix}"
    write_ensemble(ensemble, path)
    back = read_ensemble(path)
    assert back.grid == ensemble.grid
    assert np.array_equal(back.values, ensemble.values)


def test_binary_layout(tmp_path, ensemble):
    path = tmp_path / "e.ovtk"
    write_ensemble(ensemble, path)
    raw = path.read_bytes()
    assert raw[:5] == MAGIC
    assert len(raw) == 5 + 8 + 8 + 8 + 8 * 4 * 7
    assert np.frombuffer(raw[29:37], dtype="<f8")[0] == ensemble.values[0, 0]


def test_binary_rejects_garbage(tmp_path):
    p = tmp_path / "x.ovtk"
    p.write_bytes(b"NOPE!" + bytes(40))
    with pytest.raises(InputError, match="OVTK1"):
        read_ensemble(p)


def test_csv_header_carries_grid(tmp_path, ensemble):
    p = tmp_path / "e.csv"
    write_ensemble(ensemble, p)
    head = p.read_text().splitlines()[0]
    assert head.startswith("# t_end=1.5 n_steps=6")


def test_adjoint_sidecar_round_trip(tmp_path):
    model, cand = build_linear_driver()
    lat = make_lattice(0, 64, TimeGrid.from_dt(1 / 16, 2.0))
    tr = simulate_forward(model, cand, lat)
    sol = solve_adjoint_lsmc(model, tr.x, tr.u, lat, 2.0)
    side = write_adjoint(sol, adjoint_diagnostics(sol, lat), tmp_path)
    meta, p, h = read_adjoint(side)
    assert meta["solver"] == "lsmc" and meta["horizon"] == 2.0
    assert np.array_equal(p.values, sol.p.values)
    assert np.array_equal(h.values, sol.h.values)


@pytest.fixture(scope="module")
def small_report():
    model, cand, _ = build_example1()
    lat = make_lattice(2, 256, TimeGrid.from_dt(1 / 16, 4.0))
    return run_certification(model, cand, [ControlPolicy.constant(0.0), ControlPolicy.constant(-1.0)],
                             HorizonSweep((1.0, 2.0, 4.0), 1 / 16), lat)


def test_report_files_and_columns(tmp_path, small_report):
    cfg = RunConfig(seed=2).validate()
    write_report(small_report, tmp_path, config=cfg)
    for name in ("summary.txt", "certificate.csv", "gamma_series.csv", "diagnostics.csv", "metadata.json"):
        assert (tmp_path / name).is_file()
    header = (tmp_path / "gamma_series.csv").read_text().splitlines()[0]
    assert tuple(header.split(",")) == GAMMA_COLUMNS
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["seed"] == 2 and meta["verdict"] == "OO-evidence" and "version" in meta
    assert "seed = 2" in meta["config"]


def test_csv_floats_round_trip(tmp_path, small_report):
    write_report(small_report, tmp_path)
    rows = (tmp_path / "gamma_series.csv").read_text().splitlines()[1:]
    first = rows[0].split(",")
    e = small_report.entries[0]
    assert float(first[2]) == e.gamma and float(first[6]) == e.slack


def test_summary_rerender_is_byte_identical(tmp_path, small_report):
    write_report(small_report, tmp_path)
    assert render_summary(tmp_path) == (tmp_path / "summary.txt").read_text()


def test_summary_numbers_come_from_csv_cells(tmp_path, small_report):
    write_report(small_report, tmp_path)
    cells = set()
    for name in ("gamma_series.csv", "certificate.csv", "diagnostics.csv"):
        for line in (tmp_path / name).read_text().splitlines()[1:]:
            cells.update(line.split(","))
    summary = (tmp_path / "summary.txt").read_text()
    for token in re.findall(r"=\s*(-?[0-9][0-9.e+-]*)", summary):
        assert token in cells, token


def test_render_requires_report_dir(tmp_path):
    with pytest.raises(InputError, match="metadata.json"):
        render_summary(tmp_path)

import json

from overtake import cli
from overtake.cli import main
from overtake.io import read_ensemble
from overtake.scenarios import planted_gx_fault

FAST = ["--n-paths", "512", "--dt", "1/16", "--horizons", "1,2,4"]


def test_certify_example1_default_scale(tmp_path, capsys):
    assert main(["certify", "--scenario", "example1", "--seed", "7", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.startswith("verdict: OO-evidence")
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["seed"] == 7


def test_flipped_candidate_exits_3(tmp_path):
    code = main(["certify", "--scenario", "example1", "--candidate", "const:0", *FAST, "--out", str(tmp_path)])
    assert code == 3


def test_missing_config_exits_1(tmp_path, capsys):
    assert main(["certify", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert "not found" in capsys.readouterr().err


def test_malformed_config_exits_1_with_line(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("scenario = example1\nhorizon = 1, 2\n", encoding="utf-8")
    assert main(["validate", "--config", str(cfg)]) == 1
    assert "run.cfg:2" in capsys.readouterr().err


def test_bad_arguments_exit_1():
    assert main(["certify", "--seed", "abc"]) == 1
    assert main([]) == 1


def test_validate_prints_checks(capsys):
    assert main(["validate", "--scenario", "example2"]) == 0
    out = capsys.readouterr().out
    assert "validation over 1000 samples: pass" in out
    assert "concavity over 1000 samples: pass" in out


def test_validation_failure_exits_2(monkeypatch, tmp_path, capsys):
    real = cli.build_problem

    def faulty(cfg):
        prob = real(cfg)
        prob.model = planted_gx_fault(prob.model)
        return prob

    monkeypatch.setattr(cli, "build_problem", faulty)
    assert main(["certify", "--scenario", "example1", *FAST, "--out", str(tmp_path)]) == 2
    assert "g_x" in capsys.readouterr().out


def test_simulate_writes_ensembles(tmp_path):
    code = main(["simulate", "--scenario", "example2", "--config", _ou_config(tmp_path), *FAST,
                 "--out", str(tmp_path / "sim"), "--format", "csv"])
    assert code == 0
    x = read_ensemble(tmp_path / "sim" / "candidate_x.csv")
    pi = read_ensemble(tmp_path / "sim" / "candidate_pi.csv")
    assert x.n_paths == 512 and x.grid.n_steps == 64
    assert pi.values.min() >= 0


def _ou_config(tmp_path):
    p = tmp_path / "ou.cfg"
    p.write_text("scenario = example2\nexample2.pi = ou\n", encoding="utf-8")
    return str(p)


def test_adjoint_writes_sidecars(tmp_path, capsys):
    assert main(["adjoint", "--scenario", "example2", *FAST, "--out", str(tmp_path)]) == 0
    for T in ("1", "2", "4"):
        meta = json.loads((tmp_path / f"adjoint_T{T}.json").read_text())
        assert meta["solver"] == "explicit"
        assert (tmp_path / meta["p_file"]).is_file()


def test_sweep_writes_only_gamma_series(tmp_path):
    assert main(["sweep", "--scenario", "example1", *FAST, "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["gamma_series.csv"]


def test_report_rerenders_identically(tmp_path, capsys):
    main(["certify", "--scenario", "example1", *FAST, "--out", str(tmp_path)])
    capsys.readouterr()
    before = (tmp_path / "summary.txt").read_bytes()
    assert main(["report", "--from", str(tmp_path), "--write"]) == 0
    assert (tmp_path / "summary.txt").read_bytes() == before
    assert capsys.readouterr().out.encode() == before


def test_report_on_empty_dir_exits_1(tmp_path):
    assert main(["report", "--from", str(tmp_path)]) == 1


def test_config_file_with_overrides_is_echoed(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("scenario   =  example1\nseed = 3\nn_paths = 512\ndt = 1/16\nhorizons = 1, 2, 4\n",
                   encoding="utf-8")
    out = tmp_path / "out"
    assert main(["certify", "--config", str(cfg), "--seed", "9", "--out", str(out)]) == 0
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["seed"] == 9
    assert meta["config"][0] == "scenario = example1"
    assert "seed = 9" in meta["config"] and "seed = 3" not in meta["config"]


def test_small_runs_identical_across_workers(tmp_path):
    outs = []
    for workers in ("1", "3"):
        out = tmp_path / workers
        assert main(["certify", "--scenario", "example2", *FAST, "--workers", workers, "--out", str(out)]) == 0
        outs.append((out / "gamma_series.csv").read_bytes())
    assert outs[0] == outs[1]

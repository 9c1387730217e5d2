import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overtake import (
    ControlPolicy,
    HorizonSweep,
    InputError,
    LatticeMismatchError,
    ModelValidationError,
    PreconditionError,
    TimeGrid,
    check_gap_bound,
    check_linear_equality,
    estimate_gamma,
    estimate_gap,
    make_lattice,
    run_certification,
    simulate_forward,
    solve_adjoint_explicit,
)
from overtake.certify import CertificateEntry, Trend, decide, fit_trend
from overtake.scenarios import (
    Example1Oracle,
    Example1Params,
    Example2Params,
    build_example1,
    build_example2,
    planted_gx_fault,
)

DT = 1 / 32
SWEEP = HorizonSweep((1.0, 2.0, 4.0, 8.0), DT)


@pytest.fixture(scope="module")
def lattice():
    return make_lattice(3, 1024, TimeGrid.from_dt(DT, 8.0))


def test_sweep_validation():
    with pytest.raises(InputError, match="at least 3"):
        HorizonSweep((1.0, 2.0), DT)
    with pytest.raises(InputError, match="increasing"):
        HorizonSweep((1.0, 4.0, 2.0), DT)
    with pytest.raises(InputError, match="1.01"):
        HorizonSweep((1.0, 1.01, 2.0), DT)


@pytest.mark.parametrize("m, size", [(3, 2), (5, 3), (6, 3), (9, 4)])
def test_tail_is_last_third_plus_one(m, size):
    sweep = HorizonSweep(tuple(float(2**k) for k in range(m)), 1.0)
    assert len(sweep.tail()) == size
    assert sweep.tail()[-1] == sweep.t_max


def test_gap_against_example1_oracle(lattice):
    model, cand, oracle = build_example1()
    c = simulate_forward(model, cand, lattice)
    gap, ci = estimate_gap(model, c, ControlPolicy.constant(0.0), lattice, 8.0)
    # discrete version of (c - u) int f t dt
    t = lattice.grid.nodes[:256]
    want = float(np.sum(np.exp(-t) * t) * DT)
    assert abs(gap - want) <= ci + 1e-12
    assert gap == pytest.approx(oracle.gap_const(0.0, 8.0), rel=0.02)


@settings(max_examples=10, deadline=None)
@given(a=st.floats(-1, 1), b=st.floats(-1, 1))
def test_gap_antisymmetry(a, b):
    model, _, _ = build_example2(Example2Params(u_lo=-1, u_hi=1), t_max=1.0)
    lat = make_lattice(1, 64, TimeGrid.from_dt(1 / 16, 1.0))
    pa, pb = ControlPolicy.constant(a), ControlPolicy.constant(b)
    ta, tb = simulate_forward(model, pa, lat), simulate_forward(model, pb, lat)
    ab, _ = estimate_gap(model, ta, tb, lat, 1.0)
    ba, _ = estimate_gap(model, tb, ta, lat, 1.0)
    assert ab == pytest.approx(-ba, abs=1e-12)


def test_gamma_vanishes_for_the_candidate_itself(lattice):
    model, cand, _ = build_example1()
    c = simulate_forward(model, cand, lattice)
    sol = solve_adjoint_explicit(model, c.x, c.u, lattice, 4.0)
    g, ci = estimate_gamma(model, c, sol, cand, lattice, 4.0)
    assert g == 0.0 and ci == 0.0


def test_gamma_against_example1_oracle(lattice):
    model, cand, oracle = build_example1()
    c = simulate_forward(model, cand, lattice)
    sol = solve_adjoint_explicit(model, c.x, c.u, lattice, 8.0)
    g, _ = estimate_gamma(model, c, sol, ControlPolicy.constant(-1.0), lattice, 8.0)
    assert g == pytest.approx(oracle.gamma_const(-1.0, 8.0), rel=0.02)


def test_gamma_rejects_mismatched_horizon_and_lattice(lattice):
    model, cand, _ = build_example1()
    c = simulate_forward(model, cand, lattice)
    sol = solve_adjoint_explicit(model, c.x, c.u, lattice, 4.0)
    with pytest.raises(LatticeMismatchError, match="horizon"):
        estimate_gamma(model, c, sol, cand, lattice, 2.0)
    other = make_lattice(4, 1024, TimeGrid.from_dt(DT, 8.0))
    with pytest.raises(LatticeMismatchError):
        estimate_gamma(model, c, sol, cand, other, 4.0)


def _entry(gap, gamma, ci=0.01, cid="c", T=1.0):
    return CertificateEntry(cid, T, gamma, ci, gap, ci)


def test_bound_and_equality_checks():
    model, _, _ = build_example1()
    assert check_gap_bound([_entry(1.0, -0.5)]).passed
    assert not check_gap_bound([_entry(0.0, -0.5)]).passed
    eq = check_linear_equality([_entry(1.0, -1.0), _entry(0.5, -0.51)], model, linear_verified=True)
    assert eq.passed
    assert not check_linear_equality([_entry(1.0, -0.5)], model, linear_verified=True).passed


def test_equality_requires_affine_model():
    model, _, _ = build_example2()
    with pytest.raises(PreconditionError, match="affine"):
        check_linear_equality([_entry(1.0, -1.0)], model)


def test_fit_trend_statuses():
    tail = (8.0, 16.0, 32.0)
    neg = [_entry(0, -1.0, T=T) for T in tail]
    assert fit_trend("c", neg, tail).status == "nonpositive"
    decaying = [_entry(0, v, ci=0.01, T=T) for v, T in zip((1.0, 0.5, 0.2), tail)]
    tr = fit_trend("c", decaying, tail)
    assert tr.status == "vanishing" and tr.sup_ok and not tr.bounded_away
    assert tr.decay_rate > 0
    flat = [_entry(0, 1.0, T=T) for T in tail]
    tr = fit_trend("c", flat, tail)
    assert tr.status == "positive" and tr.bounded_away and not tr.inf_ok
    mixed = [_entry(0, v, T=T) for v, T in zip((1.0, -1.0, 1.0), tail)]
    tr = fit_trend("c", mixed, tail)
    assert tr.inf_ok and not tr.sup_ok


def _trend(sup, inf, away):
    return Trend("c", (), 0.0, 0.0, "x", sup, inf, away)


def test_decision_rules():
    assert decide({"a": _trend(True, True, False)}, True) == "OO-evidence"
    assert decide({"a": _trend(False, True, False)}, True) == "WOO-evidence"
    assert decide({"a": _trend(False, False, False)}, True) == "inconclusive"
    assert decide({"a": _trend(False, False, True)}, True) == "refuted"
    # necessity needs the linear structure
    assert decide({"a": _trend(False, False, True)}, False) == "inconclusive"


def test_pipeline_example1_small(lattice):
    model, cand, _ = build_example1()
    chs = [ControlPolicy.constant(0.0), ControlPolicy.constant(-1.0), ControlPolicy.constant(0.5)]
    rep = run_certification(model, cand, chs, SWEEP, lattice)
    assert rep.verdict == "OO-evidence"
    assert rep.solver == "explicit"
    assert rep.equality.passed and rep.bound.passed
    assert len(rep.entries) == 12
    assert [e.T for e in rep.series("const:0")] == list(SWEEP.horizons)


def test_pipeline_refutes_flipped_candidate(lattice):
    model, _, _ = build_example1()
    rep = run_certification(model, ControlPolicy.constant(0.0), [ControlPolicy.constant(1.0)], SWEEP, lattice)
    assert rep.verdict == "refuted"


def test_pipeline_example2_lsmc_small(lattice):
    model, cand, _ = build_example2(Example2Params(), t_max=8.0)
    rep = run_certification(model, cand, [ControlPolicy.constant(0.0), ControlPolicy.constant(2.0)],
                            SWEEP, lattice, solver="lsmc")
    assert rep.solver == "lsmc"
    assert rep.bound.passed
    # gamma for u = 0 rises until T = ln(3) / delta ~ 11, so a sweep ending at 8 shows no decay yet
    assert rep.trends["const:0"].status == "positive"
    assert rep.verdict == "inconclusive"
    assert rep.concavity.passed


def test_pipeline_rejects_faulty_model(lattice):
    model, cand, _ = build_example1()
    with pytest.raises(ModelValidationError, match="g_x"):
        run_certification(planted_gx_fault(model), cand, [ControlPolicy.constant(0.0)], SWEEP, lattice)


def test_pipeline_records_solver_precondition_failures(lattice):
    model, cand, _ = build_example2(Example2Params(), t_max=8.0)
    drifting = replace(model, f=lambda t, u, x, exo: np.exp(0.1 * t) * u - 0.01 * x,
                       f_x=lambda t, u, x, exo: -0.01)
    rep = run_certification(drifting, cand, [ControlPolicy.constant(0.0)], SWEEP, lattice, solver="explicit")
    assert set(rep.failures) == set(SWEEP.horizons)
    assert rep.verdict == "inconclusive"


def test_pipeline_reports_clamps(lattice):
    model, cand, _ = build_example1()
    rep = run_certification(model, cand, [ControlPolicy.constant(3.0)], SWEEP, lattice)
    assert rep.clamps["const:3"] == lattice.n_paths * (lattice.grid.n_steps + 1)
    assert any("clamped" in w for w in rep.warnings)


def test_example1_oracle_general_weight():
    params = Example1Params(f_fn=lambda t: 1 / (1 + np.asarray(t, dtype=float)) ** 2)
    oracle = Example1Oracle(params)
    assert oracle.p(0.0, 3.0) == pytest.approx(1 - 1 / 4, rel=1e-10)
    assert oracle.gap_const(0.0, 3.0) == pytest.approx(math.log(4) - 3 / 4, rel=1e-9)


def test_pipeline_warns_about_non_markov_exogenous(lattice):
    model, cand, _ = build_example2(Example2Params(pi="ou"), t_max=8.0)
    model = replace(model, exogenous=tuple(replace(e, markov=False) for e in model.exogenous))
    rep = run_certification(model, cand, [ControlPolicy.constant(0.0)], SWEEP, lattice, solver="lsmc")
    assert any("not Markov" in w for w in rep.warnings)

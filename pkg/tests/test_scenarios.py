import math

import numpy as np
import pytest

from overtake import InputError, TimeGrid, make_lattice, simulate_forward
from overtake.scenarios import (
    Example1Oracle,
    Example1Params,
    Example2Oracle,
    Example2Params,
    build_example1,
    build_example2,
    default_challengers,
    example2_gap_quadrature,
    oracle_gap_example2_const,
)


def test_example1_adjoint_formula():
    oracle = Example1Oracle(Example1Params(rho=2.0))
    assert oracle.p(0.0, 1.0) == pytest.approx((1 - math.exp(-2)) / 2)
    assert oracle.p(3.0, 1.0) == 0.0


def test_example1_rejects_negative_weight():
    with pytest.raises(InputError, match="nonnegative"):
        build_example1(Example1Params(f_fn=lambda t: np.sin(t)))


def test_example1_gamma_oracle_sign():
    oracle = Example1Oracle(Example1Params())
    for u in (-1.0, 0.0, 0.5):
        assert oracle.gamma_const(u, 10.0) < 0
    assert oracle.gamma_const(1.0, 10.0) == 0.0


def test_example2_q_bar_and_candidate():
    P = Example2Params()
    model, cand, oracle = build_example2(P)
    assert oracle.q_bar == pytest.approx(0.3 / 0.15)
    assert cand.kind == "constant" and cand.value == pytest.approx(1.0)


def test_example2_hu_identity_constant():
    P = Example2Params()
    oracle = Example2Oracle(P, 40.0)
    t, T = 3.0, 10.0
    # e^{delta t} p_t - e^{-rt} q_bar with p_t = q_bar (e^{-rho t} - e^{-rho T})
    p = oracle.q_bar * (math.exp(-P.rho * t) - math.exp(-P.rho * T))
    direct = math.exp(P.delta * t) * p - math.exp(-P.r * t) * oracle.q_bar
    assert oracle.hu(t, T) == pytest.approx(direct, rel=1e-12)


def test_example2_gamma_bound_dominates_constant_gamma():
    P = Example2Params()
    oracle = Example2Oracle(P, 40.0)
    for T in (2.0, 8.0, 32.0):
        for u in (0.0, 2.0):
            assert abs(oracle.gamma_const(u, T)) <= oracle.gamma_bound(T, 1.0) + 1e-15


@pytest.mark.parametrize("u_bar", [0.0, 0.5, 2.0])
@pytest.mark.parametrize("T", [2.0, 16.0])
def test_continuous_gap_oracle_against_quadrature(u_bar, T):
    P = Example2Params()
    assert oracle_gap_example2_const(P, u_bar, T) == pytest.approx(example2_gap_quadrature(P, u_bar, T), rel=1e-9)


def test_discrete_gap_oracle_converges_at_first_order():
    P = Example2Params()
    cont = oracle_gap_example2_const(P, 0.0, 8.0)
    errs = [abs(oracle_gap_example2_const(P, 0.0, 8.0, dt=dt) - cont) for dt in (1 / 16, 1 / 32, 1 / 64)]
    assert errs[1] / errs[0] == pytest.approx(0.5, abs=0.05)
    assert errs[2] / errs[1] == pytest.approx(0.5, abs=0.05)


def test_discrete_gap_oracle_matches_direct_sum():
    P = Example2Params()
    dt, T, u_bar = 1 / 8, 4.0, 0.25
    u_hat = P.pi_bar / P.rho - 1
    t = np.arange(int(T / dt)) * dt
    dx = (u_hat - u_bar) * np.concatenate([[0.0], np.cumsum(np.exp(P.delta * t) * dt)[:-1]])
    rate = np.exp(-P.r * t) * (np.exp(-P.delta * t) * P.pi_bar * dx - (u_hat - u_bar)
                               - 0.5 * (u_hat**2 - u_bar**2))
    assert oracle_gap_example2_const(P, u_bar, T, dt=dt) == pytest.approx(float(np.sum(rate) * dt), rel=1e-12)


def test_gap_oracle_needs_constant_productivity():
    with pytest.raises(InputError):
        oracle_gap_example2_const(Example2Params(pi="ou"), 0.0, 1.0)


def test_ou_productivity_stays_in_range():
    P = Example2Params(pi="ou", eta=0.5)
    model, cand, _ = build_example2(P, t_max=4.0)
    lat = make_lattice(1, 500, TimeGrid.from_dt(1 / 32, 4.0))
    pi = simulate_forward(model, cand, lat).exo["pi"].values
    assert pi.min() >= 0.0 and pi.max() <= P.pi_max


def test_ou_q_reduces_to_constant_when_pi_is_at_mean():
    P = Example2Params(pi="ou")
    oracle = Example2Oracle(P, 1e6)
    assert oracle.q(0.0, P.pi_bar) == pytest.approx(oracle.q_bar)


def test_param_validation():
    with pytest.raises(InputError):
        Example2Params(r=0.0).validate()
    with pytest.raises(InputError):
        Example2Params(pi="garch").validate()
    with pytest.raises(InputError):
        Example1Params(rho=-1).validate()


def test_default_challengers_respect_bounds():
    model, cand, _ = build_example2()
    specs = default_challengers("example2", model, cand)
    assert "const:0" in specs and "const:2" in specs
    assert len(default_challengers("example1", *build_example1()[:2])) == 5

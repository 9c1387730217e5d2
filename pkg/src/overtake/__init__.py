"""Numerical certificates of (weak) overtaking optimality for
infinite-horizon stochastic control problems.

The candidate control is tested by solving, for each horizon ``T`` of a
sweep, the adjoint BSDE of the stochastic maximum principle along the
candidate trajectory and evaluating

    Gamma(T) = E int_0^T H_u(t, u_hat, x_hat, p^T, h^T) (u - u_hat) dt

for a family of challenger controls.
"""

__version__ = "0.1.0"

from .errors import (
    InputError,
    LatticeMismatchError,
    ModelError,
    ModelValidationError,
    NumericalError,
    OvertakeError,
    PreconditionError,
)
from .model import (
    ControlSet,
    Exogenous,
    LinearFlags,
    ModelSpec,
    check_concavity,
    hamiltonian,
    hamiltonian_partial_u,
    hamiltonian_partial_x,
    validate_model,
)
from .paths import (
    BrownianLattice,
    ControlPolicy,
    PathEnsemble,
    TimeGrid,
    Trajectory,
    estimate_value,
    make_lattice,
    simulate_forward,
)
from .adjoint import (
    AdjointSolution,
    RegressionBasis,
    adjoint_diagnostics,
    solve_adjoint,
    solve_adjoint_explicit,
    solve_adjoint_lsmc,
)
from .certify import (
    CertificateReport,
    HorizonSweep,
    check_gap_bound,
    check_linear_equality,
    estimate_gamma,
    estimate_gap,
    run_certification,
)

__all__ = [name for name in dir() if not name.startswith("_")]

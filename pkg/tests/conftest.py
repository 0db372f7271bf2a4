"""Shared fixtures: the certified reference model and its expensive solves.

The constructed quadratic model (drift 8, terminal curvature -2) is the
workhorse of the verification tests; its base solve, Riccati oracle and
mixed-derivative profile are session-scoped because several test modules
reuse them.
"""

import numpy as np
import pytest

from mfgcert import (
    ModelSpec,
    QuadraticParams,
    RegularityConstants,
    construct_example72,
    estimate_xmu_profile,
    make_empirical,
    riccati_oracle,
    solve_mfg,
)

CANONICAL_ARGS = (1.0, 1.0, 0.5, 2.0, (1.0, 1.0, 0.0), 1.0, 1.0)
TIMES6 = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


@pytest.fixture(scope="session")
def example72():
    return construct_example72(*CANONICAL_ARGS)


@pytest.fixture(scope="session")
def mu0_32():
    rng = np.random.default_rng(7)
    return make_empirical(rng.normal(0.4, 0.6, 32))


@pytest.fixture(scope="session")
def mu0_24():
    rng = np.random.default_rng(7)
    return make_empirical(rng.normal(0.7, 0.8, 24))


@pytest.fixture(scope="session")
def base_solution(example72, mu0_32):
    return solve_mfg(example72["model"], mu0_32, 250, 801, tol=1e-9)


@pytest.fixture(scope="session")
def base_oracle(example72):
    return riccati_oracle(example72["model"])


@pytest.fixture(scope="session")
def xmu_profile(example72, base_solution):
    return estimate_xmu_profile(
        example72["model"], base_solution, TIMES6,
        atoms=12, t_steps=120, nx=301, tol=1e-10,
    )


@pytest.fixture(scope="session")
def gentle_lq():
    """Mildly coupled pure-LQ model with a well-resolved Riccati solution."""
    reg = RegularityConstants(
        l2_h0=1.0, lxx_h0_lo=0.0, lxx_h0_hi=0.0, l2_g=1.0, lxx_g_hi=1.0,
        gamma_lo=0.5, gamma_hi=2.0,
    )
    return ModelSpec(
        dim=1, a0=np.array([[0.5]]), reg=reg, horizon=0.5,
        params=QuadraticParams(g0=-0.5, g1=-0.5),
    )

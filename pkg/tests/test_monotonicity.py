import numpy as np
import pytest

from mfgcert.errors import StrictConvexityViolation
from mfgcert.measures import make_empirical
from mfgcert.models import ModelSpec, QuadraticParams, RegularityConstants
from mfgcert.monotonicity import (
    ANTI,
    DISPLACEMENT,
    HOLDS,
    LASRY_LIONS,
    VIOLATED,
    FieldDerivs,
    VecLambda,
    antimono_functional,
    classify_quadratic,
    displacement_functional,
    hamiltonian_displacement_functional,
    lasry_lions_functional,
    mc_certify,
    mc_classify,
    quadratic_field,
)


def test_veclambda_validation():
    VecLambda(1.0, -5.0, 0.1, 0.0)
    with pytest.raises(ValueError):
        VecLambda(0.0, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        VecLambda(1.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        VecLambda(1.0, 0.0, 1.0, -1.0)


def test_functionals_closed_form_on_quadratic_field():
    # for constant dxx = a0, dxmu = a1 every functional reduces to moments
    # of eta: E[eta^2] and (E[eta])^2
    rng = np.random.default_rng(5)
    for _ in range(30):
        a0, a1 = rng.uniform(-2, 2, size=2)
        lam = VecLambda(rng.uniform(0.1, 3), rng.uniform(-2, 2),
                        rng.uniform(0.1, 3), rng.uniform(0, 4))
        F = quadratic_field(float(a0), float(a1))
        xi = make_empirical(rng.standard_normal(6))
        eta = rng.standard_normal(6)
        w = xi.weights
        # xi is sorted by make_empirical, so align eta with the atoms
        e2 = float(np.dot(w, eta * eta))
        e1sq = float(np.dot(w, eta)) ** 2
        assert antimono_functional(F, lam, xi, eta) == pytest.approx(
            (lam.l0 * a0 + a0 * a0 - lam.l3) * e2
            + (lam.l1 * a1 + lam.l2 * a1 * a1) * e1sq,
            abs=1e-10,
        )
        assert lasry_lions_functional(F, xi, eta) == pytest.approx(
            a1 * e1sq, abs=1e-10
        )
        assert displacement_functional(F, xi, eta) == pytest.approx(
            a0 * e2 + a1 * e1sq, abs=1e-10
        )


def test_eta_length_mismatch():
    F = quadratic_field(1.0, 1.0)
    xi = make_empirical([0.0, 1.0])
    lam = VecLambda(1, 0, 1, 0)
    with pytest.raises(ValueError):
        antimono_functional(F, lam, xi, np.ones(3))
    with pytest.raises(ValueError):
        lasry_lions_functional(F, xi, np.ones(3))
    with pytest.raises(ValueError):
        displacement_functional(F, xi, np.ones(3))


def test_classify_quadratic_published_criteria():
    lam = VecLambda(1.0, 1.0, 1.0, 0.0)
    assert classify_quadratic(0.0, 1.0, lam)["lasry_lions"]
    assert not classify_quadratic(0.0, -0.1, lam)["lasry_lions"]
    assert classify_quadratic(1.0, -1.0, lam)["displacement"]
    assert not classify_quadratic(1.0, -1.1, lam)["displacement"]
    assert not classify_quadratic(-0.1, 1.0, lam)["displacement"]
    # anti: l3 >= max(l0 a0 + a0^2, same + l1 a1 + l2 a1^2)
    lam3 = VecLambda(1.0, 1.0, 1.0, 2.0)
    assert classify_quadratic(-1.0, 0.5, lam3)["anti"]   # max(0, 0.75) <= 2
    assert not classify_quadratic(-1.0, 2.0, lam3)["anti"]  # 0 + 2 + 4 > 2
    assert classify_quadratic(-1.0, 0.0, VecLambda(1, 1, 1, 0.0))["anti"]


def test_mc_certify_agrees_with_classifier():
    # smaller randomized version of the full acceptance grid: random
    # (a0, a1, lambda) tuples away from the decision boundary
    rng = np.random.default_rng(17)
    checked = 0
    tol = 1e-6
    for trial in range(200):
        a0, a1 = rng.uniform(-2, 2, size=2)
        lam = VecLambda(rng.uniform(0.1, 3), rng.uniform(-2, 2),
                        rng.uniform(0.1, 3), rng.uniform(0, 4))
        base = lam.l0 * a0 + a0 * a0
        slack = lam.l3 - max(base, base + lam.l1 * a1 + lam.l2 * a1 * a1)
        if min(abs(a1), abs(a0), abs(a0 + a1), abs(slack)) < tol:
            continue  # skip boundary tuples where MC noise could flip
        cls = classify_quadratic(float(a0), float(a1), lam)
        out = mc_classify(quadratic_field(float(a0), float(a1)), lam,
                          sampler=trial, trials=40, atoms=5)
        for key in (ANTI, LASRY_LIONS, DISPLACEMENT):
            assert cls[key] == (out[key].verdict != VIOLATED), (
                f"a0={a0}, a1={a1}, lam={lam}, key={key}"
            )
        checked += 1
    assert checked > 150


def test_mc_certify_matches_mc_classify_worst_values():
    F = quadratic_field(1.0, -1.0)
    lam = VecLambda(1, 1, 1, 0)
    shared = mc_classify(F, lam, sampler=42, trials=50, atoms=6)
    for key in (ANTI, LASRY_LIONS, DISPLACEMENT):
        single = mc_certify(F, lam, sampler=42, trials=50, atoms=6,
                            functional=key)
        assert single.value == pytest.approx(shared[key].value, abs=1e-12)
        assert single.verdict == shared[key].verdict


def test_mc_certify_witness_replays():
    # a clearly non-anti-monotone field must be Violated with a witness
    # whose replay reproduces the recorded worst value
    F = quadratic_field(2.0, 0.0)
    lam = VecLambda(1, 1, 1, 0)
    est = mc_certify(F, lam, sampler=0, trials=20, atoms=6)
    assert est.verdict == VIOLATED
    xi = make_empirical(est.witness[0])
    assert antimono_functional(F, lam, xi, est.witness[1]) == pytest.approx(
        est.value, abs=1e-10
    )
    # monotone direction: strongly anti-monotone field holds
    est2 = mc_certify(quadratic_field(-1.0, 0.0), VecLambda(1, 1, 1, 0.0),
                      sampler=0, trials=20, atoms=6)
    assert est2.verdict == HOLDS


def test_mc_certify_argument_errors():
    F = quadratic_field(0.0, 0.0)
    lam = VecLambda(1, 0, 1, 0)
    with pytest.raises(ValueError):
        mc_certify(F, lam, sampler=0, trials=0, atoms=4)
    with pytest.raises(ValueError):
        mc_certify(F, lam, sampler=0, trials=2, atoms=4, functional="bogus")


def _h_model(h_quad=1.0, h_xmu=0.0, h_xx=0.0):
    reg = RegularityConstants(l2_h0=1.0, lxx_h0_lo=-5.0, lxx_h0_hi=5.0,
                              l2_g=1.0, lxx_g_hi=1.0, gamma_lo=0.5,
                              gamma_hi=2.0)
    return ModelSpec(dim=1, a0=np.eye(1), reg=reg, horizon=1.0,
                     params=QuadraticParams(h_quad=h_quad, h_xmu=h_xmu,
                                            h_xx=h_xx))


def test_hamiltonian_displacement_quadratic_closed_form():
    # quadratic family has hpmu = 0, so the quarter-square term vanishes
    # and the form is h_xmu (E eta)^2 + h_xx E eta^2
    rng = np.random.default_rng(9)
    model = _h_model(h_quad=2.0, h_xmu=0.7, h_xx=-1.3)
    xi = make_empirical(rng.standard_normal(5))
    eta = rng.standard_normal(5)
    w = xi.weights
    val = hamiltonian_displacement_functional(model, lambda x: 0.5 * x, xi, eta)
    assert val == pytest.approx(
        0.7 * float(np.dot(w, eta)) ** 2 - 1.3 * float(np.dot(w, eta**2)),
        abs=1e-12,
    )


def test_hamiltonian_displacement_requires_strict_convexity():
    model = _h_model(h_quad=0.0)
    xi = make_empirical([0.0, 1.0])
    with pytest.raises(StrictConvexityViolation):
        hamiltonian_displacement_functional(model, lambda x: 0.0, xi,
                                            np.ones(2))

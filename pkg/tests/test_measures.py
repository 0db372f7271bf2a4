import numpy as np
import pytest

from mfgcert.measures import (
    EmpiricalMeasure,
    make_empirical,
    moments,
    quantile_atoms,
    w1_between_densities,
    wq_distance,
)


def test_make_empirical_sorts_and_normalizes():
    mu = make_empirical([2.0, -1.0, 0.5], weights=[2.0, 1.0, 1.0])
    assert np.all(np.diff(mu.points) >= 0)
    assert mu.points[0] == -1.0 and mu.points[-1] == 2.0
    assert abs(mu.weights.sum() - 1.0) < 1e-15
    assert mu.weights[-1] == 0.5  # the weight follows the atom when sorting


def test_measure_validation_errors():
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.array([0.0]), np.array([0.5]))  # weights != 1
    with pytest.raises(ValueError):
        make_empirical([0.0, 1.0], weights=[1.0, -0.5])
    with pytest.raises(ValueError):
        make_empirical([])
    with pytest.raises(ValueError):
        make_empirical([0.0, 1.0], weights=[1.0])


def test_two_dirac_distance_exact():
    mu = make_empirical([0.0])
    nu = make_empirical([3.0])
    assert wq_distance(mu, nu, 1) == pytest.approx(3.0, abs=1e-14)
    assert wq_distance(mu, nu, 2) == pytest.approx(3.0, abs=1e-14)


def test_uniform_pair_vs_dirac_exact():
    # two atoms at 0 and 2 vs a dirac at 0: monotone coupling moves half
    # the mass by 2, so W1 = 1 and W2 = sqrt(2)
    mu = make_empirical([0.0, 2.0])
    nu = make_empirical([0.0])
    assert wq_distance(mu, nu, 1) == pytest.approx(1.0, abs=1e-14)
    assert wq_distance(mu, nu, 2) == pytest.approx(np.sqrt(2.0), abs=1e-14)


def test_distance_properties_random():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n, m = rng.integers(1, 9, size=2)
        mu = make_empirical(rng.standard_normal(n))
        nu = make_empirical(rng.standard_normal(m))
        rho = make_empirical(rng.standard_normal(4))
        for q in (1, 2):
            d = wq_distance(mu, nu, q)
            assert d >= 0
            assert wq_distance(mu, mu, q) == pytest.approx(0.0, abs=1e-14)
            assert wq_distance(nu, mu, q) == pytest.approx(d, abs=1e-12)
            # translation invariance
            c = float(rng.standard_normal())
            assert wq_distance(mu.shifted(c), nu.shifted(c), q) == pytest.approx(
                d, abs=1e-10
            )
            # triangle inequality
            assert d <= (wq_distance(mu, rho, q) + wq_distance(rho, nu, q)) + 1e-10
        # shift by c moves every quantile by c exactly
        assert wq_distance(mu, mu.shifted(1.5), 1) == pytest.approx(1.5, abs=1e-12)
        assert wq_distance(mu, mu.shifted(1.5), 2) == pytest.approx(1.5, abs=1e-12)
        # W1 <= W2 (Jensen on the quantile coupling)
        assert wq_distance(mu, nu, 1) <= wq_distance(mu, nu, 2) + 1e-12


def test_wq_rejects_bad_order():
    mu = make_empirical([0.0, 1.0])
    with pytest.raises(ValueError):
        wq_distance(mu, mu, 3)


def test_moments():
    mu = make_empirical([1.0, 3.0], weights=[0.25, 0.75])
    mean, second = moments(mu)
    assert mean == pytest.approx(2.5)
    assert second == pytest.approx(0.25 * 1 + 0.75 * 9)


def test_quantile_atoms_gaussian():
    x = np.linspace(-6, 6, 2001)
    density = np.exp(-0.5 * (x - 0.3) ** 2) / np.sqrt(2 * np.pi)
    mu = quantile_atoms(x, density, 64)
    assert mu.n_atoms == 64
    mean, second = moments(mu)
    assert mean == pytest.approx(0.3, abs=2e-3)
    assert second - mean**2 == pytest.approx(1.0, abs=5e-2)
    # atoms are sorted mid-quantiles, hence strictly increasing here
    assert np.all(np.diff(mu.points) > 0)


def test_quantile_atoms_errors():
    x = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        quantile_atoms(x, np.ones(11), 0)
    with pytest.raises(ValueError):
        quantile_atoms(x, np.zeros(11), 4)


def test_w1_between_densities_shift():
    x = np.linspace(-10, 10, 4001)
    f1 = np.exp(-0.5 * x**2)
    f2 = np.exp(-0.5 * (x - 0.7) ** 2)
    assert w1_between_densities(x, f1, f2) == pytest.approx(0.7, abs=2e-3)
    assert w1_between_densities(x, f1, f1) == pytest.approx(0.0, abs=1e-14)

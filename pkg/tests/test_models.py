import numpy as np
import pytest

from mfgcert.measures import make_empirical, moments
from mfgcert.models import (
    ModelSpec,
    QuadraticParams,
    RegularityConstants,
    eval_g_derivs,
    eval_h_derivs,
    lions_derivative_fd,
)


def _reg(**kw):
    base = dict(l2_h0=1.0, lxx_h0_lo=0.0, lxx_h0_hi=1.0, l2_g=1.0,
                lxx_g_hi=1.0, gamma_lo=0.5, gamma_hi=2.0)
    base.update(kw)
    return RegularityConstants(**base)


def _model(a0=1.0, **params):
    return ModelSpec(dim=1, a0=np.array([[a0]]), reg=_reg(), horizon=1.0,
                     params=QuadraticParams(**params))


def test_quadratic_g_derivs_closed_form():
    model = _model(g0=-2.0, g1=0.5, g_lin=0.3)
    mu = make_empirical([0.0, 2.0])  # mean 1
    d = eval_g_derivs(model, 1.5, mu)
    assert d.g == pytest.approx(0.5 * (-2.0) * 1.5**2 + 0.5 * 1.5 + 0.3 * 1.5)
    assert d.gx == pytest.approx(-2.0 * 1.5 + 0.5 + 0.3)
    assert d.gxx == pytest.approx(-2.0)
    assert d.gxmu(7.0) == pytest.approx(0.5)


def test_quadratic_h_derivs_closed_form():
    model = _model(a0=2.0, h_quad=1.5, h_xmu=0.4, h_xx=-1.0)
    mu = make_empirical([-1.0, 3.0])  # mean 1
    x, p = 0.5, -2.0
    d = eval_h_derivs(model, x, mu, p)
    assert d.h == pytest.approx(2 * x * p + 0.75 * p * p + 0.4 * x - 0.5 * x * x)
    assert d.hx == pytest.approx(2 * p + 0.4 - x)
    assert d.hp == pytest.approx(2 * x + 1.5 * p)
    assert d.hxx == pytest.approx(-1.0)
    assert d.hxp == pytest.approx(2.0)
    assert d.hpp == pytest.approx(1.5)
    assert d.hxmu(9.9) == pytest.approx(0.4)
    assert d.hpmu(9.9) == 0.0


def test_lions_derivative_matches_closures():
    rng = np.random.default_rng(3)
    for _ in range(20):
        g0, g1, h_xmu = rng.uniform(-2, 2, size=3)
        model = _model(a0=float(rng.uniform(-1, 1)), g0=float(g0),
                       g1=float(g1), h_xmu=float(h_xmu))
        mu = make_empirical(rng.standard_normal(5))
        x = float(rng.standard_normal())
        p = float(rng.standard_normal())
        j = int(rng.integers(0, 5))
        # measure derivative of G(x, .) at any atom is g1 * x
        fd_g = lions_derivative_fd(lambda m: eval_g_derivs(model, x, m).g, mu, j)
        assert fd_g == pytest.approx(g1 * x, abs=1e-6)
        # measure derivative of H(x, ., p) at any atom is h_xmu * x
        fd_h = lions_derivative_fd(
            lambda m: eval_h_derivs(model, x, m, p).h, mu, j
        )
        assert fd_h == pytest.approx(h_xmu * x, abs=1e-6)
        # and the x-derivative of those is the gxmu / hxmu closure
        fd_gx = lions_derivative_fd(lambda m: eval_g_derivs(model, x, m).gx, mu, j)
        assert fd_gx == pytest.approx(
            eval_g_derivs(model, x, mu).gxmu(mu.points[j]), abs=1e-6
        )


def test_lions_derivative_fd_errors():
    mu = make_empirical([0.0, 1.0])
    with pytest.raises(ValueError):
        lions_derivative_fd(lambda m: moments(m)[0], mu, 0, step=0.0)
    with pytest.raises(IndexError):
        lions_derivative_fd(lambda m: moments(m)[0], mu, 5)


def test_validation_errors():
    with pytest.raises(ValueError):
        QuadraticParams(h_quad=-1.0)
    with pytest.raises(ValueError):
        _reg(gamma_lo=2.0, gamma_hi=1.0)
    with pytest.raises(ValueError):
        _reg(lxx_h0_lo=2.0, lxx_h0_hi=1.0)
    with pytest.raises(ValueError):
        _reg(la_bar=0.5)
    with pytest.raises(ValueError):
        ModelSpec(dim=1, a0=np.eye(2), reg=_reg(), horizon=1.0)
    with pytest.raises(ValueError):
        ModelSpec(dim=1, a0=np.eye(1), reg=_reg(), horizon=0.0)
    with pytest.raises(ValueError):
        ModelSpec(dim=1, a0=np.eye(1), reg=_reg(), horizon=1.0, beta=-1.0)
    with pytest.raises(ValueError):
        ModelSpec(dim=1, a0=np.eye(1), reg=_reg(), horizon=1.0,
                  g_family="cubic")


def test_custom_family_requires_closures():
    model = ModelSpec(dim=1, a0=np.eye(1), reg=_reg(), horizon=1.0,
                      g_family="custom")
    mu = make_empirical([0.0])
    with pytest.raises(ValueError):
        eval_g_derivs(model, 0.0, mu)

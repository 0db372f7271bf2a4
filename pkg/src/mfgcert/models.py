"""Problem data: Hamiltonian and terminal-cost families with derivative closures.

The canonical instance is the quadratic family

    H(x, mu, p) = a0*x*p + 0.5*h_quad*p^2 + h_xmu*x*m(mu) + 0.5*h_xx*x^2
    G(x, mu)    = 0.5*g0*x^2 + g1*x*m(mu),          m(mu) = first moment,

whose derivatives are closed-form and which admits the linear-quadratic
Riccati oracle. Custom families carry user-supplied derivative closures;
nothing is differentiated symbolically. A finite-difference realization
of the measure (Lions) derivative on the particle lift validates the
analytic closures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .measures import EmpiricalMeasure, moments

QUADRATIC = "quadratic"
CUSTOM = "custom"


@dataclass(frozen=True)
class RegularityConstants:
    """Bounds on the data derivatives feeding the certification ledger."""

    l2_h0: float          # bound on the mixed/second H0 derivatives
    lxx_h0_lo: float      # lower bound on d_xx H0
    lxx_h0_hi: float      # upper bound on d_xx H0
    l2_g: float           # bound on d_xmu G
    lxx_g_hi: float       # bound on |d_xx G|
    gamma_lo: float
    gamma_hi: float
    la_bar: float = 1.0   # admissible bound on the decay constant of exp(-A0 t)

    def __post_init__(self):
        if self.lxx_h0_lo > self.lxx_h0_hi:
            raise ValueError("lxx_h0_lo must be <= lxx_h0_hi")
        if not self.gamma_lo < self.gamma_hi:
            raise ValueError("gamma_lo must be < gamma_hi")
        if self.la_bar < 1.0:
            raise ValueError("la_bar must be >= 1")


@dataclass(frozen=True)
class QuadraticParams:
    """Coefficients of the quadratic G and H0 families."""

    g0: float = 0.0      # curvature of G in x
    g1: float = 0.0      # mean-coupling coefficient of G
    g_lin: float = 0.0   # pure linear term of G in x
    h_quad: float = 1.0  # coefficient of 0.5*p^2 in H0
    h_xmu: float = 0.0   # coefficient of x*m(mu) in H0
    h_xx: float = 0.0    # coefficient of 0.5*x^2 in H0

    def __post_init__(self):
        if self.h_quad < 0:
            raise ValueError("h_quad must be >= 0")


@dataclass(frozen=True)
class CustomFamily:
    """User-supplied derivative closures for non-quadratic data.

    g_derivs(x, mu) -> GDerivs and h_derivs(x, mu, p) -> HDerivs must
    return fully populated records; callers assert their smoothness.
    """

    g_derivs: Optional[Callable] = None
    h_derivs: Optional[Callable] = None


@dataclass(frozen=True)
class ModelSpec:
    """Full problem data for one mean field game instance."""

    dim: int
    a0: np.ndarray
    reg: RegularityConstants
    horizon: float
    beta: float = 0.0
    h0_family: str = QUADRATIC
    g_family: str = QUADRATIC
    params: QuadraticParams = field(default_factory=QuadraticParams)
    custom: CustomFamily = field(default_factory=CustomFamily)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.horizon <= 0:
            raise ValueError("horizon must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        a0 = np.atleast_2d(np.asarray(self.a0, dtype=float))
        if a0.shape != (self.dim, self.dim):
            raise ValueError(f"a0 must be {self.dim}x{self.dim}, got {a0.shape}")
        a0.setflags(write=False)
        object.__setattr__(self, "a0", a0)
        for fam in (self.h0_family, self.g_family):
            if fam not in (QUADRATIC, CUSTOM):
                raise ValueError(f"unsupported family tag {fam!r}")

    @property
    def a0_scalar(self) -> float:
        if self.dim != 1:
            raise ValueError("scalar drift matrix requires dim=1")
        return float(self.a0[0, 0])


@dataclass(frozen=True)
class GDerivs:
    g: float
    gx: float
    gxx: float
    gxmu: Callable[[float], float]


@dataclass(frozen=True)
class HDerivs:
    h: float
    hx: float
    hp: float
    hxx: float
    hxp: float
    hpp: float
    hxmu: Callable[[float], float]
    hpmu: Callable[[float], float]


def eval_g_derivs(model: ModelSpec, x: float, mu: EmpiricalMeasure) -> GDerivs:
    """Terminal cost G and its x / measure derivatives at (x, mu)."""
    if model.dim != 1:
        raise ValueError("derivative closures are implemented for dim=1 only")
    if model.g_family == CUSTOM:
        if model.custom.g_derivs is None:
            raise ValueError("custom g_family without g_derivs closure")
        return model.custom.g_derivs(x, mu)
    p = model.params
    m, _ = moments(mu)
    return GDerivs(
        g=0.5 * p.g0 * x * x + p.g1 * x * m + p.g_lin * x,
        gx=p.g0 * x + p.g1 * m + p.g_lin,
        gxx=p.g0,
        gxmu=lambda x_tilde, _c=p.g1: _c,
    )


def eval_h_derivs(model: ModelSpec, x: float, mu: EmpiricalMeasure, p: float) -> HDerivs:
    """Hamiltonian H = a0*x*p + H0 and its derivatives at (x, mu, p)."""
    if model.dim != 1:
        raise ValueError("derivative closures are implemented for dim=1 only")
    if model.h0_family == CUSTOM:
        if model.custom.h_derivs is None:
            raise ValueError("custom h0_family without h_derivs closure")
        return model.custom.h_derivs(x, mu, p)
    a0 = model.a0_scalar
    q = model.params
    m, _ = moments(mu)
    return HDerivs(
        h=a0 * x * p + 0.5 * q.h_quad * p * p + q.h_xmu * x * m + 0.5 * q.h_xx * x * x,
        hx=a0 * p + q.h_xmu * m + q.h_xx * x,
        hp=a0 * x + q.h_quad * p,
        hxx=q.h_xx,
        hxp=a0,
        hpp=q.h_quad,
        hxmu=lambda x_tilde, _c=q.h_xmu: _c,
        hpmu=lambda x_tilde: 0.0,
    )


def lions_derivative_fd(
    f: Callable[[EmpiricalMeasure], float],
    mu: EmpiricalMeasure,
    atom_index: int,
    step: float = 1e-5,
) -> float:
    """Finite-difference measure derivative of f at one atom of mu.

    Perturbs the single atom location by +-step and central-differences;
    dividing by (step * atom weight) yields the lift-gradient coordinate,
    i.e. the Lions derivative evaluated at that atom.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    if not 0 <= atom_index < mu.n_atoms:
        raise IndexError(f"atom_index {atom_index} out of range [0, {mu.n_atoms})")
    w = mu.weights[atom_index]
    if w == 0:
        raise ValueError("cannot differentiate at a zero-weight atom")
    x = mu.points[atom_index]
    f_plus = f(mu.with_point(atom_index, x + step))
    f_minus = f(mu.with_point(atom_index, x - step))
    return (f_plus - f_minus) / (2.0 * step * w)

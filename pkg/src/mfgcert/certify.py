"""Constant ledger and certification of the anti-monotone well-posedness regime.

Given problem data (drift matrix A0, regularity constants of the data),
this module derives every constant the well-posedness theorem consumes —
spectral functionals of A0, the matrix-exponential decay bound, the
Hessian-bound curve and its threshold theta3, the contraction threshold
theta1 with its condition matrices A1/A2, and the derived Hamiltonian
bounds — then evaluates the full checklist with signed margins. Margins
are always reported as (lhs - rhs) of the inequality oriented as
lhs >= rhs, so positive margin means pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import ConstructionFailed, Theta1NotLessThanOne
from .models import ModelSpec, QuadraticParams, RegularityConstants
from .monotonicity import HOLDS, VecLambda, mc_certify

_MARGIN_TOL = 1e-9  # absolute certification tolerance on margins


@dataclass(frozen=True)
class SpectralReport:
    """The four matrix functionals driving the constant ledger.

    kappa_lo / kappa_hi: extreme eigenvalues of the symmetric part;
    kappa_prime: smallest real part of the eigenvalues (spectral
    abscissa of -A); opnorm: largest singular value.
    """

    kappa_lo: float
    kappa_hi: float
    kappa_prime: float
    opnorm: float


@dataclass(frozen=True)
class ConditionMatrices:
    """The diagonal weight matrix a1, the coupling matrix a2, and theta1."""

    a1: np.ndarray
    a2: np.ndarray
    theta1: float


@dataclass(frozen=True)
class ConstantLedger:
    """Every derived constant plus the named certification checks.

    checks maps condition name -> {"pass", "margin", "lhs", "rhs"} with
    margin = lhs - rhs. xp_psd records the positive-semidefiniteness of
    a1*lxp_lo - a2*l2 (informational; certification binds on the stated
    kappa-ratio threshold, and any disagreement between the two is
    surfaced here rather than resolved silently).
    """

    spectral: SpectralReport
    la0_bound: float
    theta3: float
    lxx_u_theta3: float
    lambda0: float
    lam: VecLambda
    cond: Optional[ConditionMatrices]
    kappa_ratio: float
    derived_h: dict
    checks: dict
    xp_psd: bool
    xp_psd_min_eig: float

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks.values())

    def to_json(self) -> dict:
        """Render as the report schema: checks list + constants map."""
        constants = {
            "kappa_lo": self.spectral.kappa_lo,
            "kappa_hi": self.spectral.kappa_hi,
            "kappa_prime": self.spectral.kappa_prime,
            "opnorm": self.spectral.opnorm,
            "la0_bound": self.la0_bound,
            "theta3": self.theta3,
            "lxx_u_theta3": self.lxx_u_theta3,
            "lambda0": self.lambda0,
            "lambda1": self.lam.l1,
            "lambda2": self.lam.l2,
            "lambda3": self.lam.l3,
            "kappa_ratio": self.kappa_ratio,
            "xp_psd": self.xp_psd,
            "xp_psd_min_eig": self.xp_psd_min_eig,
            "derived_h": dict(self.derived_h),
        }
        if self.cond is not None:
            constants["theta1"] = self.cond.theta1
            constants["a1"] = self.cond.a1.tolist()
            constants["a2"] = self.cond.a2.tolist()
        return {
            "checks": [
                {"name": name, "pass": c["pass"], "margin": c["margin"],
                 "lhs": c["lhs"], "rhs": c["rhs"]}
                for name, c in self.checks.items()
            ],
            "constants": constants,
        }


def spectral(A) -> SpectralReport:
    """Compute (kappa_lo, kappa_hi, kappa_prime, opnorm) of a square matrix."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")
    sym_eigs = np.linalg.eigvalsh(0.5 * (A + A.T))
    return SpectralReport(
        kappa_lo=float(sym_eigs[0]),
        kappa_hi=float(sym_eigs[-1]),
        kappa_prime=float(np.min(np.linalg.eigvals(A).real)),
        opnorm=float(np.linalg.norm(A, 2)),
    )


def _la0_upper(A) -> tuple[float, bool]:
    """Upper bound on the decay constant of exp(-A t) from one similarity.

    For diagonalizable A with eigenvector matrix Q the bound is the
    eigenvalue ratio of Q Q*, i.e. the squared condition number of Q.
    Symmetric matrices get the exact value 1. Returns (bound, fallback)
    where fallback flags a (near-)defective matrix for which no
    well-conditioned similarity was found at working precision.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(A).max())):
        return 1.0, False
    _, Q = np.linalg.eig(A)
    gram_eigs = np.linalg.eigvalsh(Q @ Q.conj().T)
    if gram_eigs[0] <= 1e-24 * gram_eigs[-1]:
        return math.inf, True
    return float(gram_eigs[-1] / gram_eigs[0]), False


def _expm_norms(A, t_grid) -> np.ndarray:
    """Operator norms of exp(-A t) over the grid.

    On a uniform grid the exponentials are cumulative products of a
    single step matrix, assembled by repeated multiplication and normed
    by one batched SVD; otherwise each exponential is computed directly.
    """
    t = np.asarray(t_grid, dtype=float)
    diffs = np.diff(t)
    uniform = t.size >= 2 and np.allclose(diffs, diffs[0], rtol=1e-12, atol=1e-15)
    mats = np.empty((t.size,) + A.shape)
    if uniform:
        step = scipy.linalg.expm(-A * diffs[0])
        mats[0] = scipy.linalg.expm(-A * t[0])
        for k in range(1, t.size):
            mats[k] = mats[k - 1] @ step
    else:
        for k, tk in enumerate(t):
            mats[k] = scipy.linalg.expm(-A * tk)
    return np.linalg.svd(mats, compute_uv=False)[:, 0]


def exp_decay_bound(A0, t_grid, tol: float = 1e-9) -> dict:
    """Decay-constant bound for exp(-A0 t), verified on a time grid.

    Returns {"la0_upper", "violations", "fallback", "sharp_violations"}.
    violations counts grid points where |exp(-A0 t)| exceeds
    sqrt(la0_upper) * exp((1 - kappa_prime) t) beyond tol. When the
    eigenbasis is too ill-conditioned (defective matrix) the bound falls
    back to the empirical envelope on the supplied grid, flagged via
    "fallback". For symmetric A0 the bound is exactly 1 and
    sharp_violations additionally counts failures of the tighter
    envelope exp(-kappa_prime t); it is None otherwise.
    """
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    if A0.shape[0] != A0.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A0.shape}")
    t = np.asarray(t_grid, dtype=float)
    if np.any(t < 0):
        raise ValueError("t_grid must be nonnegative")
    rep = spectral(A0)
    la0, fallback = _la0_upper(A0)
    norms = _expm_norms(A0, t)
    envelope = np.exp((1.0 - rep.kappa_prime) * t)
    if fallback:
        la0 = max(1.0, float(np.max((norms / envelope) ** 2)))
    violations = int(np.sum(norms > np.sqrt(la0) * envelope * (1.0 + tol) + tol))
    sharp = None
    if la0 == 1.0 and not fallback:
        # growing modes make an absolute tolerance meaningless; compare
        # against the sharp envelope with the same tolerance taken relative
        sharp_env = np.exp(-rep.kappa_prime * t)
        sharp = int(np.sum(norms > sharp_env * (1.0 + tol) + tol))
    return {
        "la0_upper": la0,
        "violations": violations,
        "fallback": fallback,
        "sharp_violations": sharp,
    }


def theta1(lam: VecLambda, gamma_lo: float, gamma_hi: float, lvxx: float) -> float:
    """Contraction threshold gamma_hi(1+lvxx)/sqrt(4(gamma_lo*l0 + 2*l3)).

    Raises Theta1NotLessThanOne when the threshold fails, equivalently
    when l0 <= (gamma_hi^2 (1+lvxx)^2 - 8 l3) / (4 gamma_lo).
    """
    if not gamma_lo < gamma_hi:
        raise ValueError("gamma_lo must be < gamma_hi")
    denom = 4.0 * (gamma_lo * lam.l0 + 2.0 * lam.l3)
    if denom <= 0:
        raise ValueError("gamma_lo*l0 + 2*l3 must be positive")
    value = gamma_hi * (1.0 + lvxx) / math.sqrt(denom)
    if value >= 1.0:
        raise Theta1NotLessThanOne(value)
    return value


def condition_matrices(
    lam: VecLambda, theta1: float, gamma_lo: float, lvxx: float
) -> ConditionMatrices:
    """Assemble the weight matrix a1 and the coupling matrix a2.

    a1 = diag(4(1-theta1), 2*l2, (1-theta1)(l0*gamma_lo + 2*l3));
    a2 is the fixed symmetric matrix in (l0, l1, l2, l3) plus lvxx times
    its companion. Requires theta1 < 1 so a1 is positive on the diagonal.
    """
    if theta1 >= 1.0:
        raise Theta1NotLessThanOne(theta1)
    l0, l1, l2, l3 = lam.l0, lam.l1, lam.l2, lam.l3
    a1 = np.diag([
        4.0 * (1.0 - theta1),
        2.0 * l2,
        (1.0 - theta1) * (l0 * gamma_lo + 2.0 * l3),
    ])
    m = abs(l0 - 0.5 * l1) + l3
    base = np.array([
        [l0, l0, m],
        [l0, abs(l1), 0.5 * abs(l1) + l2 + l3],
        [m, 0.5 * abs(l1) + l2 + l3, abs(l1) + 2.0 * l3],
    ])
    companion = np.array([
        [0.0, 1.0, 1.0],
        [1.0, l2, l2],
        [1.0, l2, 0.0],
    ])
    return ConditionMatrices(a1=a1, a2=base + lvxx * companion, theta1=theta1)


def xp_threshold(cond: ConditionMatrices, l2h: float, lxp_lo: float) -> dict:
    """Evaluate both forms of the lower cross-derivative condition.

    stated_condition: lxp_lo >= kappa_lo(a1^{-1} a2) * l2h, with the
    kappa functional taken on the symmetric part. psd_condition:
    a1*lxp_lo - a2*l2h is positive semidefinite (relative tolerance).
    The two can disagree for non-symmetric a1^{-1} a2; both are
    reported.
    """
    a1, a2 = cond.a1, cond.a2
    if abs(np.linalg.det(a1)) < 1e-300:
        raise ValueError("a1 is singular")
    ratio_mat = np.linalg.solve(a1, a2)
    kappa_ratio = float(np.linalg.eigvalsh(0.5 * (ratio_mat + ratio_mat.T))[0])
    gap = a1 * lxp_lo - a2 * l2h
    min_eig = float(np.linalg.eigvalsh(0.5 * (gap + gap.T))[0])
    scale = max(1e-300, float(np.linalg.norm(gap, 2)))
    return {
        "kappa_ratio": kappa_ratio,
        "stated_condition": bool(lxp_lo >= kappa_ratio * l2h),
        "psd_condition": bool(min_eig >= -1e-12 * scale),
        "psd_min_eig": min_eig,
    }


def theta3_lxx(l2h0: float, la_bar: float, lxxg_hi: float) -> dict:
    """The Hessian-bound threshold theta3 and the bound curve lxx_u.

    theta3 = 1 + l2h0*la_bar*(1 + s + sqrt((1+s)^2 - 1)) with
    s = lxxg_hi*la_bar; lxx_u(theta) solves the quadratic bound
    relation and is defined (real discriminant) exactly for
    theta >= theta3, strictly decreasing there.
    """
    if l2h0 <= 0 or lxxg_hi <= 0:
        raise ValueError("l2h0 and lxxg_hi must be positive")
    if la_bar < 1.0:
        raise ValueError("la_bar must be >= 1")
    s = lxxg_hi * la_bar
    c = l2h0 * la_bar
    # larger root of the discriminant (in y = theta - 1); the smaller root
    # is c^2 / y_root, and the factored form below is exact at the root,
    # avoiding the catastrophic cancellation of the expanded quadratic
    y_root = c * (1.0 + s + math.sqrt((1.0 + s) ** 2 - 1.0))
    theta3 = 1.0 + y_root

    def lxx_u(theta: float) -> float:
        if theta < theta3 - 1e-12:
            raise ValueError(
                f"lxx_u undefined below theta3: {theta} < {theta3}"
            )
        yd = max(theta - theta3, 0.0)
        disc = yd * (yd + y_root - c * c / y_root)
        return (yd + y_root - c - math.sqrt(disc)) / c

    return {"theta3": theta3, "lvxx": lxx_u(theta3), "lxx_u": lxx_u}


def derived_h_bounds(A0, l2h0: float) -> dict:
    """Hamiltonian cross-derivative bounds induced by drift A0.

    lxp_lo = kappa_lo(A0) - l2h0, lxp_hi = |A0| + l2h0, l2 = l2h0.
    """
    rep = spectral(A0)
    return {
        "lxp_lo": rep.kappa_lo - l2h0,
        "lxp_hi": rep.opnorm + l2h0,
        "l2": l2h0,
    }


def _check(lhs: float, rhs: float) -> dict:
    margin = lhs - rhs
    return {"pass": bool(margin >= -_MARGIN_TOL), "margin": float(margin),
            "lhs": float(lhs), "rhs": float(rhs)}


def certify_wellposedness(model: ModelSpec, l123=(1.0, 1.0, 0.0)) -> ConstantLedger:
    """Run the full certification checklist and return the constant ledger.

    l123 supplies the free weights (l1, l2, l3); l0 is always taken from
    the constructive formula gamma_hi^2 (1+lvxx)^2/(4 gamma_lo)
    - 2 l3/gamma_lo + 1, which makes theta1 < 1 automatic whenever
    gamma_lo > 0. Failing conditions are recorded with negative margins,
    never raised.
    """
    reg = model.reg
    rep = spectral(model.a0)
    la0_bound, _ = _la0_upper(model.a0)
    th3 = theta3_lxx(reg.l2_h0, reg.la_bar, reg.lxx_g_hi)
    lvxx = th3["lvxx"]
    l1, l2, l3 = (float(v) for v in l123)
    lambda0 = (reg.gamma_hi**2 * (1.0 + lvxx) ** 2 - 8.0 * l3) / (
        4.0 * reg.gamma_lo
    ) + 1.0
    lam = VecLambda(lambda0, l1, l2, l3)
    dh = derived_h_bounds(model.a0, reg.l2_h0)
    dh["lxx_lo"] = reg.lxx_h0_lo
    dh["lxx_hi"] = reg.lxx_h0_hi

    checks = {}
    checks["i.gamma_lo_le_LGxx"] = _check(reg.lxx_g_hi, reg.gamma_lo)
    checks["i.gamma_hi_gt_one"] = _check(reg.gamma_hi, 1.0)

    denom = 4.0 * (reg.gamma_lo * lambda0 + 2.0 * l3)
    th1 = reg.gamma_hi * (1.0 + lvxx) / math.sqrt(denom) if denom > 0 else math.inf
    checks["i.theta"] = _check(1.0, th1)

    if th1 < 1.0:
        cond = condition_matrices(lam, th1, reg.gamma_lo, lvxx)
        thr = xp_threshold(cond, reg.l2_h0, dh["lxp_lo"])
        kappa_ratio = thr["kappa_ratio"]
        psd, psd_eig = thr["psd_condition"], thr["psd_min_eig"]
        checks["kA0.xp_threshold"] = _check(
            rep.kappa_lo, (1.0 + kappa_ratio) * reg.l2_h0
        )
    else:
        cond, kappa_ratio, psd, psd_eig = None, math.nan, False, math.nan
        checks["kA0.xp_threshold"] = _check(1.0 - th1, 1.0)

    checks["kA0.la0"] = _check(reg.la_bar, la0_bound)
    checks["kA0.kappa_prime"] = _check(rep.kappa_prime, th3["theta3"])
    checks["kA0.gap"] = _check(
        reg.gamma_hi * (rep.kappa_lo - reg.l2_h0), rep.opnorm + reg.l2_h0
    )
    checks["LH0.lower"] = _check(
        reg.lxx_h0_lo, reg.gamma_lo * (rep.kappa_lo - reg.l2_h0)
    )
    checks["LH0.upper"] = _check(
        min(
            reg.gamma_hi * (rep.kappa_lo - reg.l2_h0),
            2.0 * reg.lxx_g_hi * (rep.kappa_prime - 1.0),
        ),
        reg.lxx_h0_hi,
    )

    if model.g_family == "quadratic":
        g0, g1 = model.params.g0, model.params.g1
        base = lambda0 * g0 + g0 * g0
        checks["G.antimonotone"] = _check(
            l3, max(base, base + l1 * g1 + l2 * g1 * g1)
        )
    else:
        F_g = _g_field(model)
        est = mc_certify(F_g, lam, sampler=0, trials=64, atoms=16)
        checks["G.antimonotone"] = _check(
            -est.value if est.verdict == HOLDS else -abs(est.value), 0.0
        )

    return ConstantLedger(
        spectral=rep,
        la0_bound=la0_bound,
        theta3=th3["theta3"],
        lxx_u_theta3=lvxx,
        lambda0=lambda0,
        lam=lam,
        cond=cond,
        kappa_ratio=kappa_ratio,
        derived_h=dh,
        checks=checks,
        xp_psd=psd,
        xp_psd_min_eig=psd_eig,
    )


def _g_field(model: ModelSpec):
    from .models import eval_g_derivs
    from .monotonicity import FieldDerivs

    def dxx(x, mu):
        return eval_g_derivs(model, x, mu).gxx

    def dxmu(x, mu, xt):
        return eval_g_derivs(model, x, mu).gxmu(xt)

    return FieldDerivs(dxx=dxx, dxmu=dxmu)


def construct_example72(
    alpha_lo: float,
    alpha_hi: float,
    gamma_lo: float,
    gamma_hi: float,
    l123,
    l2g: float,
    l2h0: float,
    horizon: float = 0.5,
    m0_start: float = 2.0,
    max_doublings: int = 60,
) -> dict:
    """Constructive search for a certified quadratic-family model.

    Scales a single parameter m0 upward by doubling; each candidate sets
    drift a0 = m0^3, terminal curvature g0 = -alpha_lo*m0 (with bound
    |gxx| <= alpha_hi*m0), mean coupling g1 = -min(l2g, alpha_lo*m0),
    and running curvature h_xx at the lower end of the admissible band
    [gamma_lo*(a0-l2h0), gamma_hi*(a0-l2h0)]. Returns the first
    certified candidate as {"m0", "lambda0", "model", "ledger"}; raises
    ConstructionFailed with the last ledger if the cap is hit.
    """
    if not (alpha_lo > 0 and alpha_hi >= alpha_lo):
        raise ValueError("need 0 < alpha_lo <= alpha_hi")
    if gamma_hi <= 1.0:
        raise ValueError("gamma_hi must be > 1")
    if not 0 < gamma_lo < gamma_hi:
        raise ValueError("need 0 < gamma_lo < gamma_hi")
    if l2g <= 0 or l2h0 <= 0:
        raise ValueError("l2g and l2h0 must be positive")
    l1, l2, l3 = (float(v) for v in l123)
    if l2 <= 0 or l3 < 0:
        raise ValueError("inadmissible (l1, l2, l3): need l2 > 0, l3 >= 0")

    ledger = None
    m0 = m0_start
    for _ in range(max_doublings + 1):
        a0 = m0**3
        reg = RegularityConstants(
            l2_h0=l2h0,
            lxx_h0_lo=gamma_lo * (a0 - l2h0),
            lxx_h0_hi=gamma_hi * (a0 - l2h0),
            l2_g=l2g,
            lxx_g_hi=alpha_hi * m0,
            gamma_lo=gamma_lo,
            gamma_hi=gamma_hi,
            la_bar=1.0,
        )
        model = ModelSpec(
            dim=1,
            a0=np.array([[a0]]),
            reg=reg,
            horizon=horizon,
            params=QuadraticParams(
                g0=-alpha_lo * m0,
                g1=-min(l2g, alpha_lo * m0),
                h_quad=1.0,
                h_xmu=0.0,
                h_xx=gamma_lo * (a0 - l2h0),
            ),
        )
        ledger = certify_wellposedness(model, l123=(l1, l2, l3))
        if ledger.passed:
            return {
                "m0": m0,
                "lambda0": ledger.lambda0,
                "model": model,
                "ledger": ledger,
            }
        m0 *= 2.0
    failing = [n for n, c in ledger.checks.items() if not c["pass"]]
    raise ConstructionFailed(
        f"no certified m0 within {max_doublings} doublings from {m0_start}"
        f" (last failing checks: {', '.join(failing)})",
        ledger=ledger,
    )

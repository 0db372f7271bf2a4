"""End-to-end acceptance battery for the certification pipeline.

One test per claim: classifier vs falsifier agreement, closed-form
constant identities, the matrix-exponential decay bound, the constructive
example, LQ oracle equivalence of the dynamic solver, propagation of
anti-monotonicity along the linearized flow, measure-Lipschitz stability
of the decoupling field, the Hessian bound, the uniqueness probe, and
byte-level determinism of the CLI artifacts.
"""

import dataclasses
import math
import os
import time

import numpy as np
import pytest

from mfgcert import (
    certify_wellposedness,
    construct_example72,
    estimate_xmu_lipschitz,
    exp_decay_bound,
    hessian_bound_check,
    make_empirical,
    master_residual,
    riccati_oracle,
    simulate_linearized_flow,
    solve_mfg,
    theta3_lxx,
)
from mfgcert.cli import cli_dispatch
from mfgcert.errors import NoConvergence
from mfgcert.measures import w1_between_densities
from mfgcert.monotonicity import (
    ANTI,
    HOLDS,
    VIOLATED,
    FieldDerivs,
    VecLambda,
    classify_quadratic,
    mc_certify,
    mc_classify,
    quadratic_field,
)

from conftest import CANONICAL_ARGS, TIMES6


def test_criterion_01_quadratic_classification_grid():
    # closed-form classification vs randomized falsification on a 41x41
    # parameter grid with a fresh admissible weight vector per point
    start = time.monotonic()
    rng = np.random.default_rng(0)
    disagreements = 0
    n = 0
    for a0 in np.linspace(-2.0, 2.0, 41):
        for a1 in np.linspace(-2.0, 2.0, 41):
            lam = VecLambda(rng.uniform(0.1, 3), rng.uniform(-2, 2),
                            rng.uniform(0.1, 3), rng.uniform(0, 4))
            cls = classify_quadratic(float(a0), float(a1), lam)
            out = mc_classify(quadratic_field(float(a0), float(a1)), lam,
                              sampler=n, trials=500, atoms=4)
            for key in cls:
                if cls[key] != (out[key].verdict != VIOLATED):
                    disagreements += 1
            n += 1
    elapsed = time.monotonic() - start
    print(f"criterion 1: {n} grid points, {disagreements} disagreements, "
          f"{elapsed:.1f}s")
    assert disagreements == 0
    assert elapsed < 120.0


def test_criterion_02_hessian_bound_curve_identities():
    start = time.monotonic()
    rng = np.random.default_rng(12)
    for _ in range(100):
        l2h0 = float(rng.uniform(0.1, 3.0))
        la_bar = float(rng.uniform(1.0, 3.0))
        lxxg = float(rng.uniform(0.1, 3.0))
        out = theta3_lxx(l2h0, la_bar, lxxg)
        theta3, lxx_u = out["theta3"], out["lxx_u"]
        c = l2h0 * la_bar
        # (i) the discriminant vanishes exactly at the threshold
        shifted = theta3 - 1.0 - c
        disc = shifted**2 - 2.0 * l2h0 * lxxg * la_bar**2 * (theta3 - 1.0)
        assert abs(disc) < 1e-10 * max(1.0, shifted**2)
        # (ii) closed form of the bound at the threshold
        s = lxxg * la_bar
        assert abs(lxx_u(theta3) - (s + math.sqrt((1.0 + s) ** 2 - 1.0))) < 1e-10
        # (iii) the bound satisfies its defining fixed-point relation
        for theta in np.linspace(theta3, theta3 + 8.0, 20):
            l0 = lxx_u(float(theta))
            lhs = l0 * (2.0 * (theta - 1.0) - c * (2.0 + l0))
            rhs = 2.0 * lxxg * la_bar * (theta - 1.0)
            assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(rhs))
        # (iv) strict monotone decrease past the threshold
        vals = [lxx_u(float(t)) for t in np.linspace(theta3, theta3 + 8.0, 20)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
    elapsed = time.monotonic() - start
    print(f"criterion 2: 100 triples, {elapsed:.2f}s")
    assert elapsed < 1.0


def test_criterion_03_matrix_exponential_decay_bound():
    start = time.monotonic()
    rng = np.random.default_rng(6)
    t_grid = np.arange(0.0, 20.0 + 1e-9, 0.01)
    violations = sharp = 0
    for i in range(1000):
        d = int(rng.integers(2, 4))
        if i < 500:
            m = rng.standard_normal((d, d))
            a = 0.5 * (m + m.T)
        else:
            s = rng.standard_normal((d, d)) + 2.0 * np.eye(d)
            eigs = rng.uniform(-1.0, 2.0, d)
            if i % 2 == 0 and d >= 2:
                # genuine Jordan block: repeated eigenvalue, one off-diagonal
                j = np.diag(np.full(d, eigs[0]))
                j[0, 1] = 1.0
            else:
                j = np.diag(eigs)
            a = s @ j @ np.linalg.inv(s)
        out = exp_decay_bound(a, t_grid, tol=1e-9)
        violations += out["violations"]
        if out["sharp_violations"] is not None:
            sharp += out["sharp_violations"]
    elapsed = time.monotonic() - start
    print(f"criterion 3: 1000 matrices, {violations} violations, "
          f"{sharp} sharp violations, {elapsed:.1f}s")
    assert violations == 0
    assert sharp == 0
    assert elapsed < 30.0


def test_criterion_04_constructive_example(example72):
    start = time.monotonic()
    ledger = example72["ledger"]
    assert ledger.passed
    reg = example72["model"].reg
    lvxx = ledger.lxx_u_theta3
    l3 = ledger.lam.l3
    formula = (reg.gamma_hi**2 * (1.0 + lvxx) ** 2 - 8.0 * l3) / (
        4.0 * reg.gamma_lo
    ) + 1.0
    assert abs(ledger.lambda0 - formula) < 1e-12
    # doubling the found scale parameter must still certify
    doubled = construct_example72(*CANONICAL_ARGS,
                                  m0_start=2.0 * example72["m0"])
    assert doubled["ledger"].passed
    elapsed = time.monotonic() - start
    print(f"criterion 4: m0={example72['m0']}, lambda0={ledger.lambda0:.6f}, "
          f"{elapsed:.2f}s")
    assert elapsed < 5.0


def test_criterion_05_lq_oracle_equivalence(example72, mu0_24, base_oracle):
    start = time.monotonic()
    model = example72["model"]
    oracle = base_oracle

    def grid_error(t_steps, nx):
        sol = solve_mfg(model, mu0_24, t_steps, nx, tol=1e-10)
        m = sol.mean_series
        p = oracle.p_curve(sol.t_grid)
        q = oracle.q_curve(sol.t_grid)
        return float(np.max(np.abs(
            sol.ux - (p[:, None] * sol.x_grid[None, :] + (q * m)[:, None])
        )))

    # dx = 1e-2 over the automatically resolved domain, dt = 1e-3
    probe = solve_mfg(model, mu0_24, 50, 101)
    span = float(probe.x_grid[-1] - probe.x_grid[0])
    nx = int(round(span / 1e-2)) + 1
    err_coarse = grid_error(500, nx)
    err_fine = grid_error(1000, 2 * nx - 1)
    residual = max(
        abs(master_residual(oracle, model, t, x))
        for t in (0.1, 0.25, 0.4) for x in (-1.0, 0.5, 2.0)
    )
    elapsed = time.monotonic() - start
    print(f"criterion 5: err={err_coarse:.3e}, halved={err_fine:.3e} "
          f"(ratio {err_fine / err_coarse:.3f}), residual={residual:.2e}, "
          f"{elapsed:.1f}s")
    assert err_coarse <= 5e-3
    assert err_fine <= 0.6 * err_coarse
    assert residual < 1e-6


def test_criterion_06_propagation_of_antimonotonicity(
        example72, base_solution, xmu_profile, mu0_32):
    start = time.monotonic()
    model = example72["model"]
    lam = example72["ledger"].lam
    sol = base_solution
    noise_floor = 1e-3

    verdicts = {}
    for i, t in enumerate(TIMES6):
        field = FieldDerivs(
            dxx=lambda x, mu, t=t: float(sol.uxx_at(t, x)),
            dxmu=lambda x, mu, xt, t=t: xmu_profile(t, x, xt),
        )
        est = mc_certify(field, lam, sampler=100 + i, trials=64, atoms=32,
                         functional=ANTI, noise_floor=noise_floor)
        verdicts[t] = (est.verdict, est.value)
        assert est.verdict == HOLDS, f"t={t}: {est.verdict} ({est.value})"
        assert est.value <= 3.0 * noise_floor

    rng = np.random.default_rng(19)
    eta = rng.standard_normal(mu0_32.n_atoms)
    trace = simulate_linearized_flow(
        model, sol, lam, mu0_32.points, eta, 100, seed=11,
        xmu_profile=xmu_profile, replicas=16,
    )
    g = trace.gamma_series
    dt = float(trace.t_grid[1] - trace.t_grid[0])
    allowance = 3.0 * noise_floor + 5.0 * dt * max(1.0, float(np.max(np.abs(g))))
    min_inc = float(np.min(np.diff(g)))
    elapsed = time.monotonic() - start
    print(f"criterion 6: worst values "
          f"{[f'{v:+.3g}' for _, v in verdicts.values()]}, "
          f"Gamma0={g[0]:+.3g}, GammaT={g[-1]:+.3g}, min_inc={min_inc:+.2e}, "
          f"{elapsed:.1f}s")
    assert min_inc >= -allowance
    assert g[-1] <= noise_floor


def test_criterion_07_measure_lipschitz(example72, base_oracle, gentle_lq):
    start = time.monotonic()
    model = example72["model"]
    rng = np.random.default_rng(7)
    mu0 = make_empirical(rng.normal(0.4, 0.6, 16))
    out = estimate_xmu_lipschitz(model, mu0, [-1.0, 0.0, 1.0],
                                 [0.2, 0.1, 0.05], t_steps=150, nx=351)
    per_scale = {}
    for row in out["per_bump"]:
        per_scale[row["scale"]] = max(per_scale.get(row["scale"], 0.0),
                                      row["ratio"])
    best = max(per_scale.values())
    variation = (best - min(per_scale.values())) / best
    assert variation < 0.2

    # on the pure-LQ model the exact constant is |Q_0| of the Riccati flow
    oracle = riccati_oracle(gentle_lq)
    q0 = abs(float(oracle.q_grid[0]))
    lq_out = estimate_xmu_lipschitz(gentle_lq, mu0, [-1.0, 0.0, 1.0], [0.1],
                                    t_steps=150, nx=351)
    rel_err = abs(lq_out["lipschitz_estimate"] - q0) / q0
    elapsed = time.monotonic() - start
    print(f"criterion 7: variation={variation:.3g}, "
          f"LQ estimate={lq_out['lipschitz_estimate']:.5f} vs |Q0|={q0:.5f} "
          f"(rel {rel_err:.2e}), {elapsed:.1f}s")
    assert rel_err < 0.05


def test_criterion_08_hessian_bound(example72, base_solution, base_oracle):
    check = hessian_bound_check(base_solution, example72["ledger"])
    assert check["pass"]
    assert check["sup_uxx"] <= check["bound"] * 1.05
    # the LQ field is exactly P_t x + Q_t m, so sup |u_xx| = max |P_t|
    p_max = float(np.max(np.abs(base_oracle.p_grid)))
    rel = abs(check["sup_uxx"] - p_max) / p_max
    print(f"criterion 8: sup_uxx={check['sup_uxx']:.4f}, "
          f"bound={check['bound']:.4f}, maxP={p_max:.4f} (rel {rel:.2e})")
    assert rel < 0.02


def test_criterion_09_uniqueness_probe(example72, mu0_24):
    model = example72["model"]
    sol_zero = solve_mfg(model, mu0_24, 300, 601, tol=1e-10, init="zero")
    sol_term = solve_mfg(model, mu0_24, 300, 601, tol=1e-10, init="terminal")
    sup_w1 = max(
        w1_between_densities(sol_zero.x_grid, a, b)
        for a, b in zip(sol_zero.rho, sol_term.rho)
    )
    print(f"criterion 9: certified-model sup_t W1 = {sup_w1:.3e}")
    assert sup_w1 <= 1e-4

    # flipped terminal concavity: the model leaves the certified regime;
    # the probe must either agree across initializations or flag failure
    flipped = dataclasses.replace(
        model, params=dataclasses.replace(model.params, g0=2.0)
    )
    assert not certify_wellposedness(flipped, l123=(1.0, 1.0, 0.0)).passed
    try:
        f_zero = solve_mfg(flipped, mu0_24, 300, 601, tol=1e-10, init="zero")
        f_term = solve_mfg(flipped, mu0_24, 300, 601, tol=1e-10,
                           init="terminal")
    except NoConvergence:
        print("criterion 9: flipped model flagged NoConvergence")
    else:
        sup_flip = max(
            w1_between_densities(f_zero.x_grid, a, b)
            for a, b in zip(f_zero.rho, f_term.rho)
        )
        print(f"criterion 9: flipped model converged, sup_t W1 = "
              f"{sup_flip:.3e}")
        assert sup_flip <= 1e-4


DETERMINISM_CONFIG = """
[model]
a0 = 1
horizon = 0.5
g0 = -0.5

[experiment]
t_steps = 60
nx = 201
mu_atoms = 8
mu_std = 0.4
n_steps = 40
replicas = 4
"""


def test_criterion_10_byte_identical_reruns(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(DETERMINISM_CONFIG)
    outputs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        code = cli_dispatch(["gamma-flow", "--config", str(cfg), "--seed",
                             "17", "--out", out])
        assert code in (0, 1)
        outputs.append(open(os.path.join(out, "gamma_trace.csv"), "rb").read())
        code = cli_dispatch(["solve", "--config", str(cfg), "--seed", "17",
                             "--out", out])
        assert code == 0
        outputs.append(open(os.path.join(out, "solution.csv"), "rb").read())
    assert outputs[0] == outputs[2]  # gamma_trace.csv
    assert outputs[1] == outputs[3]  # solution.csv
    assert outputs[0].startswith(b"t,I,Ibar,Gamma,mean_dX2\n")
    print("criterion 10: gamma_trace.csv and solution.csv byte-identical")

"""Command-line entry points tying certification, solving and verification
into reproducible runs.

Every subcommand reads one config file, derives per-component seeds from
the master seed by stable hashing, writes `report.json` plus one CSV per
table into the output directory, and exits 0 only when all asserted
checks pass (1 = failed checks, 2 = config error, 3 = solver failure).
Reruns with identical (config, seed) produce byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .certify import certify_wellposedness, construct_example72
from .config import RunConfig, parse_config
from .errors import (
    BlowUp,
    ConfigError,
    ConstructionFailed,
    GridEscape,
    MfgCertError,
    NoConvergence,
)
from .measures import make_empirical, w1_between_densities
from .monotonicity import HOLDS, FieldDerivs, VecLambda, mc_certify
from .solver import (
    estimate_xmu_lipschitz,
    estimate_xmu_profile,
    flow_to_csv,
    hessian_bound_check,
    master_residual,
    riccati_oracle,
    simulate_linearized_flow,
    solution_to_csv,
    solve_mfg,
)

_SUBCOMMANDS = (
    "certify", "construct-example", "solve", "check-antimono", "gamma-flow",
    "lipschitz", "hessian", "lq-validate", "sweep",
)


def component_seed(master: int, name: str) -> int:
    """Stable per-component seed: adding experiments never shifts streams."""
    digest = hashlib.sha256(f"{master}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def write_report(report: dict, out_dir: str) -> None:
    """Write report.json (UTF-8, no BOM) into the output directory."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                v if isinstance(v, str) else _fmt(v) for v in row
            ) + "\n")


def _mu0(cfg: RunConfig, master_seed: int):
    e = cfg.experiment
    rng = np.random.default_rng(component_seed(master_seed, "mu0"))
    pts = e["mu_mean"] + e["mu_std"] * rng.standard_normal(e["mu_atoms"])
    return make_empirical(pts)


def _resolve_lambda(cfg: RunConfig):
    """The run's weight vector, plus the ledger when lambda0 is derived."""
    ledger = certify_wellposedness(cfg.model, cfg.l123)
    if cfg.lambda0 == "auto":
        return ledger.lam, ledger
    l1, l2, l3 = cfg.l123
    return VecLambda(float(cfg.lambda0), l1, l2, l3), ledger


def _base_solution(cfg: RunConfig):
    e = cfg.experiment
    return solve_mfg(
        cfg.model, _mu0(cfg, cfg._seed), e["t_steps"], e["nx"],
        tol=e["tol"], max_picard=e["max_picard"],
    )


def _solved_field(sol, profile, t: float) -> FieldDerivs:
    return FieldDerivs(
        dxx=lambda x, mu, t=t: float(sol.uxx_at(t, x)),
        dxmu=lambda x, mu, xt, t=t: profile(t, x, xt),
    )


# ---------------------------------------------------------------------------
# subcommands


def _cmd_certify(cfg, out_dir, report):
    ledger = certify_wellposedness(cfg.model, cfg.l123)
    report.update(ledger.to_json())
    for item in report["checks"]:
        status = "pass" if item["pass"] else "FAIL"
        print(f"  {item['name']:24s} {status}  margin={item['margin']:+.6g}")
    return 0 if ledger.passed else 1


def _cmd_construct_example(cfg, out_dir, report):
    e = cfg.experiment
    reg = cfg.model.reg
    try:
        res = construct_example72(
            e["alpha_lo"], e["alpha_hi"], reg.gamma_lo, reg.gamma_hi,
            cfg.l123, reg.l2_g, reg.l2_h0, horizon=cfg.model.horizon,
            m0_start=e["m0_start"], max_doublings=e["max_doublings"],
        )
    except ConstructionFailed as exc:
        report["error"] = str(exc)
        if exc.ledger is not None:
            report.update(exc.ledger.to_json())
        print(f"construction failed: {exc}", file=sys.stderr)
        return 1
    report.update(res["ledger"].to_json())
    report["m0"] = res["m0"]
    report["lambda0"] = res["lambda0"]
    print(f"certified at m0 = {res['m0']} with lambda0 = {res['lambda0']:.6g}")
    return 0


def _cmd_solve(cfg, out_dir, report):
    sol = _base_solution(cfg)
    solution_to_csv(sol, os.path.join(out_dir, "solution.csv"))
    report["metrics"] = {
        "picard_residuals": sol.picard_residuals,
        "mass_error": float(np.max(np.abs(sol.rho.sum(axis=1) * sol.dx - 1.0))),
        "sup_uxx": float(np.max(np.abs(sol.uxx))),
    }
    return 0


def _cmd_lq_validate(cfg, out_dir, report):
    e = cfg.experiment
    oracle = riccati_oracle(cfg.model)
    sol = _base_solution(cfg)
    m = sol.mean_series
    p = oracle.p_curve(sol.t_grid)
    q = oracle.q_curve(sol.t_grid)
    err = float(np.max(np.abs(
        sol.ux - (p[:, None] * sol.x_grid[None, :] + (q * m)[:, None])
    )))
    interior_t = sol.t_grid[1:-1:max(1, sol.t_grid.size // 8)]
    interior_x = sol.x_grid[sol.x_grid.size // 4: -sol.x_grid.size // 4 or None:
                            max(1, sol.x_grid.size // 8)]
    res_oracle = max(
        abs(master_residual(oracle, cfg.model, t, x))
        for t in interior_t for x in interior_x
    )
    rows = [
        ("max_ux_error", err),
        ("oracle_residual", res_oracle),
        ("p0", float(oracle.p_grid[0])),
        ("q0", float(oracle.q_grid[0])),
    ]
    _write_csv(os.path.join(out_dir, "lq_error.csv"),
               ["quantity", "value"], rows)
    report["checks"] = [
        {"name": "lq.max_error", "pass": bool(err <= e["max_error"]),
         "margin": e["max_error"] - err, "lhs": e["max_error"], "rhs": err},
        {"name": "lq.oracle_residual", "pass": bool(res_oracle <= 1e-6),
         "margin": 1e-6 - res_oracle, "lhs": 1e-6, "rhs": res_oracle},
    ]
    return 0 if all(c["pass"] for c in report["checks"]) else 1


def _cmd_check_antimono(cfg, out_dir, report):
    e = cfg.experiment
    lam, ledger = _resolve_lambda(cfg)
    sol = _base_solution(cfg)
    profile = estimate_xmu_profile(
        cfg.model, sol, e["times"], atoms=e["atoms"],
        t_steps=max(40, e["t_steps"] // 2), nx=max(101, e["nx"] // 2),
    )
    rows = []
    all_hold = True
    for i, t in enumerate(e["times"]):
        est = mc_certify(
            _solved_field(sol, profile, t), lam,
            sampler=component_seed(cfg._seed, f"antimono:{i}"),
            trials=e["trials"], atoms=e["atoms"],
            noise_floor=e["noise_floor"],
        )
        rows.append((t, est.verdict, est.value, est.samples))
        all_hold &= est.verdict == HOLDS
        print(f"  t={t:g}: {est.verdict} (worst {est.value:+.4g})")
    _write_csv(os.path.join(out_dir, "antimono.csv"),
               ["t", "verdict", "worst_value", "samples"], rows)
    report["lambda"] = dataclasses.asdict(lam)
    return 0 if all_hold else 1


def _cmd_gamma_flow(cfg, out_dir, report):
    e = cfg.experiment
    lam, ledger = _resolve_lambda(cfg)
    mu0 = _mu0(cfg, cfg._seed)
    sol = _base_solution(cfg)
    decoupled = (cfg.model.params.g1 == 0.0 and cfg.model.params.h_xmu == 0.0)
    profile = None if decoupled else estimate_xmu_profile(
        cfg.model, sol, e["times"], atoms=e["atoms"],
        t_steps=max(40, e["t_steps"] // 2), nx=max(101, e["nx"] // 2),
    )
    rng = np.random.default_rng(component_seed(cfg._seed, "gamma-eta"))
    eta = rng.standard_normal(mu0.n_atoms)
    trace = simulate_linearized_flow(
        cfg.model, sol, lam, mu0.points, eta, e["n_steps"],
        seed=component_seed(cfg._seed, "gamma-flow"),
        xmu_profile=profile, replicas=e["replicas"],
    )
    flow_to_csv(trace, os.path.join(out_dir, "gamma_trace.csv"))
    g = trace.gamma_series
    dt = trace.t_grid[1] - trace.t_grid[0]
    allowance = e["noise_floor"] + 5.0 * dt * max(1.0, float(np.max(np.abs(g))))
    min_inc = float(np.min(np.diff(g)))
    report["checks"] = [
        {"name": "gamma.nondecreasing", "pass": bool(min_inc >= -allowance),
         "margin": min_inc + allowance, "lhs": min_inc, "rhs": -allowance},
        {"name": "gamma.terminal", "pass": bool(g[-1] <= e["noise_floor"]),
         "margin": e["noise_floor"] - g[-1], "lhs": e["noise_floor"],
         "rhs": float(g[-1])},
    ]
    report["gamma0"] = float(g[0])
    report["gammaT"] = float(g[-1])
    return 0 if all(c["pass"] for c in report["checks"]) else 1


def _cmd_lipschitz(cfg, out_dir, report):
    e = cfg.experiment
    out = estimate_xmu_lipschitz(
        cfg.model, _mu0(cfg, cfg._seed), e["x_probes"], e["bump_scales"],
        mode=e["mode"], t_steps=e["t_steps"], nx=e["nx"],
    )
    rows = [(r["scale"], r["direction"], r["wq"], r["max_diff"], r["ratio"])
            for r in out["per_bump"]]
    _write_csv(os.path.join(out_dir, "lipschitz.csv"),
               ["scale", "direction", "wq", "max_diff", "ratio"], rows)
    per_scale = {}
    for r in out["per_bump"]:
        per_scale[r["scale"]] = max(per_scale.get(r["scale"], 0.0), r["ratio"])
    best = max(per_scale.values())
    variation = 0.0 if best == 0 else (best - min(per_scale.values())) / best
    report["lipschitz_estimate"] = out["lipschitz_estimate"]
    report["scale_variation"] = variation
    report["checks"] = [
        {"name": "lipschitz.stable", "pass": bool(variation <= 0.2),
         "margin": 0.2 - variation, "lhs": 0.2, "rhs": variation},
    ]
    return 0 if variation <= 0.2 else 1


def _cmd_hessian(cfg, out_dir, report):
    ledger = certify_wellposedness(cfg.model, cfg.l123)
    sol = _base_solution(cfg)
    hc = hessian_bound_check(sol, ledger)
    report["hessian"] = hc
    report["checks"] = [
        {"name": "hessian.bound", "pass": hc["pass"],
         "margin": hc["bound"] * 1.05 - hc["sup_uxx"],
         "lhs": hc["bound"] * 1.05, "rhs": hc["sup_uxx"]},
    ]
    return 0 if hc["pass"] else 1


_SWEEPABLE = ("a0", "g0", "g1", "h_xx", "h_xmu", "horizon")


def _sweep_one(args):
    model, l123, param, value = args
    if param == "a0":
        model = dataclasses.replace(model, a0=np.eye(model.dim) * value)
    elif param == "horizon":
        model = dataclasses.replace(model, horizon=value)
    else:
        model = dataclasses.replace(
            model, params=dataclasses.replace(model.params, **{param: value})
        )
    ledger = certify_wellposedness(model, l123)
    min_margin = min(c["margin"] for c in ledger.checks.values())
    return value, ledger.passed, min_margin


def _cmd_sweep(cfg, out_dir, report):
    e = cfg.experiment
    param = e["param"]
    if param not in _SWEEPABLE:
        raise ConfigError(
            f"sweep param must be one of {', '.join(_SWEEPABLE)}; got {param!r}"
        )
    if not e["values"]:
        raise ConfigError("sweep requires a non-empty 'values' list")
    tasks = [(cfg.model, cfg.l123, param, v) for v in e["values"]]
    if cfg._jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg._jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    rows = [(v, "pass" if ok else "fail", margin) for v, ok, margin in results]
    _write_csv(os.path.join(out_dir, "sweep.csv"),
               ["value", "certified", "min_margin"], rows)
    report["sweep"] = {"param": param,
                       "passed": [bool(ok) for _, ok, _ in results]}
    return 0


_HANDLERS = {
    "certify": _cmd_certify,
    "construct-example": _cmd_construct_example,
    "solve": _cmd_solve,
    "check-antimono": _cmd_check_antimono,
    "gamma-flow": _cmd_gamma_flow,
    "lipschitz": _cmd_lipschitz,
    "hessian": _cmd_hessian,
    "lq-validate": _cmd_lq_validate,
    "sweep": _cmd_sweep,
}


def cli_dispatch(argv) -> int:
    parser = argparse.ArgumentParser(
        prog="mfgcert",
        description="certify and verify the anti-monotone MFG regime",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None)
        p.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)

    started = time.time()
    try:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg = parse_config(text)
        out_dir = (args.out or cfg.output["dir"]
                   or os.environ.get("MFG_ANTIMONO_OUT") or "mfgcert_out")
        os.makedirs(out_dir, exist_ok=True)
        cfg._seed = args.seed
        cfg._jobs = max(1, args.jobs)
        report = {
            "subcommand": args.subcommand,
            "seed": args.seed,
            "config": cfg.echo,
        }
        code = _HANDLERS[args.subcommand](cfg, out_dir, report)
        report["wall_clock"] = time.time() - started
        write_report(report, out_dir)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NoConvergence, GridEscape, BlowUp) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except MfgCertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

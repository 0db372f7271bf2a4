"""INI-style run configuration: sectioned key = value text with strict checks.

The format is deliberately flat and diffable: `[section]` headers,
`key = value` lines, `#` comments. Parsing is strict — unknown sections
or keys, duplicated keys, type mismatches and inadmissible lambda
weights are all rejected with the offending line numbers, which the
standard-library parser does not report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .models import ModelSpec, QuadraticParams, RegularityConstants

_FLOAT = "float"
_INT = "int"
_STR = "str"
_FLOATS = "float_list"

_SCHEMA = {
    "model": {
        "dim": (_INT, 1),
        "a0": (_FLOAT, 1.0),
        "horizon": (_FLOAT, 1.0),
        "beta": (_FLOAT, 0.0),
        "g0": (_FLOAT, 0.0),
        "g1": (_FLOAT, 0.0),
        "g_lin": (_FLOAT, 0.0),
        "h_quad": (_FLOAT, 1.0),
        "h_xmu": (_FLOAT, 0.0),
        "h_xx": (_FLOAT, 0.0),
        "l2_h0": (_FLOAT, 1.0),
        "lxx_h0_lo": (_FLOAT, 0.0),
        "lxx_h0_hi": (_FLOAT, 0.0),
        "l2_g": (_FLOAT, 1.0),
        "lxx_g_hi": (_FLOAT, 1.0),
        "gamma_lo": (_FLOAT, 0.5),
        "gamma_hi": (_FLOAT, 2.0),
        "la_bar": (_FLOAT, 1.0),
    },
    "lambda": {
        "lambda0": (_STR, "auto"),
        "lambda1": (_FLOAT, 1.0),
        "lambda2": (_FLOAT, 1.0),
        "lambda3": (_FLOAT, 0.0),
    },
    "experiment": {
        "t_steps": (_INT, 200),
        "nx": (_INT, 401),
        "tol": (_FLOAT, 1e-9),
        "max_picard": (_INT, 60),
        "atoms": (_INT, 12),
        "trials": (_INT, 64),
        "times": (_FLOATS, (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)),
        "bump_scales": (_FLOATS, (0.2, 0.1, 0.05)),
        "x_probes": (_FLOATS, (-1.0, 0.0, 1.0)),
        "n_steps": (_INT, 100),
        "replicas": (_INT, 16),
        "mode": (_STR, "W2"),
        "noise_floor": (_FLOAT, 1e-3),
        "alpha_lo": (_FLOAT, 1.0),
        "alpha_hi": (_FLOAT, 1.0),
        "m0_start": (_FLOAT, 2.0),
        "max_doublings": (_INT, 60),
        "mu_atoms": (_INT, 16),
        "mu_mean": (_FLOAT, 0.0),
        "mu_std": (_FLOAT, 0.5),
        "param": (_STR, ""),
        "values": (_FLOATS, ()),
        "max_error": (_FLOAT, 5e-3),
    },
    "output": {
        "dir": (_STR, ""),
    },
}


@dataclass
class RunConfig:
    """Validated configuration: the model, lambda weights, and knobs."""

    model: ModelSpec
    lambda0: object          # float or "auto"
    l123: tuple
    experiment: dict
    output: dict
    echo: dict = field(default_factory=dict)


def _convert(kind, value, line, key):
    try:
        if kind == _FLOAT:
            return float(value)
        if kind == _INT:
            # reject fractional values instead of truncating them
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        if kind == _FLOATS:
            parts = [p.strip() for p in value.split(",") if p.strip()]
            return tuple(float(p) for p in parts)
        return value
    except ValueError:
        raise ConfigError(
            f"line {line}: key '{key}' expects {kind}, got {value!r}"
        ) from None


def parse_config(text: str) -> RunConfig:
    """Parse and validate a config document; raises ConfigError on any flaw."""
    section = None
    raw: dict = {}
    seen_lines: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            raw.setdefault(section, {})
            continue
        if "=" not in stripped:
            raise ConfigError(
                f"line {lineno}: expected 'key = value' or '[section]', "
                f"got {stripped!r}"
            )
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _SCHEMA[section]:
            raise ConfigError(
                f"line {lineno}: unknown key '{key}' in section [{section}]"
            )
        if key in raw[section]:
            raise ConfigError(
                f"line {lineno}: duplicate key '{key}' in [{section}] "
                f"(first defined at line {seen_lines[(section, key)]})"
            )
        kind, _default = _SCHEMA[section][key]
        raw[section][key] = _convert(kind, value, lineno, key)
        seen_lines[(section, key)] = lineno

    values: dict = {}
    for sec, keys in _SCHEMA.items():
        values[sec] = {k: raw.get(sec, {}).get(k, d) for k, (_, d) in keys.items()}

    lam2 = values["lambda"]["lambda2"]
    if lam2 <= 0:
        line = seen_lines.get(("lambda", "lambda2"), "?")
        raise ConfigError(
            f"line {line}: lambda2 = {lam2} outside the admissible weight "
            "domain (lambda2 must be > 0)"
        )
    if values["lambda"]["lambda3"] < 0:
        line = seen_lines.get(("lambda", "lambda3"), "?")
        raise ConfigError(
            f"line {line}: lambda3 must be >= 0 in the admissible domain"
        )
    lambda0 = values["lambda"]["lambda0"]
    if lambda0 != "auto":
        try:
            lambda0 = float(lambda0)
        except ValueError:
            line = seen_lines.get(("lambda", "lambda0"), "?")
            raise ConfigError(
                f"line {line}: lambda0 must be a number or 'auto'"
            ) from None
        if lambda0 <= 0:
            line = seen_lines.get(("lambda", "lambda0"), "?")
            raise ConfigError(
                f"line {line}: lambda0 must be > 0 in the admissible domain"
            )
    if values["experiment"]["mode"] not in ("W1", "W2"):
        raise ConfigError("experiment mode must be 'W1' or 'W2'")

    mv = values["model"]
    try:
        reg = RegularityConstants(
            l2_h0=mv["l2_h0"],
            lxx_h0_lo=mv["lxx_h0_lo"],
            lxx_h0_hi=mv["lxx_h0_hi"],
            l2_g=mv["l2_g"],
            lxx_g_hi=mv["lxx_g_hi"],
            gamma_lo=mv["gamma_lo"],
            gamma_hi=mv["gamma_hi"],
            la_bar=mv["la_bar"],
        )
        model = ModelSpec(
            dim=mv["dim"],
            a0=np.eye(mv["dim"]) * mv["a0"],
            reg=reg,
            horizon=mv["horizon"],
            beta=mv["beta"],
            params=QuadraticParams(
                g0=mv["g0"],
                g1=mv["g1"],
                g_lin=mv["g_lin"],
                h_quad=mv["h_quad"],
                h_xmu=mv["h_xmu"],
                h_xx=mv["h_xx"],
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid model parameters: {exc}") from None

    return RunConfig(
        model=model,
        lambda0=lambda0,
        l123=(
            values["lambda"]["lambda1"],
            values["lambda"]["lambda2"],
            values["lambda"]["lambda3"],
        ),
        experiment=values["experiment"],
        output=values["output"],
        echo=values,
    )

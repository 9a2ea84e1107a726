"""TOML run configuration: parsing, schema validation and digests."""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass
from typing import Any, Callable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .torus import MuSpec

SCHEMA_VERSION = 1
REQUIRED = object()
CHECK_NAMES = (
    "dispersion",
    "minimal_speed",
    "dense_oracle",
    "cell_identities",
    "effective_diffusion",
    "minimizer_theory",
    "front_speed",
    "bramson_fit",
    "halfspace_exponents",
    "log_frame",
    "exponential_tail",
    "covariance",
)


@dataclass(frozen=True)
class Key:
    kind: str  # float, int, str, bool, vector, floats, vectors, table
    default: Any = None
    check: Callable | None = None
    hint: str = ""


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _unit_interval(x):
    return 0 < x < 1


def _pow2(x):
    return x >= 8 and not x & (x - 1)


SCHEMA: dict[str, dict[str, Key]] = {
    "medium": {
        "variant": Key("str", REQUIRED, lambda s: s in ("constant", "trig_series"), "constant or trig_series"),
        "c": Key("float", None, _positive, "positive"),
        "offset": Key("float", None),
        "modes": Key("table_list", None),
    },
    "grid": {
        "n": Key("int", 1, lambda n: n in (1, 2), "1 or 2"),
        "N": Key("int", None, _pow2, "a power of two >= 8"),
    },
    "eigen": {
        "e": Key("vector", None),
        "lambdas": Key("floats", [0.25, 0.5, 1.0, 2.0, 4.0], lambda v: all(x > 0 for x in v), "positive"),
        "tol": Key("float", 1e-9, _positive, "positive"),
    },
    "speed": {
        "directions": Key("vectors", None),
        "tol": Key("float", 1e-6, _positive, "positive"),
        "method": Key("str", "golden", lambda s: s in ("golden", "brent"), "golden or brent"),
    },
    "atlas": {
        "directions": Key("int", 720, lambda m: m >= 8, ">= 8"),
        "N": Key("int", None, _pow2, "a power of two >= 8"),
        "angle_tol": Key("float", 1e-7, _positive, "positive"),
        "gradient_step": Key("float", 1e-4, _nonneg, "non-negative"),
        "method": Key("str", "brent", lambda s: s in ("golden", "brent"), "golden or brent"),
    },
    "minimizer_check": {
        "uniqueness_margin": Key("float", 1e-3, _positive, "positive"),
        "cluster_tol_deg": Key("float", 1.0, _positive, "positive"),
        "coverage_factor": Key("float", 3.0, _positive, "positive"),
        "grad_tol": Key("float", 1e-2, _positive, "positive"),
    },
    "cell": {
        "e": Key("vector", None),
        "directions": Key("int", 256, lambda m: m >= 8, ">= 8"),
        "tol": Key("float", 1e-8, _positive, "positive"),
    },
    "simulate": {
        "t_final": Key("float", REQUIRED, _positive, "positive"),
        "dt": Key("float", 0.05, _positive, "positive"),
        "points_per_cell": Key("int", 8, lambda k: k >= 8, ">= 8"),
        "domain_half_width": Key("float", None, _positive, "positive"),
        "margin": Key("float", 30.0, _positive, "positive"),
        "level": Key("float", 0.5, _unit_interval, "in (0, 1)"),
        "reaction": Key("str", "logistic", lambda s: s == "logistic", "logistic"),
        "init_radius": Key("float", 1.0, _positive, "positive"),
        "init_amplitude": Key("float", 1.0, lambda a: 0 < a <= 1, "in (0, 1]"),
        "init_profile": Key("str", "indicator", lambda s: s in ("indicator", "bump"), "indicator or bump"),
        "directions": Key("vectors", None),
        "record_times": Key("floats", [], lambda v: all(x >= 0 for x in v), "non-negative"),
        "sample_interval": Key("float", 1.0, _positive, "positive"),
        "fit_t_min": Key("float", None, _positive, "positive"),
        "fit_t_max": Key("float", None, _positive, "positive"),
    },
    "halfspace": {
        "frame": Key("str", "linear", lambda s: s in ("linear", "log"), "linear or log"),
        "alpha": Key("float", None, _nonneg, "non-negative"),
        "alpha_shift": Key("float", 0.0),
        "T": Key("float", None, _positive, "positive"),
        "e": Key("vector", None),
        "t_final": Key("float", REQUIRED, _positive, "positive"),
        "dt": Key("float", 0.05, _positive, "positive"),
        "h": Key("float", 0.125, _positive, "positive"),
        "xi_max": Key("float", None, _positive, "positive"),
        "width": Key("float", None, _positive, "positive"),
        "v0_center": Key("float", 2.0, _positive, "positive"),
        "v0_radius": Key("float", 1.0, _positive, "positive"),
        "sigma": Key("float", 1.0, _positive, "positive"),
        "rho": Key("float", 0.5, _positive, "positive"),
        "L": Key("float", 5.0, _positive, "positive"),
        "ball": Key("float", 0.5, _positive, "positive"),
        "sample_interval": Key("float", 1.0, _positive, "positive"),
        "fit_t_min": Key("float", None, _positive, "positive"),
        "fit_t_max": Key("float", None, _positive, "positive"),
        "record_times": Key("floats", [], lambda v: all(x >= 0 for x in v), "non-negative"),
    },
    "verify": {
        "checks": Key("strs", None, lambda v: len(v) > 0 and all(c in CHECK_NAMES for c in v),
                      "a non-empty list drawn from " + ", ".join(CHECK_NAMES)),
        "oracle_media": Key("int", 5, lambda k: k >= 1, ">= 1"),
        "oracle_N": Key("int", 32, _pow2, "a power of two >= 8"),
        "oracle_dims": Key("ints", [1, 2], lambda v: all(x in (1, 2) for x in v), "1 or 2"),
        "sim_t_final": Key("float", 100.0, _positive, "positive"),
        "sim_fit_t_min": Key("float", None, _positive, "positive"),
        "speed_tol": Key("float", 0.01, _positive, "positive"),
        "bramson_t_final": Key("float", None, _positive, "positive"),
        "bramson_window": Key("floats", None, lambda v: len(v) == 2 and 0 < v[0] < v[1], "[t_min, t_max]"),
        "halfspace_t_final": Key("float", 1000.0, _positive, "positive"),
        "halfspace_window": Key("floats", None, lambda v: len(v) == 2 and 0 < v[0] < v[1], "[t_min, t_max]"),
        "log_t_final": Key("float", 1000.0, _positive, "positive"),
        "log_window": Key("floats", None, lambda v: len(v) == 2 and 0 < v[0] < v[1], "[t_min, t_max]"),
        "atlas_directions": Key("int", 360, lambda m: m >= 8, ">= 8"),
    },
}

TOP_LEVEL = {"seed": Key("int", 0, _nonneg, "a non-negative integer")}


def _coerce(path: str, kind: str, value):
    def fail(what):
        raise ConfigError(f"{path}: expected {what}, got {value!r}")

    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail("a number")
        if not math.isfinite(value):
            fail("a finite number")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            fail("an integer")
        return int(value)
    if kind == "str":
        if not isinstance(value, str):
            fail("a string")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            fail("true or false")
        return value
    if kind in ("vector", "floats"):
        if not isinstance(value, list):
            fail("a list of numbers")
        return [_coerce(f"{path}[{i}]", "float", v) for i, v in enumerate(value)]
    if kind == "ints":
        if not isinstance(value, list):
            fail("a list of integers")
        return [_coerce(f"{path}[{i}]", "int", v) for i, v in enumerate(value)]
    if kind == "strs":
        if not isinstance(value, list):
            fail("a list of strings")
        return [_coerce(f"{path}[{i}]", "str", v) for i, v in enumerate(value)]
    if kind == "vectors":
        if not isinstance(value, list):
            fail("a list of vectors")
        return [_coerce(f"{path}[{i}]", "vector", v) for i, v in enumerate(value)]
    if kind == "table_list":
        if not isinstance(value, list) or not all(isinstance(v, dict) for v in value):
            fail("a list of tables")
        return value
    raise AssertionError(kind)


def _validate_section(name: str, raw: dict) -> dict:
    schema = SCHEMA[name]
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a table")
    for key in raw:
        if key not in schema:
            raise ConfigError(f"unknown key '{name}.{key}'")
    out = {}
    for key, spec in schema.items():
        path = f"{name}.{key}"
        if key not in raw:
            if spec.default is REQUIRED:
                raise ConfigError(f"missing required key '{path}'")
            out[key] = spec.default
            continue
        val = _coerce(path, spec.kind, raw[key])
        if spec.check is not None and not spec.check(val):
            raise ConfigError(f"{path} must be {spec.hint} (got {raw[key]!r})")
        out[key] = val
    return out


def validate(raw: dict) -> dict:
    """Check keys and types; fill defaults for every section that is present."""
    cfg = {}
    for key, val in raw.items():
        if key in TOP_LEVEL:
            spec = TOP_LEVEL[key]
            v = _coerce(key, spec.kind, val)
            if not spec.check(v):
                raise ConfigError(f"{key} must be {spec.hint}")
            cfg[key] = v
        elif key in SCHEMA:
            cfg[key] = _validate_section(key, val)
        else:
            raise ConfigError(f"unknown key '{key}'")
    cfg.setdefault("seed", 0)
    if "medium" not in cfg:
        raise ConfigError("missing required section 'medium'")
    cfg.setdefault("grid", _validate_section("grid", {}))
    mu = medium_spec(cfg)
    n = cfg["grid"]["n"]
    if mu.dimension is not None and mu.dimension != n:
        raise ConfigError(f"medium.modes wavevectors are {mu.dimension}-dimensional but grid.n = {n}")
    if cfg["grid"]["N"] is None:
        cfg["grid"]["N"] = 64 if n == 1 else 32
    for sec in ("eigen", "cell", "halfspace"):
        if sec in cfg and cfg[sec].get("e") is not None and len(cfg[sec]["e"]) != n:
            raise ConfigError(f"{sec}.e must have {n} components")
    if "simulate" in cfg:
        s = cfg["simulate"]
        if s["directions"] is not None and any(len(d) != n for d in s["directions"]):
            raise ConfigError(f"simulate.directions must have {n} components each")
    if "halfspace" in cfg:
        h = cfg["halfspace"]
        if n == 2 and h["width"] is None:
            raise ConfigError("halfspace.width is required in 2D")
        if h["frame"] == "linear" and (h["alpha"] not in (None, 0.0) or h["alpha_shift"]):
            raise ConfigError("halfspace.alpha applies to the log frame only")
    return cfg


def medium_spec(cfg: dict) -> MuSpec:
    m = cfg["medium"]
    try:
        if m["variant"] == "constant":
            if m["c"] is None:
                raise ConfigError("medium.c is required for a constant medium")
            if m["modes"] is not None or m["offset"] is not None:
                raise ConfigError("medium.modes/offset apply to trig_series media only")
            return MuSpec.constant(m["c"])
        if m["offset"] is None:
            raise ConfigError("medium.offset is required for a trig_series medium")
        modes = []
        for i, mode in enumerate(m["modes"] or []):
            extra = set(mode) - {"k", "cos", "sin"}
            if extra:
                raise ConfigError(f"unknown key 'medium.modes[{i}].{sorted(extra)[0]}'")
            if "k" not in mode:
                raise ConfigError(f"missing required key 'medium.modes[{i}].k'")
            k = mode["k"]
            if not isinstance(k, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in k):
                raise ConfigError(f"medium.modes[{i}].k must be a list of integers")
            a = _coerce(f"medium.modes[{i}].cos", "float", mode.get("cos", 0.0))
            b = _coerce(f"medium.modes[{i}].sin", "float", mode.get("sin", 0.0))
            modes.append((k, a, b))
        if len({len(k) for k, _, _ in modes}) > 1:
            raise ConfigError("medium.modes wavevectors must share one dimension")
        spec = MuSpec.trig_series(modes, m["offset"])
        if spec.offset - sum(math.hypot(a, b) for _, a, b in spec.modes) <= 0 and _sampled_min(spec) <= 0:
            raise ConfigError("medium is not uniformly positive (medium.offset too small)")
        return spec
    except ValueError as exc:
        raise ConfigError(f"medium: {exc}") from exc


def _sampled_min(spec: MuSpec) -> float:
    import numpy as np

    n = spec.dimension or 1
    x = np.linspace(0, 1, 129)[:-1]
    pts = np.stack(np.meshgrid(*([x] * n), indexing="ij"), axis=-1)
    return float(spec.evaluate(pts).min())


def load(path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return validate(raw)


def digest(cfg: dict) -> str:
    """sha256 of the canonical JSON form of the validated config."""
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()

"""Scenario configuration: a versioned TOML file with strict keys.

Every section and key has a default, so an empty file (apart from
``schema_version``) is a valid scenario.  Unknown sections or keys are
rejected.  Any value can be overridden from the environment with
``FREQREG_<SECTION>__<KEY>`` (top-level keys: ``FREQREG_<KEY>``), the value
parsed as a TOML literal and otherwise taken as a string.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

SCHEMA_VERSION = 1
ENV_PREFIX = "FREQREG_"

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "out_dir": "out",
    "server": {"n_gpus": 8, "p_cpu_base": 150.0, "gpu_lc_peak": 160.0},
    "gpu": {"p_peak": 190.0, "cap_floor": 60.0, "cap_max": 190.0, "p_idle_paused": 2.0,
            "gamma": 0.8, "noise_cap_only": 0.02, "noise_with_cores": 0.08,
            "tp_cap_min": 0.6, "tp_core_min": 0.2, "f_min": 1.0 / 60.0},
    "signal": {"kind": "noisy", "duration_s": 3600.0, "step_s": 2.0, "ramp_limit": 0.005,
               "file": ""},
    "trace": {"table": "low-low", "mean_pct": -1.0, "variance": -1.0, "min_pct": -1.0,
              "max_pct": -1.0, "step_s": 60.0, "file": ""},
    "market": {"cost": 3e-5, "rew_up": 6e-5, "rew_down": 6e-5, "threshold": 1.0,
               "symmetric": True},
    "simulate": {"hours": 0},
    "grid": {"demand_mw": [300.0], "reserve_up_mw": 100.0, "reserve_down_mw": 100.0,
             "r_dc_mw": 100.0, "use_signal": True, "ci_resv": 0.4, "generators": []},
    "dc": {"capacity_mw": 100.0, "pue": 1.09, "server_power_kw": 7.0, "gpus_per_server": 8,
           "gpu_kg": 30.0, "cpu_kg": 18.0, "dram_kg": 7.0, "disk_kg": 20.0,
           "embodied_amortization_years": 5.0, "ups_capacity_mwh": 100.0,
           "ups_kg_per_mwh": 74000.0, "ups_lifespan_penalty": 0.28,
           "ups_regulation_share": 0.2, "cpu_provision_share": 0.2},
    "tco": {"elec": 0.10, "gpu_hour": 1.0, "facility_per_w": 8.0, "server_cost": 235000.0,
            "reward_per_mw_h": 7.0, "facility_years": 15.0, "server_amortization_years": 5.0},
    "report": {"ci_gen": 0.208, "scenarios": ["baseline", "ecocenter", "cpu_only", "ups_only"]},
}

GENERATOR_KEYS = {"name", "p_min", "p_max", "cost_c0", "cost_c1", "e_peak", "eta"}

# sections each command's outputs depend on, for staleness checks
SIM_SECTIONS = ("seed", "server", "gpu", "signal", "trace", "market", "simulate")
GRID_SECTIONS = ("seed", "signal", "grid")


def check_keys(data: dict, schema: dict, where: str = ""):
    for key, value in data.items():
        path = f"{where}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key {path!r}")
        default = schema[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path!r} must be a table")
            check_keys(value, default, path + ".")
        elif key == "generators":
            if not isinstance(value, list):
                raise ConfigError(f"{path!r} must be an array of tables")
            for i, g in enumerate(value):
                if not isinstance(g, dict):
                    raise ConfigError(f"{path}[{i}] must be a table")
                extra = set(g) - GENERATOR_KEYS
                if extra:
                    raise ConfigError(f"unknown key(s) {sorted(extra)} in {path}[{i}]")
        else:
            _check_type(path, value, default)


def _check_type(path, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path!r} has type {type(value).__name__}, "
                          f"expected {type(default).__name__}")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_value(text: str):
    """A TOML literal (number, bool, array...) or, failing that, the raw string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def set_dotted(data: dict, dotted: str, value):
    parts = dotted.split(".")
    node = data
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def env_overrides(environ=None) -> dict:
    """Nested override dict from ``FREQREG_*`` environment variables."""
    environ = os.environ if environ is None else environ
    out = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX):].lower().split("__")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = parse_value(environ[name])
    return out


def load_config(path=None, environ=None, overrides=None) -> dict:
    """Defaults <- file <- environment <- explicit overrides, validated.

    Relative file paths inside the config are resolved against the config
    file's directory.
    """
    data = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, "
                              f"got {data.get('schema_version')!r}")
        base_dir = path.parent
    check_keys(data, DEFAULTS)
    env = env_overrides(environ)
    check_keys(env, DEFAULTS)
    cfg = _merge(_merge(DEFAULTS, data), env)
    for dotted, value in (overrides or {}).items():
        set_dotted(cfg, dotted, value)
    check_keys(cfg, DEFAULTS)
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
    for section in ("signal", "trace"):
        f = cfg[section]["file"]
        if f:
            p = Path(f)
            if not p.is_absolute():
                p = base_dir / p
            if not p.is_file():
                raise ConfigError(f"{section} file not found: {p}")
            cfg[section]["file"] = str(p)
    return cfg


def digest(cfg: dict, sections) -> str:
    """Stable hash of the given top-level config entries."""
    part = {k: cfg[k] for k in sections}
    text = json.dumps(part, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def parse_sweep(spec: str) -> tuple:
    """``key=a,b,c`` -> (key, [values])."""
    if "=" not in spec:
        raise ConfigError(f"--sweep expects key=a,b,c, got {spec!r}")
    key, _, rest = spec.partition("=")
    values = [parse_value(v.strip()) for v in rest.split(",") if v.strip()]
    if not key.strip() or not values:
        raise ConfigError(f"--sweep expects key=a,b,c, got {spec!r}")
    return key.strip(), values

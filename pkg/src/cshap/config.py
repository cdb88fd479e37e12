"""Run configuration: one JSON document per experiment, validated against defaults."""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

from .changepoint import CpdParams
from .decompose import DecomposeParams
from .model.convnet import ConvNetConfig

CONFIG_SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "seed": 0,
    "seeds": None,  # list of seeds for multi-seed experiments; None means [seed]
    "synth": {"overlap": 0.5, "scenarios": 2, "cycles_per_scenario": 10},
    "windows": {"sizes": [100, 200, 400], "shift": 10},
    "split": {"phases_per_scenario": 2, "keep_kind": "cycle-op"},
    "model": {
        "channel_sizes": [8, 8, 16],
        "kernel_size": 5,
        "fc_size": 64,
        "epochs": 30,
        "batch_size": 64,
        "learning_rate": 0.01,
        "momentum": 0.9,
    },
    "decompose": {
        "cpd": {"subsample": 40, "penalty": 50.0, "kernel_bandwidth": "median-heuristic", "min_segment_length": 2},
        "resample_halo": 20,
        "resample_smooth_window": 20,
        "peak_rule": "tukey",
        "tukey_k": 1.5,
        "peak_noise_smooth_window": 20,
        "lf_window": 75,
    },
    "background": {"core_type": None, "rounds": None, "cycles_per_scenario": 5},
    "explain": {"offset_stride": 200, "workers": 1},
    "report": {"histogram_bins": 40, "histogram_stride": 5, "local_examples": 2},
}

# keys whose values may be null or of a type other than the default's
_FLEXIBLE = {
    ("seeds",),
    ("background", "core_type"),
    ("background", "rounds"),
    ("decompose", "cpd", "kernel_bandwidth"),
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path=()) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        key = path + (k,)
        if k not in base:
            raise ConfigError(f"unknown config key {'.'.join(key)!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {'.'.join(key)!r} must be a mapping")
            out[k] = _merge(base[k], v, key)
        elif key in _FLEXIBLE or base[k] is None:
            out[k] = copy.deepcopy(v)
        else:
            expected = float if isinstance(base[k], float) else type(base[k])
            ok = isinstance(v, expected) or (expected is float and isinstance(v, int))
            if isinstance(v, bool) and expected is not bool:
                ok = False
            if not ok:
                raise ConfigError(f"config key {'.'.join(key)!r} must be {expected.__name__}, got {v!r}")
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    cfg = _merge(DEFAULTS, doc)
    if overrides:
        cfg = _merge(cfg, overrides)
    if cfg["schema_version"] != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {cfg['schema_version']}")
    try:
        decompose_params(cfg)
        convnet_config(cfg, 100)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return cfg


def bundled_config(name: str = "window_size.json") -> Path:
    return Path(str(resources.files("cshap") / "configs" / name))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def seeds_of(cfg: dict) -> list[int]:
    return list(cfg["seeds"]) if cfg["seeds"] else [cfg["seed"]]


def decompose_params(cfg: dict, seed: int | None = None) -> DecomposeParams:
    d = copy.deepcopy(cfg["decompose"])
    cpd = CpdParams(**d.pop("cpd"))
    return DecomposeParams(cpd=cpd, rng_seed=cfg["seed"] if seed is None else seed, **d)


def convnet_config(cfg: dict, window_size: int, seed: int | None = None) -> ConvNetConfig:
    m = cfg["model"]
    return ConvNetConfig(window_size=window_size, seed=cfg["seed"] if seed is None else seed,
                         channel_sizes=tuple(m["channel_sizes"]), kernel_size=m["kernel_size"],
                         fc_size=m["fc_size"], epochs=m["epochs"], batch_size=m["batch_size"],
                         learning_rate=m["learning_rate"], momentum=m["momentum"])

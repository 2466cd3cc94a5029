"""Pipeline configuration: shipped defaults, JSON loading, dotted-path
overrides, and the config fingerprint stamped into summaries.

Seed policy: every stage derives its seed from master_seed through
numpy's SeedSequence with a fixed stage code, so stages can be rerun
independently and still reproduce the `all` pipeline byte for byte. The
PRNG is PCG64 everywhere.
"""

from __future__ import annotations

import copy
import hashlib
import json

import numpy as np

from .errors import ConfigError

# SeedSequence stage codes
SEED_DATA_TRAIN = 0
SEED_DATA_HOLDOUT = 1
SEED_DATA_ATTACK = 2
SEED_MODEL_INIT = 3
SEED_TRAIN_SHUFFLE = 4
SEED_LIME = 5
SEED_EVAL = 6

DEFAULT_ARCHITECTURE = [
    {"kind": "Conv2d", "out_channels": 8, "kernel_size": 3, "padding": 1},
    {"kind": "ReLU"},
    {"kind": "MaxPool2d", "kernel_size": 4},
    {"kind": "Conv2d", "out_channels": 16, "kernel_size": 3, "padding": 1},
    {"kind": "ReLU"},
    {"kind": "MaxPool2d", "kernel_size": 2},
    {"kind": "MaxPool2d", "kernel_size": 2},
    {"kind": "Flatten"},
    {"kind": "Dense", "out_features": 32},
    {"kind": "ReLU"},
    {"kind": "Dense", "out_features": 4},
]

DEFAULT_CONFIG = {
    "master_seed": 7,
    "data": {
        "num_classes": 4,
        "train_per_class": 100,
        "holdout_per_class": 20,
        "attack_per_class": 25,
        "height": 64,
        "width": 64,
    },
    "model": {"architecture": DEFAULT_ARCHITECTURE},
    "train": {"epochs": 20, "lr": 0.02},
    "segmentation": {
        "attack": {"k": 300 / 255**2, "min_size": 20, "sigma": 0.0},
        "lime": {"k": 60 / 255**2, "min_size": 10, "sigma": 0.5},
    },
    "attack": {
        "target_label": 0,
        "step_eps": 1 / 255,
        "max_iters": 200,
        "patience": 25,
        "ball_eps": None,
        "regions": 10,
    },
    "lime": {
        "num_samples": 1000,
        "kernel_width": 0.25,
        "ridge_lambda": 1e-3,
        "on_probability": 0.5,
        "baseline": "superpixel_mean",
    },
    "evaluation": {"max_n": 20},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def _merge(base, update, path=""):
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            _merge(base[key], value, path + key + ".")
        else:
            base[key] = value


def load_config(path=None, overrides=()) -> dict:
    """Defaults, deep-merged with an optional JSON file, then overridden
    by `key.path=json_value` strings."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path) as f:
                doc = json.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        _merge(cfg, doc)
    for item in overrides:
        apply_override(cfg, item)
    return cfg


def apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"--set expects key.path=value, got {item!r}")
    key_path, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings are convenient on the command line
    node = cfg
    parts = key_path.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key {key_path!r}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config key {key_path!r}")
    node[parts[-1]] = value


def save_config(cfg: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(cfg, f, indent=1, sort_keys=True)


def fingerprint(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def stage_seed(master_seed: int, stage_code: int) -> int:
    """Stable per-stage integer seed derived from the master seed."""
    ss = np.random.SeedSequence([int(master_seed), int(stage_code)])
    return int(ss.generate_state(1, np.uint64)[0])

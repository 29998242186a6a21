"""Flat run configuration: defaults <- config file <- CYCLE_* environment
variables <- CLI flags.  Unknown keys are rejected; every run logs the fully
resolved mapping and its hash."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    # corpus / artifacts
    "data_dir": "data",
    "artifacts_dir": "artifacts",
    "out_dir": "runs",
    "years": (2019, 2020, 2021, 2022),
    # dataset builder
    "min_count": 2,
    "max_count": 1_000_000,
    "knn_k": 10,
    "negative_cap": 32,
    "pool_seed": 0,
    # training
    "epochs": 30,
    "batch_size": 64,
    "lr": 3e-3,
    "weight_a": 1.0,
    "weight_b": 1.0,
    "weight_c": 1.0,
    "temperature": 0.5,
    "sampler_threshold": 2,
    "max_positives": 10,
    "node_cap": 512,
    "seed": 0,
    "train_year": 0,
    "target_year": 0,
    "text_dim": 64,
    "hidden_dim": 64,
    "proj_dim": 32,
    "optimizer": "adam",
    "fusion_decay": 0.05,
    # evaluation
    "n_list": (1, 2, 4, 8, 16, 32, 64),
    "direction": "forward_and_backward",
    # synthesis
    "n_entities": 200,
    "topics": 8,
    "edges_per_entity": 4,
    "drift_rate": 0.15,
    "mentions_per_entity": 6,
    "vocab_size": 240,
    "new_fraction": 0.1,
    "new_entity_year_index": 1,
    "name_group_size": 4,
    "desc_len": 20,
    "ctx_len": 12,
    "drift_degree_bias": True,
    "predrift_rounds": 1,
    # orchestration
    "workers": 1,
}

# keys that define the dataset itself; their hash is the dataset hash that
# artifacts, checkpoints, and reports must agree on
DATASET_KEYS = (
    "data_dir", "years", "min_count", "max_count", "knn_k", "negative_cap",
    "pool_seed", "n_entities", "topics", "edges_per_entity", "drift_rate",
    "mentions_per_entity", "vocab_size", "new_fraction", "new_entity_year_index",
    "name_group_size", "desc_len", "ctx_len", "drift_degree_bias",
    "predrift_rounds",
)


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, tuple):
        elem = type(default[0]) if default else int
        return tuple(elem(x) for x in raw.split(",") if x.strip())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def load_config_file(path: str | Path) -> dict:
    """key=value lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).open(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, raw.strip())
    return out


def env_overrides(environ=os.environ) -> dict:
    out = {}
    for key in DEFAULTS:
        env_key = "CYCLE_" + key.upper()
        if env_key in environ:
            out[key] = _coerce(key, environ[env_key])
    return out


def resolve(config_file: str | None = None, cli_overrides: dict | None = None) -> dict:
    resolved = dict(DEFAULTS)
    if config_file:
        resolved.update(load_config_file(config_file))
    resolved.update(env_overrides())
    for key, value in (cli_overrides or {}).items():
        if value is None:
            continue
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        resolved[key] = value
    return resolved


def _hash(mapping: dict) -> str:
    blob = json.dumps({k: list(v) if isinstance(v, tuple) else v
                       for k, v in sorted(mapping.items())}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def config_hash(resolved: dict) -> str:
    return _hash(resolved)


def dataset_hash(resolved: dict) -> str:
    return _hash({k: resolved[k] for k in DATASET_KEYS})

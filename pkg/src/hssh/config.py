"""JSON config handling for the generation and training harness.

One document, three optional sections mirroring the config field names:

    {"synthetic": {...}, "run": {...}, "encoder": {...}}

The run section uses the key ``lambda`` for the consistency-loss weight.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .data import DomainStyle, SyntheticConfig


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    epochs: int = 40
    batch_size: int = 32
    lambda_hmc: float = 0.5
    curvature: float = 0.1
    seed: int = 0
    enable_ssh: bool = True
    enable_hmc: bool = True
    stages_hallucinated: tuple[int, ...] = (1, 2, 3, 4)
    gamma_window: int = 16

    def __post_init__(self):
        if self.lambda_hmc < 0:
            raise ConfigError("lambda must be non-negative")
        if self.curvature <= 0:
            raise ConfigError("curvature must be positive")
        if not set(self.stages_hallucinated) <= {1, 2, 3, 4}:
            raise ConfigError("stages must be a subset of 1,2,3,4")


_RUN_KEYMAP = {"lambda": "lambda_hmc"}
_RUN_KEYMAP_INV = {v: k for k, v in _RUN_KEYMAP.items()}


def run_config_to_dict(run: RunConfig) -> dict:
    out = {}
    for f in dataclasses.fields(run):
        key = _RUN_KEYMAP_INV.get(f.name, f.name)
        val = getattr(run, f.name)
        out[key] = list(val) if isinstance(val, tuple) else val
    return out


def run_config_from_dict(d: dict) -> RunConfig:
    kwargs = {}
    valid = {f.name for f in dataclasses.fields(RunConfig)}
    for key, val in d.items():
        name = _RUN_KEYMAP.get(key, key)
        if name not in valid:
            raise ConfigError(f"unknown run config field: {key}")
        if name == "stages_hallucinated":
            val = tuple(int(s) for s in val)
        kwargs[name] = val
    try:
        return RunConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def synthetic_config_to_dict(cfg: SyntheticConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["domains"] = [dataclasses.asdict(d) for d in cfg.domains]
    return out


def synthetic_config_from_dict(d: dict) -> SyntheticConfig:
    valid = {f.name for f in dataclasses.fields(SyntheticConfig)}
    unknown = set(d) - valid
    if unknown:
        raise ConfigError(f"unknown synthetic config fields: {sorted(unknown)}")
    kwargs = dict(d)
    if "domains" in kwargs:
        kwargs["domains"] = [
            DomainStyle(
                channel_gain=tuple(x.get("channel_gain", (1.0, 1.0, 1.0))),
                channel_bias=tuple(x.get("channel_bias", (0.0, 0.0, 0.0))),
                gamma=x.get("gamma", 1.0),
                noise_std=x.get("noise_std", 0.0),
            )
            for x in kwargs["domains"]
        ]
    try:
        return SyntheticConfig(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = set(doc) - {"synthetic", "run", "encoder"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return doc

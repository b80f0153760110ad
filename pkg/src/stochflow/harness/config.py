"""Flat key/value experiment configuration.

A config file is TOML with top-level scalar keys only::

    id = "holder.zero_drift"
    seed = 3
    out = "results"
    M = 4000
    increments = [0.0625, 0.125]

``id``, ``seed`` and ``out`` are reserved; every other key must be a
parameter of the experiment and match the type of its default.  A run
manifest is also accepted: it carries one such table per experiment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from ..errors import ConfigError

RESERVED = ("id", "seed", "out")


@dataclass
class ExperimentConfig:
    id: str
    seed: int = 0
    out: str = "results"
    params: dict = field(default_factory=dict)

    def echo(self) -> dict:
        return {"id": self.id, "seed": self.seed, **self.params}


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number")
        if not math.isfinite(value) and not math.isinf(default):
            raise ConfigError(f"{key}: must be finite")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string")
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list")
        if default and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in default):
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
                raise ConfigError(f"{key}: expected a list of numbers")
            if all(isinstance(v, int) for v in default):
                if not all(isinstance(v, int) for v in value):
                    raise ConfigError(f"{key}: expected a list of integers")
                return list(value)
            return [float(v) for v in value]
        return list(value)
    raise ConfigError(f"{key}: unsupported default type {type(default).__name__}")


def resolve(cfg: ExperimentConfig, defaults: dict) -> dict:
    """Defaults overridden by ``cfg.params``; rejects unknown keys and bad types."""
    unknown = sorted(set(cfg.params) - set(defaults))
    if unknown:
        raise ConfigError(f"{cfg.id}: unknown parameters {unknown}")
    out = dict(defaults)
    for k, v in cfg.params.items():
        out[k] = _coerce(k, v, defaults[k])
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    return out


def _from_table(table: dict, where: str) -> ExperimentConfig:
    for k, v in table.items():
        if isinstance(v, dict):
            raise ConfigError(f"{where}: nested tables are not allowed ({k})")
    params = {k: v for k, v in table.items() if k not in RESERVED}
    cfg = ExperimentConfig(id=table.get("id", ""), seed=table.get("seed", 0),
                           out=table.get("out", "results"), params=params)
    if not isinstance(cfg.id, str):
        raise ConfigError(f"{where}: id must be a string")
    return cfg


def loads(text: str, where: str = "<string>") -> list[ExperimentConfig]:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    if "experiments" in data:
        tables = data["experiments"]
        if not isinstance(tables, list):
            raise ConfigError(f"{where}: experiments must be an array of tables")
        return [_from_table(_strip_results(t), where) for t in tables]
    return [_from_table(data, where)]


def load(path) -> list[ExperimentConfig]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text, str(path))


# keys a manifest adds next to the config echo
RESULT_KEYS = ("verdict", "seconds", "csv", "error")


def _strip_results(table: dict) -> dict:
    return {k: v for k, v in table.items() if k not in RESULT_KEYS}


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialise {type(v).__name__}")


def dumps_table(table: dict) -> str:
    return "".join(f"{k} = {_toml_value(v)}\n" for k, v in table.items())

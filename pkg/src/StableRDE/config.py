# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

"""Run configuration: defaults, then a JSON file, then explicit flags."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from .errors import ConfigError
from .rng import SEED_MAX, default_threads

logger = logging.getLogger(__name__)

DEFAULT_SEED = 42
FORMATS = ("json", "csv")
TOP_LEVEL = ("command", "seed", "out", "format", "threads", "params")


@dataclass
class RunConfig:
    command: str = ""
    params: Dict[str, Any] = field(default_factory=dict)
    seed: int = DEFAULT_SEED
    out: str = "-"
    format: Optional[str] = None
    threads: int = 1

    def get(self, key: str, default: Any = None) -> Any:
        value = self.params.get(key)
        return default if value is None else value


def _positive_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 1


def _nonnegative_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 0


def _real(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


# parameter name -> validity check
PARAM_CHECKS = {
    "alpha": lambda a: _real(a) and 1 < a <= 2,
    "beta": lambda b: _real(b) and 0 <= b <= 1,
    "theta": _real,
    "t": lambda t: _real(t) and t > 0,
    "eps": lambda e: _real(e) and 0 < e < 1,
    "tol": lambda e: _real(e) and 0 < e < 1,
    "n": _positive_int,
    "reps": _positive_int,
    "depth": _nonnegative_int,
    "m": lambda m: _nonnegative_int(m) and m <= 20,
    "levels": _nonnegative_int,
    "max_atoms": _positive_int,
    "max_nodes": _positive_int,
    "min_mass": lambda q: _real(q) and q >= 0,
}


def validate(config: RunConfig) -> RunConfig:
    bad = []
    if not isinstance(config.seed, int) or isinstance(config.seed, bool) or not 0 <= config.seed <= SEED_MAX:
        bad.append("seed")
    if config.format is not None and config.format not in FORMATS:
        bad.append("format")
    if not _positive_int(config.threads):
        bad.append("threads")
    if not isinstance(config.out, str) or not config.out:
        bad.append("out")
    for key, value in config.params.items():
        check = PARAM_CHECKS.get(key)
        if value is not None and check is not None and not check(value):
            bad.append(key)
    if bad:
        raise ConfigError("Invalid configuration values", bad)
    return config


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Build a validated :class:`RunConfig`. The file holds the top-level keys
    and either a ``params`` object or the parameters inline; ``None`` in
    ``overrides`` means the flag was not given.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
            data = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config file {path} is not valid JSON: {exc}", ["file"]) from exc
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object", ["file"])
        logger.debug("config file %s: %s", path, sorted(data))
    params = dict(data.get("params", {}))
    params.update({k: v for k, v in data.items() if k not in TOP_LEVEL})
    top = {k: data[k] for k in TOP_LEVEL if k in data and k != "params"}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in TOP_LEVEL:
            top[key] = value
        else:
            params[key] = value
    config = RunConfig(
        command=top.get("command", ""),
        params=params,
        seed=top.get("seed", DEFAULT_SEED),
        out=top.get("out", "-"),
        format=top.get("format"),
        threads=top.get("threads", default_threads()),
    )
    return validate(config)

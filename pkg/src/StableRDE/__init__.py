# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

import importlib
import logging
from typing import Any

logging.getLogger(__name__).addHandler(logging.NullHandler())

# public name -> owning submodule
_LAZY = {
    "MetricTree": "trees",
    "TreeBuilder": "trees",
    "reduce": "trees",
    "rescale": "trees",
    "read_tree": "trees",
    "write_tree": "trees",
    "grow": "marchal",
    "shape_prob": "marchal",
    "decompose_at_v2": "marchal",
    "ScalingSeq": "concat",
    "ConcatInput": "concat",
    "concat": "concat",
    "d_beta": "concat",
    "gh_dist": "ghdist",
    "XiModel": "rde",
    "InitLaw": "rde",
    "GenString": "rde",
    "calibrate_beta": "rde",
    "iterate": "rde",
    "spine_martingale": "rde",
    "build_string": "rde",
    "grow_from_string": "rde",
    "attraction_experiment": "rde",
    "StatReport": "verify",
    "moment_test": "verify",
    "ks_test": "verify",
    "multinomial_gof": "verify",
    "run_suite": "suite",
    "load_config": "config",
    "make_rng": "rng",
    "main": "cli",
}


# Lazy loading of attributes
def __getattr__(name: str) -> Any:
    module = _LAZY.get(name)
    if module is None:
        raise AttributeError(f"module '{__name__}' has no attribute '{name}'")
    value = getattr(importlib.import_module(f".{module}", __name__), name)
    globals()[name] = value
    return value


__all__ = list(_LAZY)

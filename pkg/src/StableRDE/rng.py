# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

"""Random streams.

Every stream is a ``numpy.random.Generator`` over the Philox counter-based
bit generator. A stream is identified by a 64-bit seed and a path of
non-negative integers (an Ulam-Harris word). Child streams are derived with
``SeedSequence(entropy, spawn_key=parent_key + path)``, which hashes the
parent entropy together with the path; deriving never advances the parent.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Sequence, TypeVar

import numpy as np

from .errors import DomainError

T = TypeVar("T")

# salts used by the RDE engine so all iteration modes share the same draws
XI_SALT = 0
INIT_SALT = 1

SEED_MAX = 2**64 - 1


def check_seed(seed: int) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise DomainError(f"Seed must be an integer, got {type(seed).__name__}")
    if not 0 <= int(seed) <= SEED_MAX:
        raise DomainError(f"Seed must be an unsigned 64-bit integer, got {seed}")
    return int(seed)


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Return the stream for ``seed`` at Ulam-Harris ``path``."""
    seq = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(i) for i in path))
    return np.random.Generator(np.random.Philox(seq))


def derive(rng: np.random.Generator, *path: int) -> np.random.Generator:
    """Child stream of ``rng`` at ``path``. ``rng`` itself is not consumed."""
    parent = rng.bit_generator.seed_seq
    if not isinstance(parent, np.random.SeedSequence):
        raise DomainError("Stream was not created from a SeedSequence")
    seq = np.random.SeedSequence(
        parent.entropy,
        spawn_key=tuple(parent.spawn_key) + tuple(int(i) for i in path),
    )
    return np.random.Generator(np.random.Philox(seq))


def replicate_rngs(rng: np.random.Generator, reps: int) -> List[np.random.Generator]:
    return [derive(rng, r) for r in range(reps)]


def default_threads() -> int:
    value = os.environ.get("RDE_THREADS")
    if not value:
        return 1
    try:
        threads = int(value)
    except ValueError:
        raise DomainError(f"RDE_THREADS must be an integer, got {value!r}") from None
    if threads < 1:
        raise DomainError(f"RDE_THREADS must be positive, got {threads}")
    return threads


def map_replicates(
    func: Callable[[np.random.Generator], T],
    rngs: Sequence[np.random.Generator],
    threads: int = 1,
) -> List[T]:
    """Apply ``func`` to every replicate stream, results in replicate order."""
    if threads <= 1 or len(rngs) <= 1:
        return [func(r) for r in rngs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, rngs))


def path_key(path: Iterable[int]) -> str:
    """Ulam-Harris word as a label, e.g. ``(0, 2, 1)`` -> ``"0.2.1"``."""
    return ".".join(str(i) for i in path) or "root"

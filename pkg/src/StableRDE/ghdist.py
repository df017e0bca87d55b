# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

"""Exact rooted and marked Gromov-Hausdorff distances between small trees.

The distance is half the least distortion of a correspondence that pairs the
roots (and, for the marked variant, the marked points). The least distortion
is always one of the finitely many values |d_a(i, j) - d_b(k, l)|, so the
search bisects over those values and asks, for each threshold, whether a
covering set of pairwise compatible pairs exists. Such a set always contains
a correspondence of the form graph(f) united with the inverse of graph(g).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numba
import numpy as np

from .errors import SizeError
from .trees import MetricTree

logger = logging.getLogger(__name__)

DEFAULT_MAX_NODES = 7
BRUTE_FORCE_MAX_NODES = 4
MAX_PAIRS = 62
TOL = 1e-12


@dataclass(frozen=True)
class GHResult:
    distance: float
    pairs: Tuple[Tuple[int, int], ...]

    def __float__(self):
        return self.distance


def _pins(a: MetricTree, b: MetricTree, marked: bool) -> List[Tuple[int, int]]:
    pins = [(a.root, b.root)]
    if marked:
        if a.marked is None or b.marked is None:
            raise SizeError("Marked distance needs a marked point on both trees")
        pins.append((a.marked, b.marked))
    return pins


# Pair (i, j) is bit i * nb + j of an int64 mask; the sign bit stays clear.


@numba.njit(cache=True)
def _popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@numba.njit(cache=True)
def _bit_index(low):
    i = 0
    while low > 1:
        low >>= 1
        i += 1
    return i


@numba.njit(cache=True)
def _compat_masks(absdiff, delta):
    npairs = absdiff.shape[0]
    out = np.zeros(npairs, np.int64)
    one = np.int64(1)
    for p in range(npairs):
        m = np.int64(0)
        for q in range(npairs):
            if absdiff[p, q] <= delta + TOL:
                m |= one << q
        out[p] = m
    return out


@numba.njit(cache=True)
def _most_constrained(allowed, covered_a, covered_b, row, col):
    """Candidates of the uncovered point with fewest of them; -1 when all are covered."""
    best = np.int64(-1)
    best_count = 1 << 30
    for i in range(row.shape[0]):
        if not (covered_a >> i) & 1:
            cand = allowed & row[i]
            c = _popcount(cand)
            if c < best_count:
                best, best_count = cand, c
    for j in range(col.shape[0]):
        if not (covered_b >> j) & 1:
            cand = allowed & col[j]
            c = _popcount(cand)
            if c < best_count:
                best, best_count = cand, c
    return best


@numba.njit(cache=True)
def _cover_search(compat, row, col, allowed0, covered_a0, covered_b0):
    """
    Depth-first search for pairwise compatible pairs covering both trees,
    most constrained point first. Returns the chosen pairs and their count,
    with a count of -1 when no such set exists.
    """
    n_b = col.shape[0]
    depth_max = row.shape[0] + col.shape[0] + 1
    allowed = np.zeros(depth_max, np.int64)
    cov_a = np.zeros(depth_max, np.int64)
    cov_b = np.zeros(depth_max, np.int64)
    cand = np.zeros(depth_max, np.int64)
    chosen = np.zeros(depth_max, np.int64)
    one = np.int64(1)
    allowed[0] = allowed0
    cov_a[0] = covered_a0
    cov_b[0] = covered_b0
    cand[0] = _most_constrained(allowed0, covered_a0, covered_b0, row, col)
    if cand[0] == -1:
        return chosen, 0
    d = 0
    while d >= 0:
        if cand[d] == 0:
            d -= 1
            continue
        low = cand[d] & -cand[d]
        cand[d] ^= low
        p = _bit_index(low)
        chosen[d] = p
        allowed[d + 1] = allowed[d] & compat[p]
        cov_a[d + 1] = cov_a[d] | (one << (p // n_b))
        cov_b[d + 1] = cov_b[d] | (one << (p % n_b))
        nxt = _most_constrained(allowed[d + 1], cov_a[d + 1], cov_b[d + 1], row, col)
        if nxt == -1:
            return chosen, d + 1
        d += 1
        cand[d] = nxt
    return chosen, -1


class _CoverSearch:
    """Threshold feasibility over a fixed pair table."""

    def __init__(self, absdiff: np.ndarray, na: int, nb: int):
        if na * nb > MAX_PAIRS:
            raise SizeError(f"Exact search allows {MAX_PAIRS} node pairs, got {na * nb}")
        self.absdiff = np.ascontiguousarray(absdiff, dtype=np.float64)
        self.nb = nb
        self.row = np.array([sum(1 << (i * nb + j) for j in range(nb)) for i in range(na)], dtype=np.int64)
        self.col = np.array([sum(1 << (i * nb + j) for i in range(na)) for j in range(nb)], dtype=np.int64)
        self.full = (1 << (na * nb)) - 1

    def run(self, delta: float, pinned: Sequence[int]) -> Optional[List[int]]:
        compat = _compat_masks(self.absdiff, float(delta))
        allowed = self.full
        covered_a = 0
        covered_b = 0
        for p in pinned:
            if not (allowed >> p) & 1:
                return None
            allowed &= int(compat[p])
            covered_a |= 1 << (p // self.nb)
            covered_b |= 1 << (p % self.nb)
        chosen, count = _cover_search(compat, self.row, self.col, allowed, covered_a, covered_b)
        if count < 0:
            return None
        return list(pinned) + chosen[:count].tolist()


def _pair_absdiff(da: np.ndarray, db: np.ndarray) -> np.ndarray:
    na, nb = len(da), len(db)
    diff = np.abs(da[:, None, :, None] - db[None, :, None, :])
    return diff.reshape(na * nb, na * nb)


def gh_dist(a: MetricTree, b: MetricTree, marked: bool = False, max_nodes: int = DEFAULT_MAX_NODES) -> GHResult:
    """Exact (marked) GH distance and a correspondence achieving it."""
    for name, t in (("first", a), ("second", b)):
        if t.n_nodes > max_nodes:
            raise SizeError(f"The {name} tree has {t.n_nodes} nodes, exact search allows {max_nodes}")
    na, nb = a.n_nodes, b.n_nodes
    absdiff = _pair_absdiff(a.distance_matrix(), b.distance_matrix())
    pinned = [i * nb + j for i, j in _pins(a, b, marked)]
    values = np.unique(absdiff)
    search = _CoverSearch(absdiff, na, nb)

    lo, hi = 0, len(values) - 1
    best = search.run(values[hi], pinned)
    while lo < hi:
        mid = (lo + hi) // 2
        found = search.run(values[mid], pinned)
        if found is None:
            lo = mid + 1
        else:
            hi, best = mid, found
    pairs = tuple(sorted({(p // nb, p % nb) for p in best}))
    idx = [i * nb + j for i, j in pairs]
    distortion = float(absdiff[np.ix_(idx, idx)].max())
    logger.debug("gh search %dx%d nodes: distortion %g over %d pairs", na, nb, distortion, len(pairs))
    return GHResult(distortion / 2.0, pairs)


def gh_dist_bruteforce(a: MetricTree, b: MetricTree, marked: bool = False) -> float:
    """
    Least distortion over every subset of pairs that covers both trees and
    contains the pins. Only for trees of at most four nodes.
    """
    for t in (a, b):
        if t.n_nodes > BRUTE_FORCE_MAX_NODES:
            raise SizeError(f"Exhaustive search allows {BRUTE_FORCE_MAX_NODES} nodes, got {t.n_nodes}")
    na, nb = a.n_nodes, b.n_nodes
    npairs = na * nb
    absdiff = _pair_absdiff(a.distance_matrix(), b.distance_matrix())
    subsets = np.array(list(itertools.product((False, True), repeat=npairs)), dtype=bool)
    for i, j in _pins(a, b, marked):
        subsets = subsets[subsets[:, i * nb + j]]
    first = np.arange(npairs) // nb
    second = np.arange(npairs) % nb
    covers = np.ones(len(subsets), dtype=bool)
    for i in range(na):
        covers &= subsets[:, first == i].any(axis=1)
    for j in range(nb):
        covers &= subsets[:, second == j].any(axis=1)
    subsets = subsets[covers]
    distortion = np.zeros(len(subsets))
    for p in range(npairs):
        worst = np.where(subsets, absdiff[p][None, :], 0.0).max(axis=1)
        distortion = np.maximum(distortion, np.where(subsets[:, p], worst, 0.0))
    return float(distortion.min()) / 2.0

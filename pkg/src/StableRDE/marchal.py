# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

"""Marchal's growth algorithm for alpha-stable trees.

Every edge carries weight ``alpha - 1`` and every branch point of degree
``d`` carries weight ``d - 1 - alpha``, so a tree with ``n`` leaves has total
weight ``n * alpha - 1``. Each step picks an edge or a branch point
proportionally to its weight and attaches the next leaf there, splitting the
edge with a new branch point when an edge is chosen.

Vertex ``0`` is the root ``A0``; leaves are labelled ``A1, A2, ...`` in order
of arrival and the branch point created with leaf ``A{k}`` is ``V{k}``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numba as nb
import numpy as np
from scipy.special import gammaln

from .errors import DomainError
from .laws import ml_moment
from .trees import MetricTree
from .verify import StatReport, compare, mean_stderr

logger = logging.getLogger(__name__)

WEIGHT_RTOL = 1e-9
_KINDS = ("edge", "vertex")


def check_alpha(alpha: float) -> float:
    if not 1 < alpha <= 2:
        raise DomainError(f"alpha must lie in (1, 2], got {alpha}")
    return float(alpha)


def beta_of(alpha: float) -> float:
    return 1.0 - 1.0 / check_alpha(alpha)


# Slot 2v holds the weight of the edge above vertex v, slot 2v+1 the weight of
# v as a branch point. The Fenwick array is 1-based over those slots.


@nb.njit(cache=True)
def _fenwick_add(tree, i, delta):
    i += 1
    while i < tree.shape[0]:
        tree[i] += delta
        i += i & -i


@nb.njit(cache=True)
def _fenwick_total(tree):
    s = 0.0
    i = tree.shape[0] - 1
    while i > 0:
        s += tree[i]
        i -= i & -i
    return s


@nb.njit(cache=True)
def _fenwick_find(tree, top, u):
    """Slot whose cumulative range contains ``u``."""
    pos = 0
    step = top
    size = tree.shape[0] - 1
    while step:
        nxt = pos + step
        if nxt <= size and tree[nxt] <= u:
            pos = nxt
            u -= tree[nxt]
        step >>= 1
    return pos


@nb.njit(cache=True)
def _structural_weight(parent, nv, alpha):
    """Weight recomputed from the degrees of the first ``nv`` vertices."""
    deg = np.zeros(nv, np.int64)
    for v in range(1, nv):
        deg[v] += 1
        deg[parent[v]] += 1
    w = (nv - 1) * (alpha - 1.0)
    for v in range(nv):
        if deg[v] >= 3:
            w += deg[v] - 1.0 - alpha
    return w


@nb.njit(cache=True)
def _grow_kernel(alpha, n, u, check, rtol):
    """
    Growth over the uniforms ``u``, one per step. Returns the parent array,
    the kind (0 edge, 1 vertex) and vertex chosen at each step, the largest
    relative weight drift seen and the first step that broke ``rtol`` (-1
    if none). With ``check`` the index total is compared every step and
    the weight is recomputed from the degrees whenever k is a power of two
    and at the end.
    """
    size = 4 * n
    tree = np.zeros(size + 1)
    w = np.zeros(size)
    top = 1
    while top * 2 <= size:
        top *= 2
    parent = np.full(2 * n, -1, np.int64)
    kinds = np.zeros(n - 1, np.int8)
    chosen = np.zeros(n - 1, np.int64)
    parent[1] = 0
    nv = 2
    edge_w = alpha - 1.0
    branch_w = 2.0 - alpha
    w[2] = edge_w
    _fenwick_add(tree, 2, edge_w)
    drift = 0.0
    bad = -1
    for m in range(1, n):
        slot = _fenwick_find(tree, top, u[m - 1] * (m * alpha - 1.0))
        if slot >= 2 * nv:
            slot = 2 * nv - 1
            while w[slot] <= 0.0:
                slot -= 1
        v = slot // 2
        k = m + 1
        chosen[m - 1] = v
        if slot % 2 == 0:
            b = nv
            parent[b] = parent[v]
            parent[v] = b
            parent[b + 1] = b
            nv += 2
            w[2 * b] += edge_w
            _fenwick_add(tree, 2 * b, edge_w)
            w[2 * b + 1] += branch_w
            _fenwick_add(tree, 2 * b + 1, branch_w)
            w[2 * b + 2] += edge_w
            _fenwick_add(tree, 2 * b + 2, edge_w)
        else:
            kinds[m - 1] = 1
            parent[nv] = v
            w[2 * v + 1] += 1.0
            _fenwick_add(tree, 2 * v + 1, 1.0)
            w[2 * nv] += edge_w
            _fenwick_add(tree, 2 * nv, edge_w)
            nv += 1
        if check:
            expected = k * alpha - 1.0
            rel = abs(_fenwick_total(tree) - expected) / expected
            if (k & (k - 1)) == 0 or k == n:
                rel = max(rel, abs(_structural_weight(parent, nv, alpha) - expected) / expected)
            drift = max(drift, rel)
            if rel > rtol:
                bad = k
                break
    return parent[:nv], kinds, chosen, drift, bad


@dataclass(frozen=True, eq=False)
class DiscreteTree:
    """Leaf-labelled combinatorial tree produced by :func:`grow`.

    ``history`` lists, per step, the label of the chosen item and whether it
    was an edge (the edge above that vertex) or a branch point.
    """

    alpha: float
    parent: Tuple[int, ...]
    labels: Tuple[str, ...]
    history: Tuple[Tuple[str, str], ...] = ()
    max_rel_drift: float = 0.0

    @cached_property
    def children(self) -> Tuple[Tuple[int, ...], ...]:
        kids: List[List[int]] = [[] for _ in self.parent]
        for v, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(v)
        return tuple(tuple(k) for k in kids)

    @cached_property
    def index(self) -> Dict[str, int]:
        return {label: v for v, label in enumerate(self.labels)}

    @property
    def n(self) -> int:
        """Number of leaves, the root excluded."""
        return sum(1 for label in self.labels if label[0] == "A") - 1

    @property
    def n_vertices(self) -> int:
        return len(self.parent)

    def degree(self, v: int) -> int:
        return len(self.children[v]) + (1 if self.parent[v] >= 0 else 0)

    def leaf_number(self, v: int) -> Optional[int]:
        label = self.labels[v]
        return int(label[1:]) if label[0] == "A" else None

    def subtree(self, v: int) -> FrozenSet[int]:
        out = [v]
        i = 0
        while i < len(out):
            out.extend(self.children[out[i]])
            i += 1
        return frozenset(out)

    def graph_distance(self, u: int, v: int) -> int:
        up: Dict[int, int] = {}
        d = 0
        while u >= 0:
            up[u] = d
            u = self.parent[u]
            d += 1
        d = 0
        while v not in up:
            v = self.parent[v]
            d += 1
        return d + up[v]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "n": self.n,
            "parent": list(self.parent),
            "labels": list(self.labels),
        }


def grow(alpha: float, n: int, rng: np.random.Generator, check: bool = True) -> DiscreteTree:
    """
    Grow a tree with ``n`` leaves from ``n - 1`` uniforms of ``rng``. With
    ``check`` the weight index total is compared with ``k * alpha - 1``
    after every step, and the weight is recomputed from the vertex degrees
    at steps k = 2, 4, 8, ... and at the last step.
    """
    alpha = check_alpha(alpha)
    if n < 1:
        raise DomainError(f"n must be at least 1, got {n}")
    parent, kinds, chosen, drift, bad = _grow_kernel(alpha, n, rng.random(n - 1), check, WEIGHT_RTOL)
    if bad >= 0:
        raise AssertionError(f"Total weight drifted by {drift:.3g} relative after {bad} leaves")
    labels = ["A0", "A1"]
    for k, kind in enumerate(kinds.tolist(), start=2):
        if kind == 0:
            labels.append(f"V{k}")
        labels.append(f"A{k}")
    history = tuple((_KINDS[kind], labels[v]) for kind, v in zip(kinds.tolist(), chosen.tolist()))
    return DiscreteTree(alpha, tuple(parent.tolist()), tuple(labels), history, float(drift))


def vertex_weight(t: DiscreteTree, v: int, alpha: Optional[float] = None) -> float:
    alpha = t.alpha if alpha is None else alpha
    d = t.degree(v)
    return d - 1.0 - alpha if d >= 3 else 0.0


def weight(t: DiscreteTree, alpha: Optional[float] = None) -> float:
    """Sum of all edge and branch point weights."""
    alpha = t.alpha if alpha is None else alpha
    edges = t.n_vertices - 1
    return edges * (alpha - 1.0) + math.fsum(vertex_weight(t, v, alpha) for v in range(t.n_vertices))


def subtree_weight(t: DiscreteTree, part: FrozenSet[int], alpha: Optional[float] = None) -> float:
    """
    Weight of a component of the tree cut at one vertex: the edges with an
    endpoint in ``part`` and the branch points inside it.
    """
    alpha = t.alpha if alpha is None else alpha
    edges = sum(1 for c, p in enumerate(t.parent) if p >= 0 and (c in part or p in part))
    return edges * (alpha - 1.0) + math.fsum(vertex_weight(t, v, alpha) for v in part)


def _p_degree(d: int, alpha: float) -> float:
    if d == 1:
        return 1.0
    if d == 2:
        return 0.0
    return abs(math.prod(alpha - i for i in range(1, d - 1)))


def shape_prob(t: DiscreteTree, alpha: Optional[float] = None) -> float:
    """Probability that growth produces the leaf-labelled shape of ``t``."""
    alpha = t.alpha if alpha is None else check_alpha(alpha)
    num = math.prod(_p_degree(t.degree(v), alpha) for v in range(t.n_vertices))
    if num == 0:
        return 0.0
    den = math.prod(i * alpha - 1.0 for i in range(1, t.n))
    return num / den


def shape_key(t: DiscreteTree) -> str:
    """Canonical form of the leaf-labelled shape; branch point labels are ignored."""
    keys: Dict[int, str] = {}
    for v in _postorder(t):
        kids = t.children[v]
        if not kids:
            keys[v] = t.labels[v]
        else:
            inner = ",".join(sorted(keys[c] for c in kids))
            keys[v] = f"{t.labels[v]}({inner})" if t.parent[v] < 0 else f"({inner})"
    return keys[0]


def _postorder(t: DiscreteTree) -> List[int]:
    out: List[int] = []
    stack = [0]
    while stack:
        v = stack.pop()
        out.append(v)
        stack.extend(t.children[v])
    return out[::-1]


def _attach(t: DiscreteTree, v: int, kind: str) -> DiscreteTree:
    parent = list(t.parent)
    labels = list(t.labels)
    k = t.n + 1
    if kind == "edge":
        b = len(parent)
        parent.append(parent[v])
        labels.append(f"V{k}")
        parent[v] = b
        parent.append(b)
    else:
        parent.append(v)
    labels.append(f"A{k}")
    return DiscreteTree(t.alpha, tuple(parent), tuple(labels), t.history + ((kind, t.labels[v]),))


def prefix_tree(t: DiscreteTree, k: int) -> DiscreteTree:
    """The tree as it stood after its first ``k`` leaves."""
    if not 1 <= k <= t.n:
        raise DomainError(f"k must lie in [1, {t.n}], got {k}")
    steps = t.history[: k - 1]
    nv = 2 + sum(2 if kind == "edge" else 1 for kind, _ in steps)
    parent = []
    for v in range(nv):
        p = t.parent[v]
        # later branch points only ever split edges
        while p >= nv:
            p = t.parent[p]
        parent.append(p)
    return DiscreteTree(t.alpha, tuple(parent), t.labels[:nv], steps)


def enumerate_shapes(alpha: float, n: int) -> List[Tuple[DiscreteTree, float]]:
    """
    Every leaf-labelled shape with ``n`` leaves reachable by growth, with its
    probability. Shapes of probability zero (for alpha = 2) are included.
    """
    alpha = check_alpha(alpha)
    if n < 1:
        raise DomainError(f"n must be at least 1, got {n}")
    level = {"": DiscreteTree(alpha, (-1, 0), ("A0", "A1"))}
    for _ in range(n - 1):
        nxt: Dict[str, DiscreteTree] = {}
        for t in level.values():
            for v in range(1, t.n_vertices):
                choices = ["edge"] + (["vertex"] if t.degree(v) >= 3 else [])
                for kind in choices:
                    grown = _attach(t, v, kind)
                    nxt.setdefault(shape_key(grown), grown)
        level = nxt
    return [(t, shape_prob(t, alpha)) for _, t in sorted(level.items())]


def to_metric(t: DiscreteTree, alpha: Optional[float] = None, n: Optional[int] = None) -> MetricTree:
    """Edges of length 1/(alpha n^beta), mass 1/n on every leaf, A1 marked."""
    alpha = t.alpha if alpha is None else check_alpha(alpha)
    n = t.n if n is None else n
    if n != t.n:
        raise DomainError(f"n={n} does not match the {t.n} leaves of the tree")
    length = 1.0 / (alpha * n ** beta_of(alpha))
    leaves = [v for v in range(1, t.n_vertices) if t.labels[v][0] == "A"]
    return MetricTree(
        parent=t.parent,
        edge_len=(0.0,) + (length,) * (t.n_vertices - 1),
        root=0,
        marked=t.index["A1"],
        leaf_mass={v: 1.0 / n for v in leaves},
        labels=dict(enumerate(t.labels)),
    )


@dataclass(frozen=True)
class Decomposition:
    """
    Components of the tree cut at ``V2``. ``parts`` holds the vertex sets of
    tau_0 (root side), tau_1, tau_2 and then tau_j, j >= 3, ordered by least
    leaf label; ``counts`` is (N_0, N_1, N_2, N_sigma) where tau_0 counts the
    root ``A0`` as a degree-one vertex.
    """

    v2: int
    m: int
    parts: Tuple[FrozenSet[int], ...]
    counts: Tuple[int, int, int, int]
    sigma_counts: Tuple[int, ...]
    weights: Tuple[float, float, float, float]

    @property
    def K(self) -> int:
        return len(self.sigma_counts)

    @property
    def sigma(self) -> FrozenSet[int]:
        return frozenset().union(*self.parts[3:]) if self.K else frozenset()

    @property
    def fractions(self) -> Tuple[float, ...]:
        total = math.fsum(self.weights)
        return tuple(w / total for w in self.weights)


def decompose_at_v2(t: DiscreteTree) -> Decomposition:
    if "V2" not in t.index:
        raise DomainError("Tree has no branch point V2; grow at least two leaves")
    alpha = t.alpha
    v2 = t.index["V2"]
    below = t.subtree(v2)
    root_side = frozenset(range(t.n_vertices)) - below
    kids = [t.subtree(c) for c in t.children[v2]]

    def least_leaf(part):
        return min(t.leaf_number(v) for v in part if t.leaf_number(v) is not None)

    kids.sort(key=least_leaf)
    a1, a2 = t.index["A1"], t.index["A2"]
    tau1 = next(p for p in kids if a1 in p)
    tau2 = next(p for p in kids if a2 in p)
    rest = [p for p in kids if p is not tau1 and p is not tau2]

    def count(part):
        return sum(1 for v in part if t.degree(v) == 1)

    sigma_counts = tuple(count(p) for p in rest)
    if alpha == 2.0 and rest:
        raise AssertionError("A binary tree cannot have more than two subtrees below V2")
    counts = (count(root_side), count(tau1), count(tau2), sum(sigma_counts))
    k = len(rest)
    weights = (
        subtree_weight(t, root_side),
        subtree_weight(t, tau1),
        subtree_weight(t, tau2),
        math.fsum(subtree_weight(t, p) for p in rest) + (2.0 + k - alpha),
    )
    return Decomposition(v2, t.n, (root_side, tau1, tau2, *rest), counts, sigma_counts, weights)


# --- scaling statistics ---------------------------------------------------------


def spine_chain(alpha: float, n: int, reps: int, rng: np.random.Generator) -> np.ndarray:
    """
    Graph distance from the root to A1 after ``n`` leaves, for ``reps``
    independent growths. The spine gains an edge exactly when one of its
    ``k`` edges is chosen, which happens with probability k(alpha-1)/(m alpha-1).
    """
    alpha = check_alpha(alpha)
    if n < 1:
        raise DomainError(f"n must be at least 1, got {n}")
    k = np.ones(reps)
    for m in range(1, n):
        k += rng.random(reps) * (m * alpha - 1.0) < k * (alpha - 1.0)
    return k.astype(np.int64)


def spine_grow(alpha: float, n: int, reps: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(reps, dtype=np.int64)
    for r in range(reps):
        t = grow(alpha, n, rng, check=False)
        out[r] = t.graph_distance(0, t.index["A1"])
    return out


def expected_spine(alpha: float, n: int) -> float:
    """Exact mean graph distance from the root to A1 after ``n`` leaves."""
    beta = beta_of(alpha)
    return float(np.exp(gammaln(n + 2 * beta - 1) + gammaln(beta) - gammaln(2 * beta) - gammaln(n + beta - 1)))


def spine_scaling_stat(
    alpha: float,
    n: int,
    reps: int,
    rng: np.random.Generator,
    method: str = "chain",
    tol: float = 0.05,
) -> StatReport:
    """
    alpha times the rescaled root-to-A1 distance, i.e. graph distance over
    n^beta, compared with the ML(beta, beta) moments.
    """
    start = time.perf_counter()
    beta = beta_of(alpha)
    if method == "chain":
        d = spine_chain(alpha, n, reps, rng)
    elif method == "grow":
        d = spine_grow(alpha, n, reps, rng)
    else:
        raise DomainError(f"Unknown spine method: {method}")
    x = d / n**beta
    report = StatReport(f"marchal_spine_a{alpha:g}")
    report.record(compare("E[X^0]", 1.0, 0.0, reps, ml_moment(beta, beta, 0.0), "rel:1e-12"), "TRIVIAL")
    for p, rule in ((1, f"rel:{tol:g}"), (2, f"rel:{2 * tol:g}")):
        value, stderr = mean_stderr(x**p)
        report.record(compare(f"E[X^{p}]", value, stderr, reps, ml_moment(beta, beta, p), rule), "DERIVED")
    report.notes["exact_finite_n_mean"] = expected_spine(alpha, n) / n**beta
    report.runtime = time.perf_counter() - start
    logger.debug("spine scaling alpha=%g n=%d reps=%d in %.2fs", alpha, n, reps, report.runtime)
    return report


def decomposition_stat(alpha: float, n: int, reps: int, rng: np.random.Generator) -> StatReport:
    """
    Relative weight split around V2 against the Dir(beta, beta, beta, 1-2beta)
    means, and the correlation between the tau_0 share and the first
    subtree's share of sigma.
    """
    start = time.perf_counter()
    beta = beta_of(alpha)
    fractions = np.empty((reps, 4))
    first_share = np.full(reps, np.nan)
    for r in range(reps):
        dec = decompose_at_v2(grow(alpha, n, rng, check=False))
        fractions[r] = dec.fractions
        if dec.counts[3]:
            first_share[r] = dec.sigma_counts[0] / dec.counts[3]
    report = StatReport(f"marchal_split_a{alpha:g}")
    means = (beta / (1 + beta),) * 3 + ((1 - 2 * beta) / (1 + beta),)
    for i, target in enumerate(means):
        value, stderr = mean_stderr(fractions[:, i])
        report.record(compare(f"E[X{i}]", value, stderr, reps, target, "3sigma"), "PAPER")
    live = ~np.isnan(first_share)
    if live.sum() > 30 and np.std(first_share[live]) > 0:
        r_hat = float(np.corrcoef(fractions[live, 0], first_share[live])[0, 1])
        report.record(
            compare("corr(X0,P1)", r_hat, 1.0 / math.sqrt(live.sum()), int(live.sum()), 0.0, "3sigma"), "DERIVED"
        )
    report.runtime = time.perf_counter() - start
    return report


def weight_invariant_check(
    alphas: Sequence[float],
    n: int,
    reps: int,
    rng: np.random.Generator,
    checkpoints: Sequence[int] = (2, 10, 100),
) -> StatReport:
    """
    Grow ``reps`` trees per alpha with the weight assertion on, then
    recompute :func:`weight` from the finished tree and from the prefix
    trees at ``checkpoints`` of its growth history.
    """
    start = time.perf_counter()
    report = StatReport("marchal_weight")
    for alpha in alphas:
        violations = 0
        drift = 0.0
        for _ in range(reps):
            try:
                t = grow(alpha, n, rng, check=True)
            except AssertionError:
                violations += 1
                continue
            drift = max(drift, t.max_rel_drift)
            for k in sorted({k for k in checkpoints if 1 <= k <= n} | {n}):
                rel = abs(weight(prefix_tree(t, k)) - (k * alpha - 1.0)) / (k * alpha - 1.0)
                drift = max(drift, rel)
                if rel > WEIGHT_RTOL:
                    violations += 1
                    break
        report.notes[f"max_rel_drift_a{alpha:g}"] = drift
        report.record(compare(f"violations_a{alpha:g}", violations, 0.0, reps, 0.0, "exact"), "PAPER")
    report.runtime = time.perf_counter() - start
    return report

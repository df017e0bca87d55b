# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

"""Scaling sequences and single-point concatenation of marked trees.

A scaling sequence is ``(x0, x1, x2, x3 * p_j, j >= 1)``. Concatenation
rescales tree ``i`` by ``xi_i ** beta``, keeps the root of tree 0 as the
root and glues the roots of trees ``1, 2, ...`` to the marked point of tree
0. The marked point of the result is the marked point of tree 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError
from .ghdist import DEFAULT_MAX_NODES, gh_dist
from .laws import dirichlet_sample, pd_for_stable
from .marchal import beta_of
from .trees import MetricTree, TreeBuilder, point_tree, rescale

SUM_TOL = 1e-12


@dataclass(frozen=True)
class ScalingSeq:
    x: Tuple[float, float, float, float]
    p: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        if len(self.x) != 4 or min(self.x) < 0:
            raise DomainError(f"x must be four nonnegative reals, got {list(self.x)}")
        if abs(math.fsum(self.x) - 1.0) > SUM_TOL:
            raise DomainError(f"x sums to {math.fsum(self.x)!r}, expected 1")
        if self.p:
            if min(self.p) <= 0 or any(b > a for a, b in zip(self.p, self.p[1:])):
                raise DomainError("p must be positive and decreasing")
            if abs(math.fsum(self.p) - 1.0) > SUM_TOL:
                raise DomainError(f"p sums to {math.fsum(self.p)!r}, expected 1")
        elif self.x[3] > 0:
            raise DomainError("x3 > 0 needs a nonempty p")

    @property
    def atoms(self) -> Tuple[float, ...]:
        """xi_0, xi_1, ... with xi_i = x_i for i <= 2 and x3 p_{i-2} beyond."""
        x3 = self.x[3]
        return self.x[:3] + tuple(x3 * q for q in self.p if x3 > 0)

    def __len__(self):
        return len(self.atoms)

    @classmethod
    def from_atoms(cls, atoms: Sequence[float]) -> "ScalingSeq":
        atoms = [float(a) for a in atoms] + [0.0] * max(0, 3 - len(atoms))
        head, tail = atoms[:3], [a for a in atoms[3:] if a > 0]
        x3 = math.fsum(tail)
        x = (*head, x3)
        if x3 > 0:
            x = (*head, 1.0 - math.fsum(head))
        return cls(x, tuple(a / x3 for a in tail) if x3 > 0 else ())

    def truncate(self, k: int) -> "ScalingSeq":
        """Keep the first ``k`` atoms of p, renormalised."""
        if not self.p or k >= len(self.p):
            return self
        if k < 1:
            raise DomainError("Truncation must keep at least one atom of p")
        kept = self.p[:k]
        total = math.fsum(kept)
        return ScalingSeq(self.x, tuple(q / total for q in kept))


@dataclass(frozen=True)
class ConcatInput:
    xi: ScalingSeq
    trees: Tuple[Optional[MetricTree], ...]
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        if not 0 < self.beta <= 1:
            raise DomainError(f"beta must lie in (0, 1], got {self.beta}")
        for i, a in enumerate(self.xi.atoms):
            if a > 0:
                if i >= len(self.trees) or self.trees[i] is None:
                    raise DomainError(f"Atom {i} is positive but has no tree")
                t = self.trees[i]
                if t.marked is None:
                    raise DomainError(f"Tree {i} has no marked point")

    def tree(self, i: int) -> MetricTree:
        """Tree ``i``; a one-point tree where the atom is zero or missing."""
        atoms = self.xi.atoms
        if i < len(atoms) and atoms[i] > 0:
            return self.trees[i]
        return point_tree()


def concat_with_map(inp: ConcatInput) -> Tuple[MetricTree, List[Dict[int, int]]]:
    """Concatenated tree and, per input tree, old node id -> new node id."""
    atoms = inp.xi.atoms
    beta = inp.beta
    builder = TreeBuilder()
    maps: List[Dict[int, int]] = []
    t0 = inp.tree(0)
    maps.append(builder.graft(t0, -1, atoms[0] ** beta, atoms[0], label_prefix="0/"))
    glue = maps[0][t0.marked]
    for i in range(1, len(atoms)):
        if atoms[i] <= 0:
            maps.append({})
            continue
        ti = inp.trees[i]
        maps.append(builder.graft(ti, glue, atoms[i] ** beta, atoms[i], label_prefix=f"{i}/"))
    t1 = inp.tree(1)
    builder.marked = maps[1][t1.marked] if maps[1] else glue
    return builder.build(), maps


def concat(inp: ConcatInput) -> MetricTree:
    return concat_with_map(inp)[0]


def concat_distance(inp: ConcatInput, i: int, u: int, j: int, v: int) -> float:
    """Distance between node ``u`` of tree ``i`` and node ``v`` of tree ``j``
    after concatenation, read off the four-case formula."""
    atoms = inp.xi.atoms
    beta = inp.beta
    ti, tj = inp.tree(i), inp.tree(j)
    si, sj = atoms[i] ** beta, atoms[j] ** beta
    if i == j:
        return si * ti.dist(u, v)
    t0 = inp.tree(0)
    if i == 0:
        return si * ti.dist(u, t0.marked) + sj * tj.dist(tj.root, v)
    if j == 0:
        return si * ti.dist(u, ti.root) + sj * t0.dist(t0.marked, v)
    return si * ti.dist(u, ti.root) + sj * tj.dist(tj.root, v)


def stable_dirichlet_params(alpha: float) -> Tuple[float, ...]:
    beta = beta_of(alpha)
    if beta == 0.5:
        return (0.5, 0.5, 0.5)
    return (beta, beta, beta, 1.0 - 2.0 * beta)


def stable_xi(alpha: float, eps: float, rng: np.random.Generator, max_atoms: int = 100_000) -> ScalingSeq:
    """
    Scaling factors of the stable tree: (X0, X1, X2, X3) ~ Dir(b, b, b, 1 - 2b)
    and an independent PD(1 - b, 1 - 2b) sequence, b = 1 - 1/alpha. For
    alpha = 2 the fourth share and the sequence vanish.

    The Dirichlet part is drawn first, so a caller that only needs x can
    stop after :func:`dirichlet_sample` on the same stream.
    """
    beta = beta_of(alpha)
    x = dirichlet_sample(stable_dirichlet_params(alpha), rng)
    if beta == 0.5:
        return ScalingSeq((*x, 0.0))
    pd = pd_for_stable(beta, eps, rng, max_atoms)
    return ScalingSeq(tuple(x), pd.weights)


@dataclass(frozen=True)
class DBetaReport:
    value: float
    tail_bound: float
    argmax: int


def d_beta_report(k1: ConcatInput, k2: ConcatInput, max_nodes: int = DEFAULT_MAX_NODES) -> DBetaReport:
    """
    Supremum over the stored atoms of the atom, tree and scaled-tree
    differences. Indices stored on one side only are compared with the
    one-point tree. ``tail_bound`` bounds the atom term of unstored indices.
    """
    if k1.beta != k2.beta:
        raise DomainError(f"Inputs use different beta: {k1.beta} and {k2.beta}")
    beta = k1.beta
    a1, a2 = k1.xi.atoms, k2.xi.atoms
    length = max(len(a1), len(a2))
    best, arg = 0.0, 0
    for i in range(length):
        x = a1[i] if i < len(a1) else 0.0
        y = a2[i] if i < len(a2) else 0.0
        s, t = k1.tree(i), k2.tree(i)
        term = abs(x**beta - y**beta)
        if term <= best and s.n_nodes == 1 and t.n_nodes == 1:
            continue
        term = max(term, gh_dist(s, t, marked=True, max_nodes=max_nodes).distance)
        scaled_s = rescale(s, x, beta) if x > 0 else point_tree()
        scaled_t = rescale(t, y, beta) if y > 0 else point_tree()
        term = max(term, gh_dist(scaled_s, scaled_t, marked=True, max_nodes=max_nodes).distance)
        if term > best:
            best, arg = term, i
    tail = max(a1[-1] if len(a1) > 3 else 0.0, a2[-1] if len(a2) > 3 else 0.0)
    return DBetaReport(best, tail**beta, arg)


def d_beta(k1: ConcatInput, k2: ConcatInput, max_nodes: int = DEFAULT_MAX_NODES) -> float:
    return d_beta_report(k1, k2, max_nodes).value

# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

"""Finite rooted metric trees.

A :class:`MetricTree` is the finite skeleton of a rooted, optionally marked
and measured R-tree: dense integer node ids, a parent pointer and an edge
length per node. Values are immutable; every operation returns a new tree.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import IO, Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import DomainError

MASS_TOL = 1e-12
FORMAT = "rtree-v1"


class _LowestCommonAncestor:
    """
    Constant time lowest common ancestor queries through an Euler tour and a
    sparse range-minimum table over the tour levels.
    """

    def __init__(self, children: Tuple[Tuple[int, ...], ...], root: int, level: np.ndarray):
        tour: List[int] = []
        stack: List[Tuple[int, int]] = [(root, 0)]
        while stack:
            node, i = stack.pop()
            tour.append(node)
            kids = children[node]
            if i < len(kids):
                stack.append((node, i + 1))
                stack.append((kids[i], 0))
        self.tour = np.asarray(tour, dtype=np.int64)
        nodes, first = np.unique(self.tour, return_index=True)
        self.first = np.full(len(children), -1, dtype=np.int64)
        self.first[nodes] = first
        tour_level = level[self.tour]

        table = [np.arange(len(tour), dtype=np.int64)]
        span = 1
        while 2 * span <= len(tour):
            prev = table[-1]
            left = prev[: len(prev) - span]
            right = prev[span:]
            table.append(np.where(tour_level[left] <= tour_level[right], left, right))
            span *= 2
        self._table = table
        self._tour_level = tour_level

    def __call__(self, u, v):
        a = self.first[u]
        b = self.first[v]
        lo = np.minimum(a, b)
        hi = np.maximum(a, b) + 1
        k = np.floor(np.log2(hi - lo)).astype(np.int64)
        k = np.atleast_1d(k)
        lo = np.atleast_1d(lo)
        hi = np.atleast_1d(hi)
        out = np.empty(len(k), dtype=np.int64)
        for level in np.unique(k):
            sel = k == level
            row = self._table[level]
            left = row[lo[sel]]
            right = row[hi[sel] - (1 << int(level))]
            out[sel] = np.where(self._tour_level[left] <= self._tour_level[right], left, right)
        result = self.tour[out]
        return result if np.ndim(u) or np.ndim(v) else int(result[0])


@dataclass(frozen=True)
class TreeStats:
    height: float
    spine_len: Optional[float]
    n_leaves: int
    total_length: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "height": self.height,
            "spine_len": self.spine_len,
            "n_leaves": self.n_leaves,
            "total_length": self.total_length,
        }


@dataclass(frozen=True, eq=False)
class MetricTree:
    """
    Rooted metric tree on nodes ``0 .. n-1``.

    ``parent[root]`` is ``-1`` and ``edge_len[v]`` is the length of the edge
    from ``v`` to its parent. A zero-length edge is only allowed on nodes
    listed in ``junction`` (gluing points created by concatenation).
    ``leaf_mass`` maps nodes to nonnegative masses summing to ``mass_total``.
    """

    parent: Tuple[int, ...]
    edge_len: Tuple[float, ...]
    root: int = 0
    marked: Optional[int] = None
    leaf_mass: Optional[Mapping[int, float]] = None
    labels: Optional[Mapping[int, str]] = None
    junction: FrozenSet[int] = field(default_factory=frozenset)
    mass_total: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "parent", tuple(int(p) for p in self.parent))
        object.__setattr__(self, "edge_len", tuple(float(x) for x in self.edge_len))
        object.__setattr__(self, "junction", frozenset(int(j) for j in self.junction))
        if self.leaf_mass is not None:
            object.__setattr__(
                self, "leaf_mass", {int(k): float(v) for k, v in self.leaf_mass.items()}
            )
        if self.labels is not None:
            object.__setattr__(self, "labels", {int(k): str(v) for k, v in self.labels.items()})
        self._validate()

    def _validate(self):
        n = len(self.parent)
        if n == 0:
            raise DomainError("A tree needs at least one node")
        if len(self.edge_len) != n:
            raise DomainError(f"edge_len has {len(self.edge_len)} entries for {n} nodes")
        self._check_node(self.root)
        if self.parent[self.root] != -1:
            raise DomainError(f"Root {self.root} must not have a parent")
        if self.edge_len[self.root] != 0.0:
            raise DomainError(f"Root edge length must be 0, got {self.edge_len[self.root]}")
        for v, (p, length) in enumerate(zip(self.parent, self.edge_len)):
            if v == self.root:
                continue
            if not 0 <= p < n:
                raise DomainError(f"Node {v} has invalid parent {p}")
            if not math.isfinite(length) or length < 0:
                raise DomainError(f"Node {v} has invalid edge length {length}")
            if length == 0 and v not in self.junction:
                raise DomainError(f"Node {v} has a zero-length edge but is not a junction")
        if len(self.order) != n:
            raise DomainError("Parent pointers do not form a single tree")
        if self.marked is not None:
            self._check_node(self.marked)
        for j in self.junction:
            self._check_node(j)
        if self.leaf_mass is not None:
            for v, m in self.leaf_mass.items():
                self._check_node(v)
                if not m >= 0:
                    raise DomainError(f"Node {v} has negative mass {m}")
            total = math.fsum(self.leaf_mass.values())
            if abs(total - self.mass_total) > MASS_TOL * max(1.0, self.mass_total):
                raise DomainError(f"Leaf masses sum to {total!r}, expected {self.mass_total!r}")

    def _check_node(self, v):
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or not 0 <= v < len(self.parent):
            raise DomainError(f"Invalid node index: {v}")

    # --- structure ---------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @cached_property
    def children(self) -> Tuple[Tuple[int, ...], ...]:
        kids: List[List[int]] = [[] for _ in self.parent]
        for v, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(v)
        return tuple(tuple(k) for k in kids)

    @cached_property
    def order(self) -> Tuple[int, ...]:
        """Nodes in breadth-first order from the root."""
        kids = self.children
        out = [self.root]
        i = 0
        while i < len(out) and len(out) <= len(self.parent):
            out.extend(kids[out[i]])
            i += 1
        return tuple(out)

    @cached_property
    def depth(self) -> np.ndarray:
        """Distance from the root to every node."""
        d = np.zeros(self.n_nodes)
        parent = self.parent
        edge = self.edge_len
        for v in self.order[1:]:
            d[v] = d[parent[v]] + edge[v]
        d.flags.writeable = False
        return d

    @cached_property
    def _level(self) -> np.ndarray:
        lv = np.zeros(self.n_nodes, dtype=np.int64)
        for v in self.order[1:]:
            lv[v] = lv[self.parent[v]] + 1
        return lv

    @cached_property
    def _lca(self) -> _LowestCommonAncestor:
        return _LowestCommonAncestor(self.children, self.root, self._level)

    def degree(self, v: int) -> int:
        self._check_node(v)
        return len(self.children[v]) + (0 if v == self.root else 1)

    @cached_property
    def leaves(self) -> Tuple[int, ...]:
        """Degree-one non-root vertices."""
        return tuple(v for v in range(self.n_nodes) if v != self.root and not self.children[v])

    # --- metric ------------------------------------------------------------

    def lca(self, u: int, v: int) -> int:
        self._check_node(u)
        self._check_node(v)
        return self._lca(u, v)

    def dist(self, u: int, v: int) -> float:
        """Length of the unique path between ``u`` and ``v``."""
        if u == v:
            self._check_node(u)
            return 0.0
        w = self.lca(u, v)
        d = self.depth
        return float(max(d[u] + d[v] - 2.0 * d[w], 0.0))

    def distance_matrix(self, nodes: Optional[Iterable[int]] = None) -> np.ndarray:
        idx = np.arange(self.n_nodes) if nodes is None else np.asarray(list(nodes), dtype=np.int64)
        if len(idx) == 0:
            return np.zeros((0, 0))
        for v in idx:
            self._check_node(int(v))
        u, v = np.meshgrid(idx, idx, indexing="ij")
        w = self._lca(u.ravel(), v.ravel()).reshape(u.shape)
        d = self.depth
        out = np.maximum(d[u] + d[v] - 2.0 * d[w], 0.0)
        np.fill_diagonal(out, 0.0)
        return out

    def spine_length(self) -> float:
        if self.marked is None:
            raise DomainError("Tree has no marked point")
        return float(self.depth[self.marked])

    def height(self) -> float:
        return float(self.depth.max())

    def to_dict(self) -> Dict[str, Any]:
        """rtree-v1 representation; nodes sorted by id."""
        data: Dict[str, Any] = {
            "format": FORMAT,
            "nodes": [
                {"id": v, "parent": (None if p < 0 else p), "edge_len": self.edge_len[v]}
                for v, p in enumerate(self.parent)
            ],
            "root": self.root,
            "marked": self.marked,
            "leaf_mass": (
                None
                if self.leaf_mass is None
                else {str(k): self.leaf_mass[k] for k in sorted(self.leaf_mass)}
            ),
            "labels": (
                None if self.labels is None else {str(k): self.labels[k] for k in sorted(self.labels)}
            ),
        }
        if self.junction:
            data["junctions"] = sorted(self.junction)
        if self.mass_total != 1.0:
            data["mass_total"] = self.mass_total
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MetricTree":
        if data.get("format") != FORMAT:
            raise DomainError(f"Unsupported tree format: {data.get('format')!r}")
        try:
            nodes = sorted(data["nodes"], key=lambda node: int(node["id"]))
            ids = [int(node["id"]) for node in nodes]
            if ids != list(range(len(ids))):
                raise DomainError("Node ids must be the dense range 0..n-1")
            parent = [-1 if node["parent"] is None else int(node["parent"]) for node in nodes]
            edge_len = [float(node["edge_len"]) for node in nodes]
            masses = data.get("leaf_mass")
            labels = data.get("labels")
            return cls(
                parent=tuple(parent),
                edge_len=tuple(edge_len),
                root=int(data["root"]),
                marked=None if data.get("marked") is None else int(data["marked"]),
                leaf_mass=None if masses is None else {int(k): float(m) for k, m in masses.items()},
                labels=None if labels is None else {int(k): str(s) for k, s in labels.items()},
                junction=frozenset(int(j) for j in data.get("junctions", ())),
                mass_total=float(data.get("mass_total", 1.0)),
            )
        except (KeyError, TypeError) as exc:
            raise DomainError(f"Malformed {FORMAT} document: {exc}") from exc


def dist(t: MetricTree, u: int, v: int) -> float:
    return t.dist(u, v)


def stats(t: MetricTree) -> TreeStats:
    return TreeStats(
        height=t.height(),
        spine_len=None if t.marked is None else t.spine_length(),
        n_leaves=len(t.leaves),
        total_length=math.fsum(t.edge_len),
    )


def reduce_with_map(t: MetricTree, pts: Iterable[int]) -> Tuple[MetricTree, Dict[int, int]]:
    """
    Subtree spanned by ``pts`` and the root, with degree-2 vertices suppressed.

    Returns the reduced tree and the map from retained old ids to new ids.
    Mass on a dropped node moves to its nearest retained ancestor.
    """
    pts = set(pts)
    if not pts:
        raise DomainError("reduce needs at least one point")
    for v in pts:
        t._check_node(v)

    in_span = np.zeros(t.n_nodes, dtype=bool)
    in_span[t.root] = True
    for v in pts:
        while not in_span[v]:
            in_span[v] = True
            v = t.parent[v]

    span_kids = [0] * t.n_nodes
    for v in range(t.n_nodes):
        if in_span[v] and v != t.root:
            span_kids[t.parent[v]] += 1

    keep = set(pts)
    keep.add(t.root)
    if t.marked is not None and in_span[t.marked]:
        keep.add(t.marked)
    keep.update(v for v in range(t.n_nodes) if in_span[v] and span_kids[v] >= 2)

    # nearest kept ancestor-or-self for every node, in BFS order
    anchor = np.empty(t.n_nodes, dtype=np.int64)
    new_id: Dict[int, int] = {}
    parent: List[int] = []
    edge: List[float] = []
    depth = t.depth
    for v in t.order:
        if v in keep:
            new_id[v] = len(parent)
            if v == t.root:
                parent.append(-1)
                edge.append(0.0)
            else:
                up = anchor[t.parent[v]]
                parent.append(new_id[int(up)])
                edge.append(float(depth[v] - depth[up]))
            anchor[v] = v
        else:
            anchor[v] = anchor[t.parent[v]]

    junction = {new_id[v] for v in t.junction if v in new_id}
    # retained points that sit at distance 0 from their parent are junctions
    junction.update(i for i, length in enumerate(edge) if i and length == 0.0)

    masses = None
    if t.leaf_mass is not None:
        masses = {}
        for v, m in t.leaf_mass.items():
            k = new_id[int(anchor[v])]
            masses[k] = masses.get(k, 0.0) + m

    labels = None
    if t.labels is not None:
        labels = {new_id[v]: s for v, s in t.labels.items() if v in new_id}

    reduced = MetricTree(
        parent=tuple(parent),
        edge_len=tuple(edge),
        root=0,
        marked=new_id.get(t.marked) if t.marked is not None else None,
        leaf_mass=masses,
        labels=labels,
        junction=frozenset(junction),
        mass_total=t.mass_total,
    )
    return reduced, new_id


def reduce(t: MetricTree, pts: Iterable[int]) -> MetricTree:
    return reduce_with_map(t, pts)[0]


def rescale(t: MetricTree, mass_factor: float, beta: float, keep_normalized: bool = True) -> MetricTree:
    """
    Distances times ``mass_factor ** beta``; masses times ``mass_factor``
    unless ``keep_normalized``.
    """
    if not mass_factor > 0:
        raise DomainError(f"mass_factor must be positive, got {mass_factor}")
    if not 0 < beta <= 1:
        raise DomainError(f"beta must lie in (0, 1], got {beta}")
    scale = mass_factor**beta
    masses = t.leaf_mass
    total = t.mass_total
    if masses is not None and not keep_normalized:
        masses = {v: m * mass_factor for v, m in masses.items()}
        total = math.fsum(masses.values())
    return MetricTree(
        parent=t.parent,
        edge_len=tuple(x * scale for x in t.edge_len),
        root=t.root,
        marked=t.marked,
        leaf_mass=masses,
        labels=t.labels,
        junction=t.junction,
        mass_total=total,
    )


def sample_leaf(t: MetricTree, rng: np.random.Generator) -> int:
    """A node drawn from the leaf measure, or a uniform leaf if there is none."""
    if t.leaf_mass is not None:
        nodes = [v for v, m in t.leaf_mass.items() if m > 0]
        if nodes:
            weights = np.array([t.leaf_mass[v] for v in nodes])
            return int(nodes[rng.choice(len(nodes), p=weights / weights.sum())])
    if not t.leaves:
        raise DomainError("Tree has no leaves to sample from")
    return int(t.leaves[rng.integers(len(t.leaves))])


class TreeBuilder:
    """Incremental construction of a :class:`MetricTree`."""

    def __init__(self):
        self.parent: List[int] = [-1]
        self.edge_len: List[float] = [0.0]
        self.labels: Dict[int, str] = {}
        self.masses: Dict[int, float] = {}
        self.junction: set = set()
        self.marked: Optional[int] = None

    @property
    def root(self) -> int:
        return 0

    def __len__(self):
        return len(self.parent)

    def add(self, parent: int, length: float, label: Optional[str] = None, junction: bool = False) -> int:
        v = len(self.parent)
        self.parent.append(parent)
        self.edge_len.append(float(length))
        if label is not None:
            self.labels[v] = label
        if junction:
            self.junction.add(v)
        return v

    def add_mass(self, v: int, mass: float):
        if mass:
            self.masses[v] = self.masses.get(v, 0.0) + mass

    def graft(
        self,
        t: MetricTree,
        at: int,
        scale: float = 1.0,
        mass_factor: float = 1.0,
        label_prefix: str = "",
        identify_root: bool = False,
    ) -> Dict[int, int]:
        """
        Copy ``t`` with lengths times ``scale``. Its root is glued to ``at``
        by a zero-length junction edge, or becomes ``at`` itself with
        ``identify_root`` (always for ``at < 0``, meaning the builder root).
        Returns old id -> new id.
        """
        mapping: Dict[int, int] = {}
        for v in t.order:
            label = None
            if t.labels is not None and v in t.labels:
                label = label_prefix + t.labels[v]
            if v == t.root:
                if at < 0 or identify_root:
                    node = max(at, 0)
                    mapping[v] = node
                    if label is not None:
                        self.labels[node] = label
                    continue
                mapping[v] = self.add(at, 0.0, label, junction=True)
            else:
                length = t.edge_len[v] * scale
                mapping[v] = self.add(
                    mapping[t.parent[v]], length, label, junction=(length == 0.0)
                )
        if t.leaf_mass is not None:
            for v, m in t.leaf_mass.items():
                self.add_mass(mapping[v], m * mass_factor)
        return mapping

    def build(self, normalize: bool = True) -> MetricTree:
        masses = None
        total = 1.0
        if self.masses:
            total = math.fsum(self.masses.values())
            if normalize:
                masses = {v: m / total for v, m in self.masses.items()}
                total = 1.0
            else:
                masses = dict(self.masses)
        return MetricTree(
            parent=tuple(self.parent),
            edge_len=tuple(self.edge_len),
            root=0,
            marked=self.marked,
            leaf_mass=masses,
            labels=self.labels or None,
            junction=frozenset(self.junction),
            mass_total=total,
        )


def segment(length: float, mass: bool = True) -> MetricTree:
    """Root joined to a marked end point; the end point carries unit mass."""
    if not length > 0:
        raise DomainError(f"Segment length must be positive, got {length}")
    return MetricTree(
        parent=(-1, 0),
        edge_len=(0.0, float(length)),
        root=0,
        marked=1,
        leaf_mass={1: 1.0} if mass else None,
    )


def point_tree() -> MetricTree:
    """The one-point tree, root and mark coinciding."""
    return MetricTree(parent=(-1,), edge_len=(0.0,), root=0, marked=0)


def path_tree(lengths: Iterable[float], marked_end: bool = True) -> MetricTree:
    lengths = list(lengths)
    parent = tuple(range(-1, len(lengths)))
    return MetricTree(
        parent=parent,
        edge_len=(0.0, *lengths),
        marked=len(lengths) if marked_end else None,
    )


def star_tree(lengths: Iterable[float], marked: Optional[int] = 1) -> MetricTree:
    """Root edge of length ``lengths[0]`` then one edge per remaining length."""
    lengths = list(lengths)
    parent = [-1, 0] + [1] * (len(lengths) - 1)
    return MetricTree(parent=tuple(parent), edge_len=(0.0, *lengths), marked=marked)


def random_tree(n_nodes: int, rng: np.random.Generator, marked: bool = True) -> MetricTree:
    """Uniform random recursive tree with Unif(0.1, 1) edges, random leaf masses and a marked leaf."""
    if n_nodes < 1:
        raise DomainError(f"n_nodes must be at least 1, got {n_nodes}")
    parent = [-1] + [int(rng.integers(v)) for v in range(1, n_nodes)]
    lengths = [0.0] + rng.uniform(0.1, 1.0, n_nodes - 1).tolist()
    has_child = set(parent[1:])
    leaves = [v for v in range(n_nodes) if v not in has_child]
    weights = rng.random(len(leaves)) + 0.1
    return MetricTree(
        parent=tuple(parent),
        edge_len=tuple(lengths),
        marked=int(leaves[rng.integers(len(leaves))]) if marked else None,
        leaf_mass={v: float(w) for v, w in zip(leaves, weights / weights.sum())},
    )


def write_tree(t: MetricTree, target: Union[str, Path, IO[str]], extra: Optional[Mapping[str, Any]] = None):
    data = t.to_dict()
    if extra:
        data.update(extra)
    if hasattr(target, "write"):
        json.dump(data, target, indent=1)
        target.write("\n")
    else:
        Path(target).write_text(json.dumps(data, indent=1) + "\n")


def read_tree(source: Union[str, Path, IO[str]]) -> MetricTree:
    if hasattr(source, "read"):
        data = json.load(source)
    else:
        data = json.loads(Path(source).read_text())
    return MetricTree.from_dict(data)

# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

import io
import json

import numpy as np
import pytest

from StableRDE.errors import DomainError
from StableRDE.rng import make_rng
from StableRDE.trees import (
    MetricTree,
    TreeBuilder,
    path_tree,
    point_tree,
    random_tree,
    read_tree,
    reduce,
    reduce_with_map,
    rescale,
    sample_leaf,
    segment,
    star_tree,
    stats,
    write_tree,
)


class TestMetricTree:
    """Construction, validation and the metric of finite rooted trees"""

    def setup_method(self):
        # root 0 -> 1 (len 1) -> {2 (len 2), 3 (len 3)}; 0 -> 4 (len 0.5)
        self.tree = MetricTree(
            parent=(-1, 0, 1, 1, 0),
            edge_len=(0.0, 1.0, 2.0, 3.0, 0.5),
            marked=3,
            leaf_mass={2: 0.5, 3: 0.25, 4: 0.25},
        )

    def test_distances(self):
        """Test distances through the lowest common ancestor"""
        t = self.tree
        assert t.dist(2, 3) == 5.0
        assert t.dist(2, 4) == 3.5
        assert t.dist(0, 3) == 4.0
        assert t.dist(3, 3) == 0.0
        assert t.lca(2, 3) == 1
        assert t.lca(3, 4) == 0

    def test_distance_matrix_matches_dist(self):
        """Test that the vectorised matrix agrees with pairwise queries"""
        t = random_tree(40, make_rng(3))
        d = t.distance_matrix()
        for u, v in [(0, 39), (5, 17), (12, 12), (30, 2)]:
            assert d[u, v] == pytest.approx(t.dist(u, v), abs=1e-12)
        assert np.allclose(d, d.T)

    def test_spine_height_stats(self):
        """Test spine length, height, leaves and summary statistics"""
        t = self.tree
        assert t.spine_length() == 4.0
        assert t.height() == 4.0
        assert t.leaves == (2, 3, 4)
        s = stats(t)
        assert s.n_leaves == 3
        assert s.total_length == 6.5
        assert s.to_dict()["spine_len"] == 4.0

    def test_degree(self):
        """Test that the root degree does not count a parent edge"""
        assert self.tree.degree(0) == 2
        assert self.tree.degree(1) == 3
        assert self.tree.degree(2) == 1

    def test_rejects_cycles(self):
        """Test that parent pointers must form one tree"""
        with pytest.raises(DomainError, match="single tree"):
            MetricTree(parent=(-1, 2, 1), edge_len=(0.0, 1.0, 1.0))

    def test_rejects_negative_length(self):
        """Test that edge lengths must be nonnegative"""
        with pytest.raises(DomainError, match="invalid edge length"):
            MetricTree(parent=(-1, 0), edge_len=(0.0, -1.0))

    def test_zero_length_only_on_junctions(self):
        """Test that zero-length edges need a junction flag"""
        with pytest.raises(DomainError, match="not a junction"):
            MetricTree(parent=(-1, 0), edge_len=(0.0, 0.0))
        t = MetricTree(parent=(-1, 0), edge_len=(0.0, 0.0), junction=frozenset({1}))
        assert t.dist(0, 1) == 0.0

    def test_mass_must_sum_to_total(self):
        """Test that leaf masses must sum to one"""
        with pytest.raises(DomainError, match="sum to"):
            MetricTree(parent=(-1, 0), edge_len=(0.0, 1.0), leaf_mass={1: 0.5})

    def test_invalid_marked(self):
        """Test that the marked point must be a node"""
        with pytest.raises(DomainError, match="Invalid node index"):
            MetricTree(parent=(-1, 0), edge_len=(0.0, 1.0), marked=5)

    def test_spine_needs_mark(self):
        """Test that an unmarked tree has no spine"""
        with pytest.raises(DomainError, match="no marked point"):
            path_tree([1.0], marked_end=False).spine_length()

    def test_triangle_inequality(self):
        """Test d(i, k) <= d(i, j) + d(j, k) on random trees"""
        rng = make_rng(41)
        for _ in range(20):
            d = random_tree(int(rng.integers(2, 12)), rng).distance_matrix()
            excess = d[:, None, :] - d[:, :, None] - d[None, :, :]
            assert excess.max() <= 1e-12

    def test_four_point_condition(self):
        """Test d(i,j) + d(k,l) <= max(d(i,k) + d(j,l), d(i,l) + d(j,k)) on random trees"""
        rng = make_rng(43)
        for _ in range(20):
            d = random_tree(int(rng.integers(4, 10)), rng).distance_matrix()
            ij_kl = d[:, :, None, None] + d[None, None, :, :]
            ik_jl = d[:, None, :, None] + d[None, :, None, :]
            il_jk = d[:, None, None, :] + d[None, :, :, None]
            assert (ij_kl - np.maximum(ik_jl, il_jk)).max() <= 1e-12


class TestReduce:
    """Subtrees spanned by point sets"""

    def test_reduce_suppresses_degree_two(self):
        """Test that a path reduces to a segment between its ends"""
        t = path_tree([1.0, 2.0, 3.0])
        r = reduce(t, [3])
        assert r.n_nodes == 2
        assert r.spine_length() == 6.0

    def test_reduce_preserves_distances(self):
        """Test that distances between kept points are unchanged"""
        t = random_tree(30, make_rng(11))
        pts = list(t.leaves[:5])
        r, new_id = reduce_with_map(t, pts)
        for u in pts:
            for v in pts:
                assert r.dist(new_id[u], new_id[v]) == pytest.approx(t.dist(u, v), abs=1e-12)
        assert sum(r.leaf_mass.values()) == pytest.approx(1.0, abs=1e-12)

    def test_reduce_empty(self):
        """Test that at least one point is needed"""
        with pytest.raises(DomainError, match="at least one point"):
            reduce(segment(1.0), [])


class TestRescaleAndSampling:
    """Rescaling and leaf sampling"""

    def test_rescale(self):
        """Test that distances scale by mass_factor ** beta"""
        t = rescale(segment(2.0), 4.0, 0.5)
        assert t.spine_length() == 4.0
        assert t.leaf_mass == {1: 1.0}
        raw = rescale(segment(2.0), 4.0, 0.5, keep_normalized=False)
        assert raw.mass_total == 4.0

    def test_rescale_composes(self):
        """Test that two rescalings compose multiplicatively"""
        t = random_tree(12, make_rng(4))
        twice = rescale(rescale(t, 2.0, 0.4), 3.0, 0.4)
        once = rescale(t, 6.0, 0.4)
        assert twice.edge_len == pytest.approx(once.edge_len, rel=1e-12)
        assert rescale(t, 1.0, 0.4).edge_len == t.edge_len

    def test_rescale_rejects_bad_factor(self):
        """Test that the mass factor must be positive"""
        with pytest.raises(DomainError, match="mass_factor"):
            rescale(segment(1.0), 0.0, 0.5)

    def test_sample_leaf_follows_masses(self):
        """Test that sampling only returns nodes carrying mass"""
        t = MetricTree(parent=(-1, 0, 0), edge_len=(0.0, 1.0, 1.0), leaf_mass={1: 1.0, 2: 0.0})
        rng = make_rng(5)
        assert {sample_leaf(t, rng) for _ in range(20)} == {1}


class TestBuilderAndIO:
    """TreeBuilder grafting and the rtree-v1 format"""

    def test_graft_with_junction(self):
        """Test that a graft below an existing node uses a zero-length junction"""
        b = TreeBuilder()
        mp0 = b.graft(segment(1.0), -1, 2.0, 0.5)
        mp1 = b.graft(segment(1.0), mp0[1], 3.0, 0.5)
        b.marked = mp1[1]
        t = b.build()
        assert t.spine_length() == 5.0
        assert len(t.junction) == 1
        assert sum(t.leaf_mass.values()) == pytest.approx(1.0)

    def test_graft_identify_root(self):
        """Test that identify_root reuses the attachment node"""
        b = TreeBuilder()
        b.add(0, 1.0)
        mp = b.graft(star_tree([1.0, 1.0, 1.0]), 1, identify_root=True)
        assert mp[0] == 1
        assert len(b) == 5

    def test_round_trip(self, tmp_path):
        """Test writing and reading a tree file"""
        b = TreeBuilder()
        b.graft(segment(1.5), -1, label_prefix="a/")
        b.add(0, 0.0, label="glue", junction=True)
        b.add_mass(2, 1.0)
        b.marked = 1
        t = b.build()
        path = tmp_path / "tree.json"
        write_tree(t, path, extra={"note": "x"})
        data = json.loads(path.read_text())
        assert data["format"] == "rtree-v1"
        assert data["junctions"] == [2]
        back = read_tree(path)
        assert back.parent == t.parent
        assert back.edge_len == t.edge_len
        assert back.junction == t.junction
        assert back.leaf_mass == t.leaf_mass
        assert back.labels == {2: "glue"}

    def test_stream_round_trip(self):
        """Test reading back from a stream"""
        buf = io.StringIO()
        write_tree(random_tree(6, make_rng(1)), buf)
        buf.seek(0)
        assert read_tree(buf).n_nodes == 6

    def test_from_dict_rejects_sparse_ids(self):
        """Test that node ids must be dense"""
        data = segment(1.0).to_dict()
        data["nodes"][1]["id"] = 7
        with pytest.raises(DomainError, match="dense range"):
            MetricTree.from_dict(data)

    def test_from_dict_rejects_format(self):
        """Test that the format tag is checked"""
        with pytest.raises(DomainError, match="Unsupported tree format"):
            MetricTree.from_dict({"format": "newick"})

    def test_point_tree(self):
        """Test the one-point tree"""
        t = point_tree()
        assert t.spine_length() == 0.0
        assert t.leaves == ()


if __name__ == "__main__":
    pytest.main([__file__])

# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

import itertools

import pytest

from StableRDE.errors import SizeError
from StableRDE.ghdist import gh_dist, gh_dist_bruteforce
from StableRDE.rng import make_rng
from StableRDE.suite import gh_corpus
from StableRDE.trees import path_tree, point_tree, random_tree, segment, star_tree


class TestGromovHausdorff:
    """Exact (marked) Gromov-Hausdorff distance between small trees"""

    def test_segments(self):
        """Test that segments of lengths 3 and 5 are at distance 1"""
        assert gh_dist(segment(3.0), segment(5.0), marked=True).distance == 1.0
        assert gh_dist(segment(3.0), segment(5.0)).distance == 1.0

    def test_point_against_segment(self):
        """Test that a point is at half the diameter from any tree"""
        assert gh_dist(point_tree(), segment(2.0)).distance == 1.0
        assert gh_dist(point_tree(), star_tree([1.0, 1.0, 1.0])).distance == 1.0

    def test_identical_trees(self):
        """Test that a tree is at distance 0 from itself"""
        t = star_tree([0.5, 1.0, 2.0])
        assert gh_dist(t, t, marked=True).distance == 0.0

    def test_marking_can_increase_distance(self):
        """Test that pinning marked points never decreases the distance"""
        a = star_tree([1.0, 1.0, 2.0], marked=2)
        b = star_tree([1.0, 1.0, 2.0], marked=3)
        assert gh_dist(a, b).distance == 0.0
        assert gh_dist(a, b, marked=True).distance == 0.5

    def test_correspondence_covers_both(self):
        """Test that the returned pairs cover every node"""
        a, b = path_tree([1.0, 2.0]), star_tree([1.0, 2.0], marked=2)
        result = gh_dist(a, b, marked=True)
        assert {i for i, _ in result.pairs} == set(range(a.n_nodes))
        assert {j for _, j in result.pairs} == set(range(b.n_nodes))
        assert float(result) == result.distance

    def test_matches_exhaustive_search(self):
        """Test the pair search against superset enumeration on the corpus"""
        corpus = gh_corpus()
        for (a, b), marked in itertools.product(itertools.combinations(corpus, 2), (False, True)):
            assert gh_dist(a, b, marked=marked).distance == pytest.approx(
                gh_dist_bruteforce(a, b, marked=marked), abs=1e-12
            )

    def test_metric_axioms(self):
        """Test symmetry and the triangle inequality on random trees"""
        rng = make_rng(12)
        trees = [random_tree(int(rng.integers(1, 6)), rng) for _ in range(6)]
        d = {(i, j): gh_dist(trees[i], trees[j], marked=True).distance for i in range(6) for j in range(6)}
        for i, j, k in itertools.product(range(6), repeat=3):
            assert d[i, j] == pytest.approx(d[j, i], abs=1e-12)
            assert d[i, k] <= d[i, j] + d[j, k] + 1e-12

    def test_height_lower_bound(self):
        """Test that the distance is at least half the height and spine gaps"""
        rng = make_rng(30)
        for _ in range(20):
            a, b = random_tree(int(rng.integers(1, 6)), rng), random_tree(int(rng.integers(1, 6)), rng)
            d = gh_dist(a, b, marked=True).distance
            assert d >= abs(a.height() - b.height()) / 2 - 1e-12
            assert d >= abs(a.spine_length() - b.spine_length()) / 2 - 1e-12

    def test_size_guard(self):
        """Test that exact search refuses large trees"""
        with pytest.raises(SizeError, match="exact search allows 7"):
            gh_dist(random_tree(8, make_rng(1)), segment(1.0))
        with pytest.raises(SizeError, match="Exhaustive search allows 4"):
            gh_dist_bruteforce(random_tree(5, make_rng(1)), segment(1.0))

    def test_pair_limit(self):
        """Test that the bitmask search refuses more than 62 node pairs"""
        a = path_tree([1.0] * 7)
        with pytest.raises(SizeError, match="62 node pairs, got 64"):
            gh_dist(a, a, max_nodes=8)

    def test_largest_pair_table(self):
        """Test unit paths of 7 and 6 edges at 56 node pairs"""
        a, b = path_tree([1.0] * 7), path_tree([1.0] * 6)
        result = gh_dist(a, b, marked=True, max_nodes=8)
        assert result.distance == pytest.approx(0.5)
        assert {i for i, _ in result.pairs} == set(range(8))
        assert {j for _, j in result.pairs} == set(range(7))

    def test_marked_needs_marks(self):
        """Test that marked distance needs marked points"""
        with pytest.raises(SizeError, match="needs a marked point"):
            gh_dist(path_tree([1.0], marked_end=False), segment(1.0), marked=True)


if __name__ == "__main__":
    pytest.main([__file__])

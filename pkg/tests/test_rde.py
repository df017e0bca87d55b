# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

import json
import math

import numpy as np
import pytest
from scipy.stats import norm

from StableRDE.errors import ConfigError, DomainError, NoRootError, SizeError
from StableRDE.rde import (
    InitLaw,
    XiModel,
    attraction_experiment,
    build_string,
    calibrate_beta,
    fixpoint_check,
    grow_from_string,
    iterate,
    martingale_bound,
    parse_mode,
    second_moment_trajectory,
    spine_batch,
    spine_martingale,
    spine_sum,
    stable_spine_normaliser,
    string_height_profile,
)
from StableRDE.rng import INIT_SALT, derive, make_rng
from StableRDE.trees import segment, write_tree


def _by_label(t):
    return {label: v for v, label in (t.labels or {}).items()}


class TestXiModel:
    """Laws of the scaling sequence"""

    def test_stable(self):
        """Test the stable law and its beta"""
        xi = XiModel.from_spec("stable:1.5")
        assert xi.beta == pytest.approx(1 / 3)
        assert xi.describe() == "stable:1.5"
        assert xi.f(xi.beta) == pytest.approx(1.0, rel=1e-12)

    def test_custom_dirichlet(self, tmp_path):
        """Test that a Dirichlet law solves its own calibration"""
        path = tmp_path / "xi.json"
        path.write_text(json.dumps({"kind": "dirichlet", "params": [1 / 3] * 4}))
        xi = XiModel.from_spec(f"custom:{path}")
        assert xi.beta == pytest.approx(1 / 3, abs=1e-10)
        s = xi.sample(make_rng(4))
        assert math.fsum(s.atoms) == pytest.approx(1.0, abs=1e-12)

    def test_given_beta_is_checked(self):
        """Test that a wrong beta is rejected"""
        with pytest.raises(DomainError, match="calibration residual"):
            XiModel("dirichlet", params=(1 / 3,) * 4, beta_=0.6)

    def test_no_root(self):
        """Test that xi_0 + xi_1 = 1 has no calibrating beta"""
        with pytest.raises(NoRootError):
            XiModel("atoms", vectors=((0.5, 0.5),), probs=(1.0,))

    def test_atom_law(self):
        """Test a two-point law of atom vectors"""
        xi = XiModel("atoms", vectors=((0.5, 0.25, 0.25), (0.25, 0.5, 0.25)), probs=(0.5, 0.5))
        assert xi.f(xi.beta) == pytest.approx(1.0, abs=1e-10)
        x0, x1 = xi.sample_pair(100, make_rng(1))
        assert set(np.round(x0, 2)) <= {0.5, 0.25}
        assert np.allclose(x0 + x1, 0.75)

    def test_invalid_specs(self):
        """Test that malformed laws are configuration errors"""
        with pytest.raises(ConfigError):
            XiModel.from_spec("gauss:1")
        with pytest.raises(ConfigError):
            XiModel.from_spec("stable:abc")
        with pytest.raises(DomainError, match="alpha must lie"):
            XiModel.from_spec("stable:2.5")


class TestCalibration:
    """Monte Carlo calibration of beta"""

    def test_dirichlet(self):
        """Test that bisection recovers beta = 1/3 for Dir(1/3, 1/3, 1/3, 1/3)"""
        xi = XiModel("dirichlet", params=(1 / 3,) * 4)
        assert calibrate_beta(xi, 1e-3, 100_000, make_rng(2)) == pytest.approx(1 / 3, abs=0.01)

    def test_stable_is_exact(self):
        """Test that the stable law needs no sampling"""
        assert calibrate_beta(XiModel.stable(2.0)) == 0.5

    def test_callable_without_root(self):
        """Test that a sampler with xi_0 + xi_1 = 1 has no root"""

        def halves(size, rng):
            return np.full(size, 0.5), np.full(size, 0.5)

        with pytest.raises(NoRootError):
            calibrate_beta(halves, rng=make_rng(1), reps=100)


class TestInitLaw:
    """Laws of the initial trees"""

    def test_specs(self, tmp_path):
        """Test every initial law spec"""
        assert InitLaw.from_spec("segment:2").h() == (2.0, 0.0)
        assert InitLaw.from_spec("exp:3").kind == "exponential"
        lengths = tmp_path / "lengths.txt"
        lengths.write_text("1.0 2.0\n3.0\n")
        law = InitLaw.from_spec(f"file:{lengths}")
        assert law.samples == (1.0, 2.0, 3.0)
        assert law.h()[0] == pytest.approx(2.0)
        tree = tmp_path / "tree.json"
        write_tree(segment(1.5), tree)
        assert InitLaw.from_spec(f"tree:{tree}").sample_tree(make_rng(1)).spine_length() == 1.5

    def test_invalid(self):
        """Test malformed initial laws"""
        with pytest.raises(ConfigError):
            InitLaw.from_spec("segment:x")
        with pytest.raises(ConfigError):
            InitLaw.from_spec("uniform:1")
        with pytest.raises(DomainError, match="must be positive"):
            InitLaw.from_spec("segment:0")


class TestIterate:
    """Iterates of the concatenation map"""

    def setup_method(self):
        self.xi = XiModel.stable(2.0)
        self.init = InitLaw("exponential", 1.0)

    def test_depth_zero(self):
        """Test that depth 0 returns the initial draw"""
        rng = make_rng(3)
        expected = self.init.sample_spine(derive(rng, INIT_SALT))
        assert iterate(self.xi, self.init, 0, "spine", rng) == expected
        assert iterate(self.xi, self.init, 0, "full", rng).spine_length() == pytest.approx(expected)

    def test_depth_one_mean(self):
        """Test that one step preserves the mean spine"""
        rng = make_rng(8)
        s = np.array([iterate(self.xi, self.init, 1, "spine", derive(rng, r)) for r in range(1000)])
        assert abs(s.mean() - 1.0) <= 3 * s.std(ddof=1) / math.sqrt(len(s))

    def test_full_matches_spine(self):
        """Test that the full tree and the spine recursion are coupled"""
        for seed in range(3):
            rng = make_rng(seed)
            full = iterate(self.xi, self.init, 6, "full", rng)
            assert full.spine_length() == pytest.approx(iterate(self.xi, self.init, 6, "spine", rng), rel=1e-9)
            assert sum(full.leaf_mass.values()) == pytest.approx(1.0)

    def test_spine_sum_matches_recursion(self):
        """Test the direct sum over binary words"""
        rng = make_rng(21)
        xi = XiModel.stable(1.5, eps=1e-2)
        assert spine_sum(xi, self.init, 5, rng) == pytest.approx(iterate(xi, self.init, 5, "spine", rng), rel=1e-12)

    @pytest.mark.parametrize("depth,k", [(2, 0), (3, 1), (4, 2)])
    def test_skeleton_is_isometric(self, depth, k):
        """Test that skeleton leaves sit where the full tree puts them"""
        rng = make_rng(100 + depth)
        full = iterate(self.xi, self.init, depth, "full", rng)
        skel = iterate(self.xi, self.init, depth, f"skeleton:{k}", rng)
        in_full = _by_label(full)
        in_skel = _by_label(skel)
        assert len(in_skel) == 3**k
        labels = sorted(in_skel)
        for a in labels:
            assert skel.dist(skel.root, in_skel[a]) == pytest.approx(full.dist(full.root, in_full[a]), abs=1e-12)
            for b in labels:
                assert skel.dist(in_skel[a], in_skel[b]) == pytest.approx(full.dist(in_full[a], in_full[b]), abs=1e-12)
        assert skel.spine_length() == pytest.approx(full.spine_length(), abs=1e-12)

    def test_node_limit(self):
        """Test that oversized iterates are refused"""
        with pytest.raises(SizeError, match="exceeds 100 nodes"):
            iterate(self.xi, self.init, 10, "full", make_rng(1), node_limit=100)

    def test_modes(self):
        """Test mode parsing"""
        assert parse_mode("skeleton:3") == ("skeleton", 3)
        assert parse_mode("full") == ("full", 0)
        with pytest.raises(DomainError, match="Unknown iteration mode"):
            parse_mode("leaves")
        with pytest.raises(DomainError, match="exceeds iteration depth"):
            iterate(self.xi, self.init, 1, "skeleton:2", make_rng(1))


class TestMartingale:
    """The spine martingale L_n"""

    def test_bound_for_brownian(self):
        """Test that the L^2 bound at alpha = 2 is 4 / pi"""
        xi = XiModel.stable(2.0)
        assert martingale_bound(xi) == pytest.approx(4 / math.pi, rel=1e-12)
        traj = second_moment_trajectory(xi, 40)
        assert traj[0] == 1.0
        assert np.all(np.diff(traj) > 0)
        assert traj[-1] == pytest.approx(4 / math.pi, rel=1e-6)

    def test_batch_shapes(self):
        """Test that the batch is blocked without changing shapes"""
        batch = spine_batch(XiModel.stable(2.0), 4, 50, make_rng(1), init=InitLaw("constant", 1.0), threads=2)
        assert batch.L.shape == (50, 5)
        assert np.all(batch.L[:, 0] == 1.0)
        assert np.allclose(batch.L, batch.spine)
        assert np.all(batch.running_sup >= batch.spine)

    def test_report(self):
        """Test the mean-one and variance checks"""
        report = spine_martingale(XiModel.stable(2.0), 8, 4000, make_rng(31))
        assert report.passed, report.failures()
        assert [v.label for v in report.verdicts] == ["E[L_0]", "E[L_8]", "Var(L_8)"]
        assert len(report.notes["mean_trajectory"]) == 9

    def test_variance_grows(self):
        """Test that Var(L_n) never decreases with n"""
        report = spine_martingale(XiModel.stable(2.0), 8, 4000, make_rng(31))
        var = np.array(report.notes["var_trajectory"])
        assert var[0] == 0.0
        assert np.all(np.diff(var) > 0)
        assert np.all(np.diff(report.notes["exact_var_trajectory"]) > 0)
        assert var[-1] <= report.notes["var_bound"] + 0.05

    def test_depth_limit(self):
        """Test that deep sweeps are refused"""
        with pytest.raises(DomainError, match="Martingale depth"):
            spine_martingale(XiModel.stable(2.0), 26, 10, make_rng(1))


class TestAttraction:
    """Convergence of iterates towards the fixpoint"""

    def test_depth_zero_is_exact(self):
        """Test that depth 0 reproduces h exactly"""
        report = attraction_experiment(XiModel.stable(2.0), InitLaw("constant", 1.0), 0, 100, make_rng(1))
        assert report.passed
        assert report.verdicts[0].rule == "exact"

    def test_mean_is_preserved(self):
        """Test that E[spine] stays at h for an exponential start"""
        report = attraction_experiment(XiModel.stable(1.5), InitLaw("exponential", 2.0), 6, 4000, make_rng(5))
        mean = next(v for v in report.verdicts if v.label == "E[spine]")
        assert mean.passed
        assert mean.target == 2.0
        assert len(report.notes["sup_moments"]) == 4

    def test_mean_at_every_depth(self):
        """Test that the mean spine stays at h at every depth on the way"""
        report = attraction_experiment(XiModel.stable(1.5), InitLaw("exponential", 2.0), 6, 4000, make_rng(5))
        every = next(v for v in report.verdicts if v.label.startswith("max_n"))
        assert every.passed
        assert every.target == pytest.approx(norm.isf(0.00135 / 6))
        assert len(report.notes["spine_mean_by_depth"]) == 7

    def test_ks_shrinks_with_depth(self):
        """Test that iterates two steps apart get closer in law"""
        report = attraction_experiment(XiModel.stable(2.0), InitLaw("constant", 1.0), 8, 4000, make_rng(12))
        ks = report.notes["ks_by_depth"]
        assert len(ks) == 7
        assert ks[-1] < ks[0] / 3
        assert np.mean(ks[:3]) > np.mean(ks[-3:])

    def test_normaliser(self):
        """Test alpha Gamma(beta) / Gamma(2 beta) at alpha = 2"""
        assert stable_spine_normaliser(2.0) == pytest.approx(2 * math.sqrt(math.pi), rel=1e-12)

    def test_fixpoint(self):
        """Test that one more step leaves a deep iterate's law unchanged"""
        report = fixpoint_check(2.0, 8, 2000, make_rng(9))
        assert report.passed, report.failures()

    def test_fixpoint_feed_is_independent(self, monkeypatch):
        """Test that the one-step output is fed from a batch other than its input"""
        fed = []
        original = InitLaw.from_samples

        def capture(cls, samples):
            fed.append(np.array(samples, dtype=float))
            return original(samples)

        monkeypatch.setattr(InitLaw, "from_samples", classmethod(capture))
        fixpoint_check(2.0, 6, 500, make_rng(3))
        y = spine_batch(XiModel.stable(2.0), 6, 500, derive(make_rng(3), 0), init=InitLaw("constant", 1.0)).spine[:, 6]
        assert len(fed) == 1
        assert len(fed[0]) == 500
        assert not np.isin(fed[0], y).any()


class TestStrings:
    """Generalised strings and bead replacement"""

    def setup_method(self):
        self.xi = XiModel.stable(2.0)
        self.init = InitLaw("constant", 1.0)

    def test_build_string(self):
        """Test that string atoms form a probability on the interval"""
        s = build_string(self.xi, self.init, 4, make_rng(2))
        assert math.fsum(s.masses) == pytest.approx(1.0, abs=1e-12)
        assert max(s.locations) <= s.length * (1 + 1e-12)
        assert s.to_dict()["length"] == s.length

    def test_depth_limit(self):
        """Test that deep strings are refused"""
        with pytest.raises(DomainError, match="String depth"):
            build_string(self.xi, self.init, 21, make_rng(1))

    def test_levels_zero_is_a_path(self):
        """Test that no replacement leaves the string itself"""
        rng = make_rng(6)

        def sampler(g):
            return build_string(self.xi, self.init, 2, g)

        t = grow_from_string(sampler, 0.5, 0, rng)
        for v, kids in enumerate(t.children):
            assert sum(1 for c in kids if t.edge_len[c] > 0) <= 1
            assert all(not t.children[c] for c in kids if t.edge_len[c] == 0)
        assert t.spine_length() == pytest.approx(sampler(derive(rng)).length)

    def test_depth_increment_has_mean_zero(self):
        """Test that one more split level leaves the mean length unchanged"""
        rng = make_rng(17)
        diff = np.array(
            [
                build_string(self.xi, self.init, 4, derive(rng, r)).length
                - build_string(self.xi, self.init, 3, derive(rng, r)).length
                for r in range(2000)
            ]
        )
        assert abs(diff.mean()) <= 3 * diff.std(ddof=1) / math.sqrt(len(diff))

    @pytest.mark.parametrize("levels", [1, 2])
    def test_masses_sit_on_leaves(self, levels):
        """Test that every node carrying mass is a leaf"""

        def sampler(g):
            return build_string(self.xi, self.init, 1, g)

        t = grow_from_string(sampler, 0.5, levels, make_rng(7))
        weighted = [v for v, q in t.leaf_mass.items() if q > 0]
        assert weighted
        for v in weighted:
            assert t.children[v] == ()
            assert t.degree(v) == 1

    def test_replacement_keeps_mass(self):
        """Test that grafted strings share their bead's mass"""

        def sampler(g):
            return build_string(self.xi, self.init, 1, g)

        t = grow_from_string(sampler, 0.5, 2, make_rng(7))
        assert sum(t.leaf_mass.values()) == pytest.approx(1.0, abs=1e-9)
        assert t.height() >= grow_from_string(sampler, 0.5, 1, make_rng(7)).height()

    def test_height_profile(self):
        """Test that heights never decrease with the level"""
        report = string_height_profile(self.xi, self.init, 2, 2, 3, make_rng(4))
        assert report.passed
        assert len(report.notes["mean_height"]) == 3


if __name__ == "__main__":
    pytest.main([__file__])

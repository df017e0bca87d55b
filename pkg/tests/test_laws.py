# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

import math

import numpy as np
import pytest

from StableRDE.errors import DomainError
from StableRDE.laws import (
    CrpState,
    UrnState,
    beta_moment,
    crp_expected_tables,
    crp_run,
    crp_seating_probs,
    crp_step,
    crp_table_counts,
    dirichlet_batch,
    dirichlet_mixed_moment,
    dirichlet_sample,
    gem_sample,
    ml_mean,
    ml_moment,
    pd_for_stable,
    urn_limit_params,
    urn_probs,
    urn_run,
    urn_step,
)
from StableRDE.rng import make_rng


class TestDirichlet:
    """Dirichlet sampling and exact moments"""

    def setup_method(self):
        self.rng = make_rng(2024)

    def test_rows_are_probability_vectors(self):
        """Test that every draw lies on the simplex"""
        y = dirichlet_batch([0.5, 0.5, 0.5], 1000, self.rng)
        assert y.shape == (1000, 3)
        assert np.all(y >= 0)
        assert np.allclose(y.sum(axis=1), 1.0, atol=1e-12)

    def test_small_parameters_do_not_underflow(self):
        """Test that tiny shapes still give finite vectors"""
        y = dirichlet_batch([1e-3, 1e-3, 1e-3], 500, self.rng)
        assert np.all(np.isfinite(y))
        assert np.allclose(y.sum(axis=1), 1.0, atol=1e-12)

    def test_component_means(self):
        """Test that sample means match params / sum within 3 sigma"""
        params = np.array([1.0, 2.0, 3.0])
        y = dirichlet_batch(params, 20_000, self.rng)
        se = y.std(axis=0, ddof=1) / math.sqrt(len(y))
        assert np.all(np.abs(y.mean(axis=0) - params / params.sum()) <= 3 * se)

    def test_single_sample(self):
        """Test the one-draw wrapper"""
        assert dirichlet_sample([1.0, 1.0], self.rng).shape == (2,)

    def test_invalid_parameters(self):
        """Test that parameters must be positive"""
        with pytest.raises(DomainError, match="must be positive"):
            dirichlet_batch([1.0, 0.0], 1, self.rng)

    def test_beta_moment(self):
        """Test the Beta(a, 1) identity E[X^s] = a / (a + s)"""
        assert beta_moment(1 / 3, 1.0, 1 / 3) == pytest.approx(0.5, rel=1e-12)
        assert beta_moment(2.0, 3.0, 1.0) == pytest.approx(0.4, rel=1e-12)

    def test_mixed_moment(self):
        """Test that a single power reduces to the marginal Beta moment"""
        share = 1 / 3
        params = (share, share, share, 1 - 2 * share)
        assert dirichlet_mixed_moment(params, (share,)) == pytest.approx(0.5, rel=1e-12)
        assert dirichlet_mixed_moment((1.0, 1.0), (1.0, 1.0)) == pytest.approx(1 / 6, rel=1e-12)


class TestUrn:
    """Generalised Polya urns"""

    def setup_method(self):
        self.rng = make_rng(7)

    def test_step(self):
        """Test that a draw reinforces the drawn colour by t"""
        s = UrnState((1.0, 1.0), 2.0)
        assert np.allclose(urn_probs(s), [0.5, 0.5])
        s2, color = urn_step(s, self.rng)
        assert s2.n == 1
        assert s2.weights[color] == 3.0

    def test_run_counts(self):
        """Test that every urn makes n draws"""
        counts = urn_run((0.5, 0.5, 0.5, 0.5), 1.5, 200, 50, self.rng)
        assert counts.shape == (50, 4)
        assert np.all(counts.sum(axis=1) == 200)

    def test_limit_params(self):
        """Test the Dirichlet limit parameters gamma / t"""
        assert np.allclose(urn_limit_params((0.5, 0.5, 0.5, 0.5), 1.5), [1 / 3] * 4)

    def test_invalid_state(self):
        """Test that weights and step must be positive"""
        with pytest.raises(DomainError, match="Urn weights"):
            UrnState((1.0, -1.0), 1.0)
        with pytest.raises(DomainError, match="Urn step"):
            UrnState((1.0,), 0.0)


class TestCrp:
    """Two-parameter Chinese restaurant process"""

    def setup_method(self):
        self.rng = make_rng(99)

    def test_seating_probs(self):
        """Test that seating probabilities sum to one"""
        s = CrpState(0.5, 0.5, (3, 1))
        p = crp_seating_probs(s)
        assert p.sum() == pytest.approx(1.0)
        assert p[-1] == pytest.approx((0.5 + 2 * 0.5) / 4.5)

    def test_step_and_run(self):
        """Test that every step seats one customer"""
        s = crp_step(CrpState(0.5, 1.0), self.rng)
        assert s.n == 2
        s = crp_run(0.5, 1.0, 100, self.rng)
        assert s.n == 100
        assert sum(s.table_sizes) == 100

    def test_table_count_mean(self):
        """Test that the mean table count matches the exact mean recursion"""
        k = crp_table_counts(0.5, 0.5, 200, 4000, self.rng)
        se = k.std(ddof=1) / math.sqrt(len(k))
        assert abs(k.mean() - crp_expected_tables(0.5, 0.5, 200)) <= 3 * se

    def test_invalid_theta(self):
        """Test that theta must exceed -beta"""
        with pytest.raises(DomainError, match="theta must exceed"):
            CrpState(0.5, -0.6)


class TestSticks:
    """GEM and Poisson-Dirichlet sequences"""

    def setup_method(self):
        self.rng = make_rng(1)

    def test_gem_is_normalised(self):
        """Test that truncated sticks are renormalised and sorted"""
        s = gem_sample(0.5, 0.5, 1e-4, self.rng)
        assert math.fsum(s.weights) == pytest.approx(1.0, abs=1e-12)
        assert list(s.weights) == sorted(s.weights, reverse=True)
        assert s.residual < 1e-4

    def test_max_atoms(self):
        """Test that truncation also stops at max_atoms"""
        s = gem_sample(2 / 3, 1 / 3, 1e-12, self.rng, max_atoms=50)
        assert len(s) <= 50

    def test_pd_for_brownian_is_empty(self):
        """Test that beta = 1/2 leaves no mass for the sequence"""
        assert len(pd_for_stable(0.5, 1e-6, self.rng)) == 0


class TestMittagLeffler:
    """Generalised Mittag-Leffler moments"""

    def test_known_values(self):
        """Test ML(1/2, 1/2) moments"""
        assert ml_mean(0.5, 0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-12)
        assert ml_moment(0.5, 0.5, 2) == pytest.approx(4.0, rel=1e-12)
        assert ml_moment(1 / 3, 0.2, 0) == pytest.approx(1.0, rel=1e-12)

    def test_pole(self):
        """Test that a gamma pole is reported"""
        with pytest.raises(DomainError, match="pole"):
            ml_moment(0.5, -0.4, -3)


if __name__ == "__main__":
    pytest.main([__file__])

# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

"""Samplers and exact moments: Dirichlet, Beta, Polya urns, the two-parameter
Chinese restaurant process, GEM/Poisson-Dirichlet sticks and generalised
Mittag-Leffler moments.

Every sampler takes an explicit ``numpy.random.Generator`` and logs nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import DomainError


def _check_params(params) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    if params.ndim != 1 or len(params) == 0:
        raise DomainError(f"Dirichlet parameters must be a nonempty vector, got shape {params.shape}")
    if not np.all(params > 0) or not np.all(np.isfinite(params)):
        raise DomainError(f"Dirichlet parameters must be positive, got {params.tolist()}")
    return params


def dirichlet_batch(params: Sequence[float], size: int, rng: np.random.Generator) -> np.ndarray:
    """
    ``size`` draws from Dir(params) as rows.

    Gamma variates are formed in log space, log G = log G' + log(U) / a with
    G' ~ Gamma(a + 1), so that small shapes do not underflow before the
    normalisation.
    """
    params = _check_params(params)
    log_g = np.log(rng.standard_gamma(params + 1.0, size=(size, len(params))))
    log_g += np.log(rng.random((size, len(params)))) / params
    return np.exp(log_g - logsumexp(log_g, axis=1, keepdims=True))


def dirichlet_sample(params: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    return dirichlet_batch(params, 1, rng)[0]


def beta_moment(a: float, b: float, s: float) -> float:
    """E[X^s] for X ~ Beta(a, b)."""
    if not (a > 0 and b > 0 and a + s > 0):
        raise DomainError(f"Beta moment undefined for a={a}, b={b}, s={s}")
    return float(np.exp(gammaln(a + s) + gammaln(a + b) - gammaln(a) - gammaln(a + b + s)))


def dirichlet_mixed_moment(params: Sequence[float], powers: Sequence[float]) -> float:
    """E[prod_i Y_i^{s_i}] for Y ~ Dir(params); missing powers are 0."""
    params = _check_params(params)
    s = np.zeros(len(params))
    s[: len(powers)] = powers
    if not np.all(params + s > 0):
        raise DomainError(f"Mixed moment undefined for powers {list(powers)}")
    total = params.sum()
    log_m = gammaln(total) - gammaln(total + s.sum()) + np.sum(gammaln(params + s) - gammaln(params))
    return float(np.exp(log_m))


# --- generalised Polya urn --------------------------------------------------


@dataclass(frozen=True)
class UrnState:
    """Urn with initial weights ``gamma`` and step ``t``; ``draws[j]`` is D_j."""

    gamma: Tuple[float, ...]
    t: float
    draws: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if not self.draws:
            object.__setattr__(self, "draws", (0,) * len(self.gamma))
        object.__setattr__(self, "draws", tuple(int(d) for d in self.draws))
        if not self.gamma or min(self.gamma) <= 0:
            raise DomainError(f"Urn weights must be positive, got {list(self.gamma)}")
        if not self.t > 0:
            raise DomainError(f"Urn step must be positive, got {self.t}")
        if len(self.draws) != len(self.gamma) or min(self.draws) < 0:
            raise DomainError(f"Invalid draw counts {list(self.draws)}")

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.gamma) + self.t * np.asarray(self.draws, dtype=float)

    @property
    def n(self) -> int:
        return sum(self.draws)

    def proportions(self) -> np.ndarray:
        """Empirical draw frequencies P_j."""
        n = self.n
        return np.asarray(self.draws, dtype=float) / n if n else np.zeros(len(self.draws))


def urn_probs(s: UrnState) -> np.ndarray:
    w = s.weights
    return w / w.sum()


def urn_step(s: UrnState, rng: np.random.Generator) -> Tuple[UrnState, int]:
    w = s.weights
    color = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
    color = min(color, len(w) - 1)
    draws = list(s.draws)
    draws[color] += 1
    return UrnState(s.gamma, s.t, tuple(draws)), color


def urn_run(gamma: Sequence[float], t: float, n: int, reps: int, rng: np.random.Generator) -> np.ndarray:
    """Draw counts after ``n`` steps for ``reps`` independent urns, shape (reps, K)."""
    UrnState(tuple(gamma), t)
    gamma = np.asarray(gamma, dtype=float)
    counts = np.zeros((reps, len(gamma)), dtype=np.int64)
    rows = np.arange(reps)
    total = gamma.sum()
    for step in range(n):
        cum = np.cumsum(gamma + t * counts, axis=1)
        u = rng.random(reps) * (total + t * step)
        color = np.minimum((u[:, None] >= cum).sum(axis=1), len(gamma) - 1)
        counts[rows, color] += 1
    return counts


def urn_limit_params(gamma: Sequence[float], t: float) -> np.ndarray:
    """Parameters of the Dirichlet limit of the draw frequencies, gamma / t."""
    if not t > 0:
        raise DomainError(f"Urn step must be positive, got {t}")
    return _check_params(gamma) / t


# --- Chinese restaurant process ---------------------------------------------


def _check_crp(beta: float, theta: float):
    if not 0 <= beta <= 1:
        raise DomainError(f"CRP beta must lie in [0, 1], got {beta}")
    if not theta > -beta:
        raise DomainError(f"CRP theta must exceed -beta, got theta={theta}, beta={beta}")


@dataclass(frozen=True)
class CrpState:
    beta: float
    theta: float
    table_sizes: Tuple[int, ...] = (1,)
    n: int = field(default=-1)

    def __post_init__(self):
        _check_crp(self.beta, self.theta)
        object.__setattr__(self, "table_sizes", tuple(int(s) for s in self.table_sizes))
        total = sum(self.table_sizes)
        if self.n == -1:
            object.__setattr__(self, "n", total)
        if self.n != total:
            raise DomainError(f"Table sizes sum to {total}, expected n={self.n}")
        if self.table_sizes and min(self.table_sizes) < 1:
            raise DomainError("Every table needs at least one customer")

    @property
    def n_tables(self) -> int:
        return len(self.table_sizes)


def crp_seating_probs(s: CrpState) -> np.ndarray:
    """Probabilities of joining each table, the last entry opening a new one."""
    if s.n < 1:
        raise DomainError("Seating needs at least one seated customer")
    sizes = np.asarray(s.table_sizes, dtype=float)
    denom = s.n + s.theta
    return np.append((sizes - s.beta) / denom, (s.theta + s.n_tables * s.beta) / denom)


def crp_step(s: CrpState, rng: np.random.Generator) -> CrpState:
    probs = crp_seating_probs(s)
    j = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
    j = min(j, len(probs) - 1)
    sizes = list(s.table_sizes)
    if j == len(sizes):
        sizes.append(1)
    else:
        sizes[j] += 1
    return CrpState(s.beta, s.theta, tuple(sizes), s.n + 1)


def crp_run(beta: float, theta: float, n: int, rng: np.random.Generator) -> CrpState:
    """Seat ``n`` customers, the first at table one."""
    if n < 1:
        raise DomainError(f"Need at least one customer, got {n}")
    s = CrpState(beta, theta)
    for _ in range(n - 1):
        s = crp_step(s, rng)
    return s


def crp_table_counts(beta: float, theta: float, n: int, reps: int, rng: np.random.Generator) -> np.ndarray:
    """
    K_n for ``reps`` independent restaurants. The table count is itself a
    Markov chain, so table sizes are never materialised.
    """
    _check_crp(beta, theta)
    if n < 1:
        raise DomainError(f"Need at least one customer, got {n}")
    k = np.ones(reps)
    for m in range(1, n):
        k += rng.random(reps) * (m + theta) < theta + beta * k
    return k.astype(np.int64)


def crp_expected_tables(beta: float, theta: float, n: int) -> float:
    """Exact E[K_n] from the linear mean recursion."""
    _check_crp(beta, theta)
    mean = 1.0
    for m in range(1, n):
        mean += (theta + beta * mean) / (m + theta)
    return mean


# --- sticks -------------------------------------------------------------------


@dataclass(frozen=True)
class StickSeq:
    """
    Stick-breaking weights. ``weights`` is the decreasing (Poisson-Dirichlet)
    rearrangement of ``gem``; both are renormalised to sum to one and
    ``residual`` is the tail mass removed by truncation.
    """

    weights: Tuple[float, ...]
    gem: Tuple[float, ...] = ()
    residual: float = 0.0

    def __len__(self):
        return len(self.weights)

    @classmethod
    def empty(cls) -> "StickSeq":
        return cls((), (), 0.0)


def gem_sample(
    beta: float,
    theta: float,
    eps: float,
    rng: np.random.Generator,
    max_atoms: int = 100_000,
) -> StickSeq:
    """
    GEM(beta, theta) sticks, W_j ~ Beta(1 - beta, theta + j * beta), broken
    until the unbroken remainder drops below ``eps`` or ``max_atoms`` sticks
    exist.
    """
    if not 0 < beta < 1:
        raise DomainError(f"GEM beta must lie in (0, 1), got {beta}")
    if not theta > -beta:
        raise DomainError(f"GEM theta must exceed -beta, got {theta}")
    if not 0 < eps < 1:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    atoms = []
    remaining = 1.0
    j = 1
    chunk = 64
    while remaining >= eps and j <= max_atoms:
        idx = np.arange(j, min(j + chunk, max_atoms + 1))
        w = rng.beta(1.0 - beta, theta + idx * beta)
        left = remaining * np.cumprod(1.0 - w)
        before = np.concatenate(([remaining], left[:-1]))
        stop = np.flatnonzero(left < eps)
        end = stop[0] + 1 if len(stop) else len(idx)
        atoms.append(before[:end] * w[:end])
        remaining = float(left[end - 1])
        j += end
        chunk *= 2
    gem = np.concatenate(atoms)
    gem = gem[gem > 0]
    if len(gem) == 0:
        gem = np.ones(1)
    gem = gem / gem.sum()
    pd = np.sort(gem)[::-1]
    return StickSeq(tuple(pd.tolist()), tuple(gem.tolist()), remaining)


def pd_for_stable(beta: float, eps: float, rng: np.random.Generator, max_atoms: int = 100_000) -> StickSeq:
    """PD(1 - beta, 1 - 2 beta); empty when beta = 1/2, where no mass is left for it."""
    if not 0 < beta <= 0.5:
        raise DomainError(f"beta must lie in (0, 1/2], got {beta}")
    if beta == 0.5:
        return StickSeq.empty()
    return gem_sample(1.0 - beta, 1.0 - 2.0 * beta, eps, rng, max_atoms)


# --- Mittag-Leffler -------------------------------------------------------------


def ml_moment(beta: float, theta: float, p: float) -> float:
    """
    p-th moment of the generalised Mittag-Leffler law ML(beta, theta),
    Gamma(theta+1) Gamma(theta/beta+1+p) / (Gamma(theta/beta+1) Gamma(theta+beta p+1)).
    """
    if not 0 < beta <= 1:
        raise DomainError(f"ML beta must lie in (0, 1], got {beta}")
    if not theta > -beta:
        raise DomainError(f"ML theta must exceed -beta, got {theta}")
    args = (theta + 1.0, theta / beta + 1.0 + p, theta / beta + 1.0, theta + beta * p + 1.0)
    if min(args) <= 0:
        raise DomainError(f"ML moment of order {p} hits a pole of the gamma function")
    log_m = gammaln(args[0]) + gammaln(args[1]) - gammaln(args[2]) - gammaln(args[3])
    return float(np.exp(log_m))


def ml_mean(beta: float, theta: float) -> float:
    return ml_moment(beta, theta, 1.0)

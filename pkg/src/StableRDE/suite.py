# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

"""Acceptance suite.

Each case draws from its own stream, seeded with the master seed plus the
CRC-32 of the case name, so a case gives the same report whatever else
runs. ``quick`` uses desk sizes; ``full`` uses the acceptance sizes.

The acceptance suite runs with ``retry_once`` (the ``verify`` command does
so unless given ``--no-retry``): a failing case is rerun once on a fresh
stream, and the whole suite then raises a false alarm with probability
below 0.5%. The suite makes 22 Monte Carlo comparisons: four at
the 1% level, eight at 3 sigma, one one-sided 3 sigma bound, one
Bonferroni-bounded maximum over depths, and relative tolerances several
standard errors wide. Everything else is exact. Without the retry a single
pass fails with probability about 6%, which is above the 5% target.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
import zlib
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from .concat import ConcatInput, ScalingSeq, concat_distance, concat_with_map
from .errors import DomainError
from .ghdist import gh_dist, gh_dist_bruteforce
from .laws import crp_table_counts, dirichlet_batch, dirichlet_sample, ml_moment, urn_limit_params, urn_run
from .marchal import (
    enumerate_shapes,
    grow,
    shape_key,
    spine_scaling_stat,
    weight_invariant_check,
)
from .rde import (
    InitLaw,
    XiModel,
    attraction_experiment,
    calibrate_beta,
    fixpoint_check,
    martingale_bound,
    second_moment_trajectory,
    spine_martingale,
)
from .rng import SEED_MAX, check_seed, derive, make_rng, map_replicates
from .trees import MetricTree, path_tree, point_tree, random_tree, rescale, segment, star_tree
from .verify import StatReport, compare, ks_test, mean_stderr, multinomial_gof

logger = logging.getLogger(__name__)

SUITES = ("quick", "full")


def _absorb(report: StatReport, sub: StatReport, prefix: str):
    for tgt, ver in zip(sub.targets, sub.verdicts):
        report.record(replace(ver, label=prefix + ver.label), tgt.provenance)
    report.notes.update({prefix + k: v for k, v in sub.notes.items()})


# --- cases -------------------------------------------------------------------------


def shape_law_case(rng, threads, ns=(3, 4), alphas=(1.2, 1.5, 2.0)) -> StatReport:
    report = StatReport("shape_law")
    worst = 0.0
    count = 0
    for n, alpha in itertools.product(ns, alphas):
        shapes = enumerate_shapes(alpha, n)
        total = math.fsum(p for _, p in shapes)
        report.notes[f"shapes_n{n}_a{alpha:g}"] = len(shapes)
        worst = max(worst, abs(total - 1.0))
        count += len(shapes)
    report.record(compare("max|sum p - 1|", worst, 0.0, count, 1e-9, "le"), "PAPER")
    return report


def growth_shapes_case(rng, threads, alpha=1.5, n=3, reps=10_000) -> StatReport:
    report = StatReport("growth_shapes")
    shapes = enumerate_shapes(alpha, n)
    keys = {shape_key(t): i for i, (t, _) in enumerate(shapes)}
    probs = np.array([p for _, p in shapes])
    counts = np.zeros(len(shapes))
    stars = np.zeros(reps)
    for r in range(reps):
        t = grow(alpha, n, rng, check=False)
        counts[keys[shape_key(t)]] += 1
        stars[r] = t.n_vertices == n + 2
    report.record(multinomial_gof(counts, probs, "chi2(shapes)"), "DERIVED")
    value, stderr = mean_stderr(stars)
    report.record(compare("P(star)", value, stderr, reps, (2 - alpha) / (2 * alpha - 1), "3sigma"), "DERIVED")
    return report


def weight_case(rng, threads, alphas=(1.2, 1.5, 2.0), n=1000, reps=1000) -> StatReport:
    report = weight_invariant_check(alphas, n, reps, rng)
    report.name = "weight_invariant"
    return report


def urn_case(rng, threads, alpha=1.5, n=10_000, reps=1000) -> StatReport:
    report = StatReport("urn_limit")
    gamma = (alpha - 1,) * 3 + (2 - alpha,)
    props = urn_run(gamma, alpha, n, reps, derive(rng, 0)) / n
    params = urn_limit_params(gamma, alpha)
    for i, a in enumerate(params):
        value, stderr = mean_stderr(props[:, i])
        report.record(compare(f"E[P{i}]", value, stderr, reps, a / params.sum(), "3sigma"), "PAPER")
    direct = dirichlet_batch(params, reps, derive(rng, 1))
    report.record(ks_test(props[:, 0], direct[:, 0], "KS(P0,Dir)"), "PAPER")
    return report


def crp_case(rng, threads, beta=0.5, theta=0.5, n=100_000, reps=400) -> StatReport:
    report = StatReport("crp_tables")
    k = crp_table_counts(beta, theta, n, reps, rng) / n**beta
    value, stderr = mean_stderr(k)
    report.record(compare("E[K_n/n^beta]", value, stderr, reps, ml_moment(beta, theta, 1.0), "rel:0.05"), "DERIVED")
    return report


def marchal_spine_case(rng, threads, alphas=(1.5, 2.0), n=10_000, reps=1000) -> StatReport:
    report = StatReport("marchal_spine")
    for i, alpha in enumerate(alphas):
        _absorb(report, spine_scaling_stat(alpha, n, reps, derive(rng, i)), f"a{alpha:g}:")
    return report


def martingale_case(rng, threads, alpha=2.0, depth=10, reps=10_000, horizon=20) -> StatReport:
    xi = XiModel.stable(alpha)
    report = spine_martingale(xi, depth, reps, rng, threads=threads)
    report.name = "martingale"
    exact = second_moment_trajectory(xi, horizon) - 1.0
    bound = martingale_bound(xi) - 1.0
    report.record(compare(f"max Var(L_n), n<={horizon}", float(exact.max()), 0.0, horizon + 1, bound, "le"), "DERIVED")
    return report


def calibration_case(rng, threads, share=1.0 / 3.0, reps=100_000) -> StatReport:
    report = StatReport("calibration")
    xi = XiModel("dirichlet", params=(share, share, share, 1.0 - 2.0 * share))
    beta = calibrate_beta(xi, tol=1e-3, reps=reps, rng=rng)
    report.record(compare("beta", beta, 0.0, reps, share, "rel:0.03"), "DERIVED")
    report.notes["exact_root"] = xi.beta
    return report


def fixpoint_case(rng, threads, alpha=1.5, depth=11, reps=10_000) -> StatReport:
    report = fixpoint_check(alpha, depth, reps, rng, threads=threads)
    report.name = "fixpoint"
    return report


def attraction_case(rng, threads, alpha=2.0, depth=12, reps=10_000) -> StatReport:
    report = attraction_experiment(XiModel.stable(alpha), InitLaw("constant", 1.0), depth, reps, rng, threads=threads)
    report.name = "attraction"
    return report


def gh_corpus() -> List[MetricTree]:
    """Marked trees of at most four nodes."""
    return [
        point_tree(),
        segment(1.0),
        segment(3.0),
        segment(5.0),
        path_tree([1.0, 2.0]),
        path_tree([2.0, 1.0]),
        path_tree([1.0, 1.0, 1.0]),
        star_tree([1.0, 1.0, 1.0], marked=2),
        star_tree([0.5, 1.0, 2.0], marked=1),
        star_tree([1.0, 2.0], marked=2),
    ]


def gh_case(rng, threads) -> StatReport:
    report = StatReport("gh_oracle")
    corpus = gh_corpus()
    mismatch = 0.0
    asym = 0.0
    triangle = 0.0
    table: Dict[bool, np.ndarray] = {}
    for marked in (False, True):
        d = np.zeros((len(corpus), len(corpus)))
        for i, j in itertools.product(range(len(corpus)), repeat=2):
            d[i, j] = gh_dist(corpus[i], corpus[j], marked=marked).distance
            mismatch = max(mismatch, abs(d[i, j] - gh_dist_bruteforce(corpus[i], corpus[j], marked=marked)))
        asym = max(asym, float(np.abs(d - d.T).max()))
        excess = d[:, None, :] - d[:, :, None] - d[None, :, :]
        triangle = max(triangle, float(excess.max()))
        table[marked] = d
    pairs = 2 * len(corpus) ** 2
    report.record(compare("max|search - exhaustive|", mismatch, 0.0, pairs, 0.0, "exact"), "DERIVED")
    report.record(compare("max|d(a,b) - d(b,a)|", asym, 0.0, pairs, 0.0, "exact"), "TRIVIAL")
    report.record(compare("max triangle excess", triangle, 0.0, pairs, 1e-12, "le"), "TRIVIAL")
    report.record(compare("d(seg 3, seg 5)", table[True][2, 3], 0.0, 1, 1.0, "exact"), "DERIVED")
    return report


def random_concat_input(rng: np.random.Generator, max_extra: int = 2, max_nodes: int = 4) -> ConcatInput:
    k = int(rng.integers(max_extra + 1))
    y = dirichlet_sample(np.ones(3 + k), rng)
    xi = ScalingSeq.from_atoms(list(y[:3]) + sorted(y[3:], reverse=True))
    trees = tuple(random_tree(int(rng.integers(1, max_nodes + 1)), rng) for _ in xi.atoms)
    return ConcatInput(xi, trees, float(rng.uniform(0.1, 1.0)))


def concat_case(rng, threads, reps=1000) -> StatReport:
    report = StatReport("concat_algebra")
    formula_err = 0.0
    mass_err = 0.0
    scale_err = 0.0
    for r in range(reps):
        inp = random_concat_input(derive(rng, r))
        out, maps = concat_with_map(inp)
        parts = [(i, u) for i, mp in enumerate(maps) for u in mp]
        ids = [maps[i][u] for i, u in parts]
        got = out.distance_matrix(ids)
        for (a, (i, u)), (b, (j, v)) in itertools.product(enumerate(parts), repeat=2):
            formula_err = max(formula_err, abs(got[a, b] - concat_distance(inp, i, u, j, v)))
        mass_err = max(mass_err, abs(math.fsum(out.leaf_mass.values()) - 1.0))
        c = float(derive(rng, r, 1).uniform(0.5, 2.0))
        scaled = ConcatInput(inp.xi, tuple(rescale(t, c ** (1.0 / inp.beta), inp.beta) for t in inp.trees), inp.beta)
        full = out.distance_matrix()
        scale_err = max(scale_err, float(np.abs(concat_with_map(scaled)[0].distance_matrix() - c * full).max() / max(1.0, c * full.max())))
    report.record(compare("max|d - formula|", formula_err, 0.0, reps, 1e-9, "le"), "PAPER")
    report.record(compare("max|mass - 1|", mass_err, 0.0, reps, 1e-12, "le"), "TRIVIAL")
    report.record(compare("max scaling error", scale_err, 0.0, reps, 1e-12, "le"), "DERIVED")
    return report


@dataclass(frozen=True)
class Case:
    name: str
    run: Callable[..., StatReport]
    quick: Dict[str, Any] = field(default_factory=dict)
    full: Dict[str, Any] = field(default_factory=dict)


CASES = (
    Case("shape_law", shape_law_case),
    Case("growth_shapes", growth_shapes_case, {"reps": 2000}),
    Case("weight_invariant", weight_case, {"n": 200, "reps": 20}),
    Case("urn_limit", urn_case, {"n": 2000, "reps": 300}),
    Case("crp_tables", crp_case, {"n": 10_000, "reps": 4000}),
    Case("marchal_spine", marchal_spine_case, {"n": 2000, "reps": 2000}),
    Case("martingale", martingale_case, {"depth": 8, "reps": 2000}),
    Case("calibration", calibration_case, {"reps": 20_000}),
    Case("fixpoint", fixpoint_case, {"depth": 8, "reps": 2000}),
    Case("attraction", attraction_case, {"depth": 10, "reps": 4000}),
    Case("gh_oracle", gh_case),
    Case("concat_algebra", concat_case, {"reps": 200}),
)


def case_seed(seed: int, name: str) -> int:
    return (check_seed(seed) + zlib.crc32(name.encode())) % (SEED_MAX + 1)


def run_case(case: Case, suite: str, seed: int, threads: int = 1, retry_once: bool = False) -> StatReport:
    if suite not in SUITES:
        raise DomainError(f"Unknown suite: {suite}")
    kwargs = case.quick if suite == "quick" else case.full
    cseed = case_seed(seed, case.name)
    start = time.perf_counter()
    report = case.run(make_rng(cseed), threads, **kwargs)
    if retry_once and not report.passed:
        logger.info("%s failed %s, retrying on a fresh stream", case.name, [v.label for v in report.failures()])
        report = case.run(make_rng(cseed, 1), threads, **kwargs)
        report.notes["retried"] = True
    report.name = case.name
    report.seed = cseed
    report.runtime = time.perf_counter() - start
    logger.info("%s: %s in %.2fs", case.name, "pass" if report.passed else "FAIL", report.runtime)
    return report


def run_suite(
    suite: str = "quick",
    seed: int = 42,
    threads: int = 1,
    retry_once: bool = False,
    only: Optional[Sequence[str]] = None,
) -> List[StatReport]:
    """Run the acceptance cases, in parallel over ``threads``; reports are sorted by name."""
    cases = list(CASES)
    if only:
        unknown = sorted(set(only) - {c.name for c in CASES})
        if unknown:
            raise DomainError(f"Unknown acceptance cases: {', '.join(unknown)}")
        cases = [c for c in cases if c.name in only]
    reports = map_replicates(lambda c: run_case(c, suite, seed, 1, retry_once), cases, threads)
    return sorted(reports, key=lambda r: r.name)

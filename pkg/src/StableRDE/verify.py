# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

"""Estimator-versus-theory comparisons.

A comparison produces a :class:`Verdict` under a named rule:

``3sigma``
    |estimate - target| <= 3 stderr; a zero stderr falls back to ``exact``.
``exact``
    equality up to 1e-12 relative.
``rel:TOL``
    |estimate / target - 1| <= TOL.
``le`` / ``ge``
    estimate <= target (bounds, critical values), or >= target.
``le3sigma``
    estimate - 3 stderr <= target.
``ks:1%`` / ``chi2:1%``
    test statistic at most its 1% critical value.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import IO, Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy import stats as sps

from .errors import DomainError, SampleSizeError

PROVENANCE = ("PAPER", "TRIVIAL", "DERIVED")
CSV_COLUMNS = ("test", "label", "estimate", "stderr", "n", "target", "provenance", "rule", "verdict")

MIN_MOMENT_SAMPLES = 30
MIN_KS_SAMPLES = 100
MIN_EXPECTED_COUNT = 5.0
KS_C_1PCT = 1.628


@dataclass(frozen=True)
class Estimate:
    label: str
    value: float
    stderr: float
    n: int


@dataclass(frozen=True)
class Target:
    label: str
    value: float
    provenance: str


@dataclass(frozen=True)
class Verdict:
    label: str
    passed: bool
    rule: str
    estimate: float
    stderr: float
    n: int
    target: float


def check_rule(value: float, stderr: float, target: float, rule: str) -> bool:
    if rule == "exact" or (rule == "3sigma" and stderr == 0):
        return abs(value - target) <= 1e-12 * max(1.0, abs(target))
    if rule == "3sigma":
        return abs(value - target) <= 3.0 * stderr
    if rule.startswith("rel:"):
        tol = float(rule[4:])
        if target == 0:
            return abs(value) <= tol
        return abs(value / target - 1.0) <= tol
    if rule in ("le", "ks:1%", "chi2:1%"):
        return value <= target
    if rule == "le3sigma":
        return value - 3.0 * stderr <= target
    if rule == "ge":
        return value >= target
    raise DomainError(f"Unknown comparison rule: {rule}")


def compare(label: str, value: float, stderr: float, n: int, target: float, rule: str = "3sigma") -> Verdict:
    if rule == "3sigma" and stderr == 0:
        rule = "exact"
    return Verdict(label, bool(check_rule(value, stderr, target, rule)), rule, float(value), float(stderr), int(n), float(target))


def mean_stderr(samples) -> tuple:
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < 2:
        return float(x.mean()) if n else math.nan, math.inf
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n))


def moment_test(samples, p: float, target: float, rule: str = "3sigma", label: str = "") -> Verdict:
    """Sample p-th moment against ``target``; stderr from the sample variance of x^p."""
    x = np.asarray(samples, dtype=float)
    if len(x) < MIN_MOMENT_SAMPLES:
        raise SampleSizeError(f"moment_test needs at least {MIN_MOMENT_SAMPLES} samples, got {len(x)}")
    value, stderr = mean_stderr(x**p)
    return compare(label or f"E[X^{p:g}]", value, stderr, len(x), target, rule)


def ks_test(samples_a, samples_b, label: str = "KS") -> Verdict:
    """Two-sample Kolmogorov-Smirnov statistic against its 1% critical value."""
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if min(len(a), len(b)) < MIN_KS_SAMPLES:
        raise SampleSizeError(f"ks_test needs at least {MIN_KS_SAMPLES} samples per side, got {len(a)} and {len(b)}")
    statistic = float(sps.ks_2samp(a, b).statistic)
    n, m = len(a), len(b)
    critical = KS_C_1PCT * math.sqrt((n + m) / (n * m))
    return Verdict(label, statistic <= critical, "ks:1%", statistic, 0.0, min(n, m), critical)


def multinomial_gof(counts: Sequence[float], probs: Sequence[float], label: str = "chi2") -> Verdict:
    """Pearson chi-square of ``counts`` against ``probs`` at the 1% level."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if counts.shape != probs.shape:
        raise DomainError(f"{len(counts)} counts for {len(probs)} cells")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise DomainError(f"Cell probabilities must be nonnegative and sum to 1, got {probs.sum()!r}")
    total = counts.sum()
    live = probs > 0
    expected = probs[live] * total
    if np.any(expected < MIN_EXPECTED_COUNT):
        raise SampleSizeError(f"Expected count {expected.min():.3g} below {MIN_EXPECTED_COUNT} in some cell")
    dof = int(live.sum()) - 1
    critical = float(sps.chi2.ppf(0.99, dof)) if dof > 0 else 0.0
    if np.any(counts[~live] > 0):
        statistic = math.inf
    elif dof == 0:
        statistic = 0.0
    else:
        statistic = float(sps.chisquare(counts[live], expected).statistic)
    return Verdict(label, statistic <= critical, "chi2:1%", statistic, 0.0, int(total), critical)


@dataclass
class StatReport:
    """Comparisons of Monte Carlo estimates with exact targets.

    ``estimates``, ``targets`` and ``verdicts`` are aligned by label;
    ``notes`` carries diagnostics that are not comparisons.
    """

    name: str
    estimates: List[Estimate] = field(default_factory=list)
    targets: List[Target] = field(default_factory=list)
    verdicts: List[Verdict] = field(default_factory=list)
    seed: Optional[int] = None
    runtime: float = 0.0
    notes: Dict[str, Any] = field(default_factory=dict)

    def record(self, verdict: Verdict, provenance: str) -> Verdict:
        if provenance not in PROVENANCE:
            raise DomainError(f"Unknown provenance tag: {provenance}")
        self.estimates.append(Estimate(verdict.label, verdict.estimate, verdict.stderr, verdict.n))
        self.targets.append(Target(verdict.label, verdict.target, provenance))
        self.verdicts.append(verdict)
        return verdict

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def failures(self) -> List[Verdict]:
        return [v for v in self.verdicts if not v.passed]

    def to_rows(self) -> List[Dict[str, Any]]:
        rows = []
        for est, tgt, ver in zip(self.estimates, self.targets, self.verdicts):
            rows.append({
                "test": self.name,
                "label": est.label,
                "estimate": est.value,
                "stderr": est.stderr,
                "n": est.n,
                "target": tgt.value,
                "provenance": tgt.provenance,
                "rule": ver.rule,
                "verdict": "pass" if ver.passed else "fail",
            })
        return rows

    def to_dict(self, with_runtime: bool = True) -> Dict[str, Any]:
        data = asdict(self)
        if not with_runtime:
            data.pop("runtime")
        return data


def write_report_csv(reports: Iterable[StatReport], target: IO[str]):
    writer = csv.DictWriter(target, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for report in sorted(reports, key=lambda r: r.name):
        for row in report.to_rows():
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def report_csv(reports: Iterable[StatReport]) -> str:
    buf = io.StringIO()
    write_report_csv(reports, buf)
    return buf.getvalue()

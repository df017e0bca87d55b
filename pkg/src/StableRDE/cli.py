# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

"""Command line entry point, ``stablerde``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from contextlib import contextmanager
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .concat import ConcatInput, ScalingSeq, concat, stable_xi
from .config import RunConfig, load_config
from .errors import ConfigError, StableRDEError
from .ghdist import DEFAULT_MAX_NODES, gh_dist
from .laws import crp_table_counts, urn_run
from .marchal import decomposition_stat, enumerate_shapes, grow, shape_key, spine_scaling_stat, to_metric
from .rde import (
    InitLaw,
    XiModel,
    attraction_experiment,
    iterate,
    parse_mode,
    spine_martingale,
    string_height_profile,
)
from .rng import derive, make_rng, map_replicates
from .suite import SUITES, run_suite
from .trees import MetricTree, read_tree, write_tree
from .verify import StatReport, write_report_csv

logger = logging.getLogger(__name__)

# argparse destinations that are not run parameters
META = ("config", "verbose", "handler", "group", "subcommand")


@contextmanager
def _output(path: str):
    if path == "-":
        yield sys.stdout
        sys.stdout.flush()
    else:
        with open(path, "w", newline="") as f:
            yield f


def _require(cfg: RunConfig, *keys: str) -> List[Any]:
    missing = [k for k in keys if cfg.params.get(k) is None]
    if missing:
        raise ConfigError(f"Missing parameters for {cfg.command}", missing)
    return [cfg.params[k] for k in keys]


def _write_reports(cfg: RunConfig, reports: Sequence[StatReport]):
    with _output(cfg.out) as f:
        if (cfg.format or "csv") == "csv":
            write_report_csv(reports, f)
        else:
            json.dump([r.to_dict(with_runtime=False) for r in sorted(reports, key=lambda r: r.name)], f, indent=1)
            f.write("\n")


def _write_columns(cfg: RunConfig, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    rows = list(rows)
    with _output(cfg.out) as f:
        if (cfg.format or "csv") == "csv":
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows([[repr(v) if isinstance(v, float) else v for v in row] for row in rows])
        else:
            json.dump([dict(zip(header, row)) for row in rows], f, indent=1)
            f.write("\n")


def _write_json(cfg: RunConfig, data: Any):
    with _output(cfg.out) as f:
        json.dump(data, f, indent=1)
        f.write("\n")


def _summary(text: str):
    print(text, file=sys.stderr)


def _report_summary(reports: Sequence[StatReport]) -> int:
    failed = [f"{r.name}:{v.label}" for r in reports for v in r.failures()]
    total = sum(len(r.verdicts) for r in reports)
    _summary(f"{total - len(failed)}/{total} comparisons passed" + (f"; failed {', '.join(failed)}" if failed else ""))
    return 1 if failed else 0


# --- handlers --------------------------------------------------------------------


def cmd_marchal_grow(cfg: RunConfig) -> int:
    alpha, n = _require(cfg, "alpha", "n")
    t = grow(alpha, n, make_rng(cfg.seed))
    with _output(cfg.out) as f:
        write_tree(to_metric(t), f, extra={"discrete": t.to_dict()})
    _summary(f"grew a tree with {n} leaves, alpha={alpha:g}")
    return 0


def cmd_marchal_shapes(cfg: RunConfig) -> int:
    alpha, n = _require(cfg, "alpha", "n")
    shapes = enumerate_shapes(alpha, n)
    _write_columns(cfg, ("shape", "prob"), ((shape_key(t), p) for t, p in shapes))
    _summary(f"{len(shapes)} shapes with {n} leaves")
    return 0


def cmd_marchal_spine(cfg: RunConfig) -> int:
    alpha, n = _require(cfg, "alpha", "n")
    report = spine_scaling_stat(alpha, n, cfg.get("reps", 1000), make_rng(cfg.seed), cfg.get("method", "chain"))
    report.seed = cfg.seed
    _write_reports(cfg, [report])
    return _report_summary([report])


def cmd_marchal_decompose(cfg: RunConfig) -> int:
    alpha, n = _require(cfg, "alpha", "n")
    report = decomposition_stat(alpha, n, cfg.get("reps", 1000), make_rng(cfg.seed))
    report.seed = cfg.seed
    _write_reports(cfg, [report])
    return _report_summary([report])


def cmd_urn(cfg: RunConfig) -> int:
    gamma, t, n = _require(cfg, "gamma", "t", "n")
    gamma = [float(g) for g in str(gamma).split(",")] if not isinstance(gamma, list) else gamma
    counts = urn_run(gamma, t, n, cfg.get("reps", 1), make_rng(cfg.seed))
    header = [f"P{j}" for j in range(len(gamma))]
    _write_columns(cfg, header, ((row / n).tolist() for row in counts))
    _summary(f"{len(counts)} urns after {n} draws")
    return 0


def cmd_crp(cfg: RunConfig) -> int:
    beta, theta, n = _require(cfg, "beta", "theta", "n")
    k = crp_table_counts(beta, theta, n, cfg.get("reps", 1), make_rng(cfg.seed))
    _write_columns(cfg, ("K_n", "K_n/n^beta"), ((int(x), float(x / n**beta)) for x in k))
    _summary(f"{len(k)} restaurants with {n} customers, mean K_n {k.mean():g}")
    return 0


def cmd_xi(cfg: RunConfig) -> int:
    (alpha,) = _require(cfg, "alpha")
    rng = make_rng(cfg.seed)
    eps = cfg.get("eps", 1e-6)
    seqs = map_replicates(
        lambda r: stable_xi(alpha, eps, r, cfg.get("max_atoms", 100_000)),
        [derive(rng, r) for r in range(cfg.get("reps", 1))],
        cfg.threads,
    )
    if (cfg.format or "json") == "json":
        _write_json(cfg, [{"x": list(s.x), "p": list(s.p)} for s in seqs])
    else:
        _write_columns(cfg, ("x0", "x1", "x2", "x3", "n_p"), ((*s.x, len(s.p)) for s in seqs))
    _summary(f"{len(seqs)} scaling sequences, alpha={alpha:g}")
    return 0


def read_concat_input(path: str) -> ConcatInput:
    """``{"xi": {"x": [...], "p": [...]}, "beta": b, "trees": [rtree-v1 or null, ...]}``."""
    with open(path) as f:
        data = json.load(f)
    try:
        xi = ScalingSeq(tuple(data["xi"]["x"]), tuple(data["xi"].get("p", ())))
        trees = tuple(None if t is None else MetricTree.from_dict(t) for t in data["trees"])
        return ConcatInput(xi, trees, float(data["beta"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"Malformed concatenation input {path}: {exc}", ["input"]) from exc


def cmd_concat(cfg: RunConfig) -> int:
    (path,) = _require(cfg, "input")
    t = concat(read_concat_input(path))
    with _output(cfg.out) as f:
        write_tree(t, f)
    _summary(f"concatenated tree with {t.n_nodes} nodes, spine {t.spine_length():g}")
    return 0


def cmd_ghdist(cfg: RunConfig) -> int:
    a_path, b_path = _require(cfg, "a", "b")
    result = gh_dist(read_tree(a_path), read_tree(b_path), bool(cfg.get("marked", False)), cfg.get("max_nodes", DEFAULT_MAX_NODES))
    _write_json(cfg, {"distance": result.distance, "pairs": [list(p) for p in result.pairs]})
    _summary(f"GH distance {result.distance!r}")
    return 0


def _xi_init(cfg: RunConfig, need_init: bool = True):
    xi = XiModel.from_spec(_require(cfg, "xi")[0], cfg.get("eps", 1e-6))
    init = InitLaw.from_spec(cfg.get("init", "segment:1.0")) if need_init else None
    return xi, init


def cmd_rde_iterate(cfg: RunConfig) -> int:
    xi, init = _xi_init(cfg)
    (depth,) = _require(cfg, "depth")
    mode = cfg.get("mode", "spine")
    name, _ = parse_mode(mode)
    rng = make_rng(cfg.seed)
    draws = map_replicates(
        lambda r: iterate(xi, init, depth, mode, r),
        [derive(rng, r) for r in range(cfg.get("reps", 1))],
        cfg.threads,
    )
    if name == "spine":
        _write_columns(cfg, ("replicate", "spine"), enumerate(draws))
        _summary(f"{len(draws)} spines at depth {depth}, mean {np.mean(draws):g}")
    elif len(draws) == 1:
        with _output(cfg.out) as f:
            write_tree(draws[0], f)
        _summary(f"{mode} iterate at depth {depth}: {draws[0].n_nodes} nodes")
    else:
        _write_json(cfg, [t.to_dict() for t in draws])
        _summary(f"{len(draws)} {mode} iterates at depth {depth}")
    return 0


def cmd_rde_martingale(cfg: RunConfig) -> int:
    xi, _ = _xi_init(cfg, need_init=False)
    (depth,) = _require(cfg, "depth")
    report = spine_martingale(xi, depth, cfg.get("reps", 10_000), make_rng(cfg.seed), cfg.threads)
    report.seed = cfg.seed
    _write_reports(cfg, [report])
    return _report_summary([report])


def cmd_rde_attract(cfg: RunConfig) -> int:
    xi, init = _xi_init(cfg)
    (depth,) = _require(cfg, "depth")
    report = attraction_experiment(xi, init, depth, cfg.get("reps", 10_000), make_rng(cfg.seed), cfg.threads)
    report.seed = cfg.seed
    _write_reports(cfg, [report])
    return _report_summary([report])


def cmd_rde_string(cfg: RunConfig) -> int:
    xi, init = _xi_init(cfg)
    (m,) = _require(cfg, "m")
    report = string_height_profile(
        xi, init, m, cfg.get("levels", 2), cfg.get("reps", 100), make_rng(cfg.seed), cfg.get("min_mass", 1e-4)
    )
    report.seed = cfg.seed
    _write_reports(cfg, [report])
    return _report_summary([report])


def cmd_verify(cfg: RunConfig) -> int:
    reports = run_suite(
        cfg.get("suite", "quick"),
        cfg.seed,
        cfg.threads,
        bool(cfg.get("retry_once", True)),
        cfg.get("only"),
    )
    _write_reports(cfg, reports)
    return _report_summary(reports)


# --- parser ----------------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON run configuration; flags override it")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed (default 42)")
    p.add_argument("--out", help="output file, '-' for standard output (default)")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--threads", type=int, help="replicate threads (default $RDE_THREADS or 1)")
    p.add_argument("--reps", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _xi_flags(p: argparse.ArgumentParser, init: bool = True):
    p.add_argument("--xi", help="stable:ALPHA or custom:FILE")
    p.add_argument("--eps", type=float, help="stick truncation threshold")
    if init:
        p.add_argument("--init", help="segment:C, exp:MEAN, file:F or tree:F")


def _add(sub, name: str, handler: Callable[[RunConfig], int], help: str) -> argparse.ArgumentParser:
    p = sub.add_parser(name, help=help)
    _common(p)
    p.set_defaults(handler=handler)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stablerde", description="Stable trees and their recursive distribution equation.")
    sub = parser.add_subparsers(dest="group", required=True)

    marchal = sub.add_parser("marchal", help="Marchal's growth algorithm")
    msub = marchal.add_subparsers(dest="subcommand", required=True)
    for name, handler, text in (
        ("grow", cmd_marchal_grow, "grow one tree, rtree-v1 output"),
        ("shapes", cmd_marchal_shapes, "enumerate leaf-labelled shapes"),
        ("spine", cmd_marchal_spine, "rescaled spine length against ML moments"),
        ("decompose", cmd_marchal_decompose, "weight split at V2"),
    ):
        p = _add(msub, name, handler, text)
        p.add_argument("--alpha", type=float)
        p.add_argument("--n", type=int)
        if name == "spine":
            p.add_argument("--method", choices=("chain", "grow"))

    p = _add(sub, "urn", cmd_urn, "generalised Polya urn")
    p.add_argument("--gamma", help="comma separated initial weights")
    p.add_argument("--t", type=float)
    p.add_argument("--n", type=int)

    p = _add(sub, "crp", cmd_crp, "two-parameter Chinese restaurant process")
    p.add_argument("--beta", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--n", type=int)

    p = _add(sub, "xi", cmd_xi, "stable scaling sequences")
    p.add_argument("--alpha", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--max-atoms", dest="max_atoms", type=int)

    p = _add(sub, "concat", cmd_concat, "concatenate marked trees")
    p.add_argument("--input", help="JSON with xi, beta and trees")

    p = _add(sub, "ghdist", cmd_ghdist, "exact Gromov-Hausdorff distance")
    p.add_argument("a", help="first rtree-v1 file")
    p.add_argument("b", help="second rtree-v1 file")
    p.add_argument("--marked", action="store_true", default=None)
    p.add_argument("--max-nodes", dest="max_nodes", type=int)

    rde = sub.add_parser("rde", help="iteration of the concatenation map")
    rsub = rde.add_subparsers(dest="subcommand", required=True)
    p = _add(rsub, "iterate", cmd_rde_iterate, "draw iterates")
    _xi_flags(p)
    p.add_argument("--depth", type=int)
    p.add_argument("--mode", help="full, spine or skeleton:K")
    p = _add(rsub, "martingale", cmd_rde_martingale, "spine martingale")
    _xi_flags(p, init=False)
    p.add_argument("--depth", type=int)
    p = _add(rsub, "attract", cmd_rde_attract, "attraction to the fixpoint")
    _xi_flags(p)
    p.add_argument("--depth", type=int)
    p = _add(rsub, "string", cmd_rde_string, "generalised strings and bead replacement")
    _xi_flags(p)
    p.add_argument("--m", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--min-mass", dest="min_mass", type=float)

    p = _add(sub, "verify", cmd_verify, "acceptance suite")
    p.add_argument("--suite", choices=SUITES)
    p.add_argument("--retry-once", dest="retry_once", action="store_true", default=None)
    p.add_argument("--no-retry", dest="retry_once", action="store_false", default=None, help="fail on the first pass")
    p.add_argument("--only", nargs="+", help="case names")
    return parser


def _setup_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    overrides: Dict[str, Any] = {k: v for k, v in vars(args).items() if k not in META}
    overrides["command"] = " ".join(x for x in (args.group, getattr(args, "subcommand", None)) if x)
    try:
        cfg = load_config(args.config, overrides)
        cfg.command = overrides["command"]
        return args.handler(cfg)
    except (StableRDEError, FileNotFoundError, json.JSONDecodeError) as exc:
        logger.warning("%s", exc)
        return 1
    except Exception:
        logger.critical("Unexpected failure in %s", overrides["command"], exc_info=True)
        raise


if __name__ == "__main__":
    sys.exit(main())

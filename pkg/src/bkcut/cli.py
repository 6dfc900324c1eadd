"""Command line interface: data loading, experiment orchestration, reports."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .balance import KINDS, BalanceFunction
from .errors import BkcutError, InvalidInputError
from .graph import (
    build_knn_graph,
    connected_components,
    load_edge_list,
    load_points,
)
from .partitioner import (
    SolveConfig,
    bcut_value,
    seed_streams,
    solve,
    transductive_seed,
)

logger = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    input: str
    k: int
    format: str = "points"          # points | edges
    balance: str = "rcc-asym"
    knn: int = 15
    scale: float = 1.0
    seed: int = 0
    label_column: bool = False
    labels_per_class: int = 0       # transductive: labels sampled per class
    label_percent: float = 0.0      # transductive: percentage per class
    simplex_only: bool = False
    out_dir: str = "bkcut_out"
    inner_tol: float = 1e-6
    inner_max_iter: int = 50000
    eps: float = 1e-4
    n_random: int = 5
    n_spectral: int = 7
    max_total_outer: int = 400
    residuals_csv: bool = False

    def validate(self):
        if self.format not in ("points", "edges"):
            raise InvalidInputError("format must be 'points' or 'edges'")
        if self.format == "edges" and self.label_column:
            raise InvalidInputError("edge-list input has no label column")
        if self.k < 2:
            raise InvalidInputError("k must be at least 2")
        if self.balance not in KINDS:
            raise InvalidInputError(f"balance must be one of {KINDS}")
        for name in ("knn", "scale", "inner_tol", "inner_max_iter"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.eps < 0 or self.labels_per_class < 0 or self.label_percent < 0:
            raise InvalidInputError("eps and label options must be nonnegative")
        if self.labels_per_class and self.label_percent:
            raise InvalidInputError(
                "labels-per-class and label-percent are mutually exclusive"
            )


def clustering_error(pred, truth):
    """Percent of misassigned points under the best cluster-to-class matching.

    The matching is the assignment-problem optimum, so permuted cluster
    indices incur no error.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise InvalidInputError("prediction and truth lengths differ")
    n = pred.size
    classes = np.unique(truth)
    clusters = np.unique(pred)
    if classes.size > clusters.size:
        # allow, as long as the confusion matrix stays rectangular-compatible
        pass
    conf = np.zeros((int(pred.max()) + 1, classes.size), dtype=np.int64)
    class_pos = {c: i for i, c in enumerate(classes)}
    for p, t in zip(pred, truth):
        conf[p, class_pos[t]] += 1
    rows, cols = linear_sum_assignment(-conf)
    matched = conf[rows, cols].sum()
    return 100.0 * (n - matched) / n


def write_assignment(path, assignment):
    with open(path, "w", encoding="utf-8") as fh:
        for i, c in enumerate(assignment):
            fh.write(f"{i}\t{int(c)}\n")


def read_assignment(path):
    """Parse an assignment file written by :func:`write_assignment`."""
    idx, cls = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise InvalidInputError(f"{path}:{ln}: expected 'vertex\\tcluster'")
            try:
                idx.append(int(parts[0]))
                cls.append(int(parts[1]))
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{ln}: {exc}") from None
    order = np.argsort(idx)
    if not np.array_equal(np.asarray(idx)[order], np.arange(len(idx))):
        raise InvalidInputError(f"{path}: vertex indices are not 0..n-1")
    return np.asarray(cls, dtype=np.int64)[order]


def run(config):
    """Execute one experiment and write assignment / report files.

    Returns the report dictionary. The report is also written to
    ``report.json`` in the output directory, the best partition to
    ``assignment.tsv``, and (optionally) solver residuals to
    ``residuals.csv``.
    """
    config.validate()
    t_start = time.monotonic()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    truth = None
    if config.format == "points":
        points, truth = load_points(config.input, label_column=config.label_column)
        g = build_knn_graph(points, config.knn, config.scale)
    else:
        g = load_edge_list(config.input)

    warnings = []
    comps = connected_components(g)
    if len(comps) > 1:
        warnings.append(
            f"graph is disconnected ({len(comps)} components); the relaxation "
            "can degenerate on such graphs"
        )
        if len(comps) > config.k:
            warnings.append(
                f"component count {len(comps)} exceeds k={config.k}; "
                "a zero-cut partition is impossible to round uniquely"
            )
    for msg in warnings:
        logger.warning("%s", msg)

    bf = BalanceFunction(config.balance, config.k, graph=g)

    seeds = None
    if config.labels_per_class or config.label_percent:
        if truth is None:
            raise InvalidInputError("transductive mode needs a label column")
        label_rng = seed_streams(config.seed)["label"]
        if config.labels_per_class:
            seeds = transductive_seed(truth, config.k, label_rng,
                                      per_class=config.labels_per_class)
        else:
            seeds = transductive_seed(truth, config.k, label_rng,
                                      percent=config.label_percent)

    solve_cfg = SolveConfig(
        n_random=config.n_random, n_spectral=config.n_spectral,
        seed=config.seed, eps=config.eps, inner_tol=config.inner_tol,
        inner_max_iter=config.inner_max_iter,
        max_total_outer=config.max_total_outer,
        simplex_only=config.simplex_only,
        collect_residuals=config.residuals_csv,
    )
    result = solve(g, bf, config.k, solve_cfg, seed_labels=seeds)

    report = {
        "config": asdict(config),
        "data": {
            "n": g.n,
            "edges": int(g.edge_count),
            "components": len(comps),
        },
        "warnings": warnings,
        "success": result.success,
        "results": {},
        "inits": [],
    }
    for r in result.runs:
        report["inits"].append({
            "init_id": r.init_id,
            "kind": r.init_kind,
            "gamma_trajectory": [float(x) for x in r.gammas],
            "chi_trajectory": [float(x) for x in r.chis],
            "phases": r.phases,
            "inner_objectives": [float(x) for x in r.inner_objectives],
            "inner_iterations": r.inner_iterations,
            "inner_tols": r.inner_tols,
            "terminated_steps": r.terminated_steps,
            "growth_events": r.growth_events,
            "weak_degenerate": bool(r.best.weak_degenerate) if r.best else None,
            "strong_degenerate": bool(r.best.strong_degenerate) if r.best else None,
            "best_bcut": None if r.best is None else float(r.best.bcut),
            "final_gamma": float(r.final_gamma),
            "min_gamma": float(r.min_gamma),
            "degenerate": r.degenerate,
            "failure": r.failure,
        })

    if result.success:
        assignment_path = out_dir / "assignment.tsv"
        write_assignment(assignment_path, result.assignment)
        by_kind = {}
        for kind in KINDS:
            try:
                bk = BalanceFunction(kind, config.k, graph=g)
                by_kind[kind] = bcut_value(g, bk, result.assignment, config.k)
            except BkcutError:
                by_kind[kind] = None
        report["results"] = {
            "bcut": float(result.bcut),
            "bcut_by_kind": by_kind,
            "assignment_file": str(assignment_path),
            "labeled_vertices": (
                [int(i) for i in result.label_set.members]
                if result.label_set is not None else []
            ),
        }
        if truth is not None:
            report["results"]["clustering_error_percent"] = float(
                clustering_error(result.assignment, truth)
            )
        if seeds is not None:
            seed_ok = bool(np.all(
                result.assignment[seeds.seed_idx] == seeds.seed_col
            ))
            report["results"]["seed_labels_respected"] = seed_ok
    else:
        report["results"] = {
            "failure": "all initializations degenerate",
            "reasons": [r.failure for r in result.runs],
        }

    if config.residuals_csv:
        res_path = out_dir / "residuals.csv"
        with open(res_path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["init", "outer", "inner_iter", "primal", "dual",
                         "violation"])
            for r in result.runs:
                for outer_t, it, pres, dres, viol in r.residuals:
                    wr.writerow([r.init_id, outer_t, it, pres, dres, viol])
        report["results"]["residuals_file"] = str(res_path)

    report["runtime_sec"] = time.monotonic() - t_start
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def build_parser():
    ap = argparse.ArgumentParser(
        prog="bkcut",
        description="Balanced k-cut graph clustering by direct minimization "
                    "of the cut ratio sum.",
    )
    ap.add_argument("--input", required=True, help="points table or edge list")
    ap.add_argument("--format", choices=("points", "edges"), default="points")
    ap.add_argument("--k", type=int, required=True, help="number of clusters")
    ap.add_argument("--balance", choices=KINDS, default="rcc-asym")
    ap.add_argument("--knn", type=int, default=15,
                    help="neighbors for graph construction (points input)")
    ap.add_argument("--scale", type=float, default=1.0,
                    help="Gaussian scale s in the edge weights")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--label-column", action="store_true",
                    help="treat the final input column as class labels")
    ap.add_argument("--labels-per-class", type=int, default=0,
                    help="transductive: fix this many true labels per class")
    ap.add_argument("--label-percent", type=float, default=0.0,
                    help="transductive: fix this percentage per class")
    ap.add_argument("--simplex-only", action="store_true",
                    help="diagnostic mode without membership/size constraints")
    ap.add_argument("--out-dir", default="bkcut_out")
    ap.add_argument("--inner-tol", type=float, default=1e-6)
    ap.add_argument("--inner-max-iter", type=int, default=50000)
    ap.add_argument("--eps", type=float, default=1e-4,
                    help="relative objective decrease to keep iterating")
    ap.add_argument("--inits-random", type=int, default=5, dest="n_random")
    ap.add_argument("--inits-spectral", type=int, default=7, dest="n_spectral")
    ap.add_argument("--max-outer", type=int, default=400, dest="max_total_outer")
    ap.add_argument("--residuals-csv", action="store_true",
                    help="dump per-iteration solver residuals")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    config = ExperimentConfig(
        input=args.input, format=args.format, k=args.k, balance=args.balance,
        knn=args.knn, scale=args.scale, seed=args.seed,
        label_column=args.label_column,
        labels_per_class=args.labels_per_class,
        label_percent=args.label_percent,
        simplex_only=args.simplex_only, out_dir=args.out_dir,
        inner_tol=args.inner_tol, inner_max_iter=args.inner_max_iter,
        eps=args.eps, n_random=args.n_random, n_spectral=args.n_spectral,
        max_total_outer=args.max_total_outer,
        residuals_csv=args.residuals_csv,
    )
    try:
        report = run(config)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BkcutError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not report["success"]:
        print("no valid partition found; see report.json", file=sys.stderr)
        return 1
    res = report["results"]
    line = f"best {config.balance} cut: {res['bcut']:.6f}"
    if "clustering_error_percent" in res:
        line += f"  error: {res['clustering_error_percent']:.2f}%"
    print(line)
    print(f"outputs in {config.out_dir}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())

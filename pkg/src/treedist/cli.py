"""``treedist`` command-line interface.

Every command prints a JSON report on stdout. Exit codes:

    0  success
    2  invalid input (tree/marginal/spec validation, bad targets, LP size cap)
    3  transport solver failure
    4  stage-count mismatch between trees
    5  ``--method swi`` on a tree that is not stagewise independent
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .metric import StagewiseMetric
from .nested import (
    LPSizeError,
    StageCountMismatchError,
    check_constraint_equivalence,
    check_homogeneity,
    nested_dp,
    nested_lp,
)
from .nested.lp import EQUIVALENCE_CAP
from .reduction import ReductionError, reduce_swi
from .swi import NotStagewiseIndependentError, SwiSpecError, detect_swi, nested_swi, subtree_identity_all
from .transport import InfeasibleTransportError, TransportError, TransportValidationError, wasserstein_plan
from .tree import (
    DEFAULT_TOL,
    InvalidMarginalError,
    InvalidTreeError,
    TreeStructureError,
    tree_product,
    validate,
)

log = logging.getLogger("treedist")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_STAGE_MISMATCH = 4
EXIT_NOT_SWI = 5

COMMANDS = ("validate", "wasserstein", "nested", "swi-check", "product", "reduce")


@dataclass
class RunConfig:
    command: str
    inputs: list[Path]
    metric: StagewiseMetric = field(default_factory=StagewiseMetric)
    tol: float = DEFAULT_TOL
    method: str = "auto"
    seed: int = 0
    output: Path | None = None
    verbosity: int = 0
    stage: int = 1
    targets: list[int] | None = None
    bench: bool = False
    table: bool = False
    plan: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        for path in self.inputs:
            if not Path(path).is_file():
                raise FileNotFoundError(f"input file {path} does not exist")


class CommandError(Exception):
    def __init__(self, code: int, message: str, **details):
        super().__init__(message)
        self.code = code
        self.details = details


def _load_trees(config: RunConfig):
    trees = []
    for path in config.inputs:
        try:
            tree = io.load_tree(path)
        except (TreeStructureError, io.FormatError, ValueError) as exc:
            raise CommandError(EXIT_VALIDATION, f"{path}: {exc}") from None
        report = validate(tree, config.tol)
        if not report.ok:
            raise CommandError(EXIT_VALIDATION, f"{path}: invalid tree", validation=report.to_dict())
        trees.append(tree)
    return trees


def cmd_validate(config: RunConfig) -> tuple[int, dict]:
    try:
        tree = io.load_tree(config.inputs[0])
    except (TreeStructureError, io.FormatError, ValueError) as exc:
        return EXIT_VALIDATION, {"valid": False, "error": str(exc)}
    report = validate(tree, config.tol)
    out = report.to_dict()
    out.update({"stages": tree.n_stages, "nodes": tree.n_nodes, "leaves": len(tree.leaves)})
    return (EXIT_OK if report.ok else EXIT_VALIDATION), out


def cmd_wasserstein(config: RunConfig) -> tuple[int, dict]:
    marginals = []
    for path in config.inputs:
        try:
            m = io.load_marginal(path)
        except (io.FormatError, ValueError) as exc:
            raise CommandError(EXIT_VALIDATION, f"{path}: {exc}") from None
        issues = m.problems(config.tol)
        if issues:
            raise CommandError(EXIT_VALIDATION, f"{path}: " + "; ".join(issues),
                               residual=float(m.probs.sum()) - 1.0)
        marginals.append(m)
    P, Q = marginals
    try:
        plan = wasserstein_plan(P, Q, config.metric, config.stage)
    except InfeasibleTransportError as exc:
        raise CommandError(EXIT_VALIDATION, str(exc), residual=exc.residual) from None
    except TransportValidationError as exc:
        raise CommandError(EXIT_VALIDATION, str(exc)) from None
    except TransportError as exc:
        raise CommandError(EXIT_SOLVER, str(exc)) from None
    out = {"value_p": plan.value, "value_root": plan.value ** (1.0 / config.metric.p)}
    if config.plan:
        out["plan"] = plan.plan
    return EXIT_OK, out


def _run_method(method: str, A, B, config: RunConfig):
    if method == "lp":
        return nested_lp(A, B, config.metric, tol=config.tol)
    if method == "dp":
        return nested_dp(A, B, config.metric, tol=config.tol, workers=config.workers)
    return nested_swi(A, B, config.metric, tol=config.tol, workers=config.workers)


def cmd_nested(config: RunConfig) -> tuple[int, dict]:
    A, B = _load_trees(config)
    if A.n_stages != B.n_stages:
        raise CommandError(EXIT_STAGE_MISMATCH, f"trees have {A.n_stages} and {B.n_stages} stages")
    method = config.method
    swi_ok = None
    if method == "auto" or config.bench:
        swi_ok = detect_swi(A, config.tol).is_swi and detect_swi(B, config.tol).is_swi
    if method == "auto":
        method = "swi" if swi_ok else "dp"
    log.info("nested distance by %s", method)
    try:
        result = _run_method(method, A, B, config)
    except NotStagewiseIndependentError as exc:
        raise CommandError(EXIT_NOT_SWI, str(exc), tree=exc.which, detect_swi=exc.report.to_dict()) from None
    except StageCountMismatchError as exc:
        raise CommandError(EXIT_STAGE_MISMATCH, str(exc)) from None
    except (LPSizeError, ValueError) as exc:
        raise CommandError(EXIT_VALIDATION, str(exc)) from None
    out = result.to_dict(include_table=config.table)

    if config.bench:
        if not swi_ok:
            raise CommandError(EXIT_NOT_SWI, "--bench compares dp with swi and needs two SWI trees")
        timings = {}
        values = {}
        for name in ("dp", "swi"):
            start = time.perf_counter()
            values[name] = _run_method(name, A, B, config).value_p
            timings[name] = time.perf_counter() - start
        out["bench"] = {
            "dp_seconds": timings["dp"],
            "swi_seconds": timings["swi"],
            "speedup": timings["dp"] / timings["swi"] if timings["swi"] > 0 else None,
            "dp_value_p": values["dp"],
            "swi_value_p": values["swi"],
        }
    return EXIT_OK, out


def cmd_swi_check(config: RunConfig) -> tuple[int, dict]:
    trees = _load_trees(config)
    names = ["A", "B"][: len(trees)]
    out: dict = {"trees": {}, "checks": []}
    reports = {}
    for name, tree in zip(names, trees):
        reports[name] = detect_swi(tree, config.tol)
        out["trees"][name] = {"stages": tree.n_stages, "nodes": tree.n_nodes, **reports[name].to_dict()}
        out["checks"].append({"name": f"swi[{name}]", "passed": reports[name].is_swi})

    if len(trees) == 2:
        A, B = trees
        if A.n_stages != B.n_stages:
            raise CommandError(EXIT_STAGE_MISMATCH, f"trees have {A.n_stages} and {B.n_stages} stages")
        metric = config.metric
        leaf_pairs = len(A.leaves) * len(B.leaves)
        if leaf_pairs <= EQUIVALENCE_CAP:
            eq = check_constraint_equivalence(A, B, metric)
            out["checks"].append({"name": "constraint_equivalence", **eq.to_dict()})
            dp = nested_dp(A, B, metric)
            gap = abs(dp.value_p - eq.leaf_value)
            out["checks"].append({
                "name": "dp_vs_lp", "dp_value_p": dp.value_p, "lp_value_p": eq.leaf_value,
                "gap": gap, "passed": gap <= 1e-8 * max(1.0, abs(eq.leaf_value)),
            })
        else:
            dp = nested_dp(A, B, metric)
            out["checks"].append({"name": "constraint_equivalence", "skipped": f"{leaf_pairs} leaf pairs"})
        if A.n_stages >= 2:
            rng = np.random.default_rng(config.seed)
            t = int(rng.integers(1, A.n_stages))
            k = int(rng.choice(A.nodes_at(t)))
            l = int(rng.choice(B.nodes_at(t)))
            if len(A.leaves) * len(B.leaves) <= EQUIVALENCE_CAP:
                hom = check_homogeneity(A, B, metric, k, l, 0.37)
                out["checks"].append({"name": "homogeneity", "stage": t, "a_node": A.ids[k],
                                      "b_node": B.ids[l], **hom.to_dict()})
        if reports["A"].is_swi and reports["B"].is_swi:
            passed, worst = subtree_identity_all(A, B, metric, result=dp)
            out["checks"].append({"name": "subtree_identity", "worst_relative_residual": worst, "passed": passed})
            fast = nested_swi(A, B, metric)
            gap = abs(fast.value_p - dp.value_p)
            out["checks"].append({
                "name": "swi_vs_dp", "swi_value_p": fast.value_p, "dp_value_p": dp.value_p,
                "gap": gap, "passed": gap <= 1e-8 * max(1.0, abs(dp.value_p)),
            })
    out["passed"] = all(c.get("passed", True) for c in out["checks"])
    return EXIT_OK, out


def cmd_product(config: RunConfig) -> tuple[int, dict]:
    A, B = _load_trees(config)
    try:
        tree = tree_product(A, B)
    except ValueError as exc:
        raise CommandError(EXIT_VALIDATION, str(exc)) from None
    data = io.tree_to_dict(tree)
    if config.output is not None:
        io.write_json(config.output, data)
        return EXIT_OK, {"stages": tree.n_stages, "nodes": tree.n_nodes, "leaves": len(tree.leaves),
                         "output": str(config.output)}
    return EXIT_OK, data


def cmd_reduce(config: RunConfig) -> tuple[int, dict]:
    try:
        spec = io.load_spec(config.inputs[0])
        result = reduce_swi(spec, config.targets or [], config.metric, seed=config.seed)
    except (io.FormatError, SwiSpecError, ReductionError, InvalidMarginalError, ValueError) as exc:
        raise CommandError(EXIT_VALIDATION, str(exc)) from None
    out = io.spec_to_dict(result.spec)
    out["stage_values"] = result.stage_values
    out["total_p"] = result.total_p
    out["methods"] = result.methods
    return EXIT_OK, out


HANDLERS = {
    "validate": cmd_validate,
    "wasserstein": cmd_wasserstein,
    "nested": cmd_nested,
    "swi-check": cmd_swi_check,
    "product": cmd_product,
    "reduce": cmd_reduce,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treedist", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, metric=True):
        p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="validation tolerance (default 1e-9)")
        p.add_argument("-o", "--output", type=Path, help="also write the report to this file")
        if metric:
            p.add_argument("--metric", type=Path, help='metric JSON: {"p", "weights", "ground"}')

    p = sub.add_parser("validate", help="check probability-tree invariants")
    p.add_argument("tree", type=Path)
    common(p, metric=False)

    p = sub.add_parser("wasserstein", help="Wasserstein distance between two marginals")
    p.add_argument("P", type=Path)
    p.add_argument("Q", type=Path)
    p.add_argument("--stage", type=int, default=1, help="stage whose ground metric is used")
    p.add_argument("--plan", action="store_true", help="include the optimal plan")
    common(p)

    p = sub.add_parser("nested", help="nested distance between two trees")
    p.add_argument("A", type=Path)
    p.add_argument("B", type=Path)
    p.add_argument("--method", choices=("auto", "lp", "dp", "swi"), default="auto")
    p.add_argument("--force-dp", action="store_true", help="same as --method dp")
    p.add_argument("--bench", action="store_true", help="time dp against swi")
    p.add_argument("--table", action="store_true", help="include the sub-tree distance table")
    p.add_argument("--workers", type=int, default=1)
    common(p)

    p = sub.add_parser("swi-check", help="stagewise independence and verification checks")
    p.add_argument("A", type=Path)
    p.add_argument("B", type=Path, nargs="?")
    p.add_argument("--seed", type=int, default=0)
    common(p)

    p = sub.add_parser("product", help="tree product: B attached below every leaf of A")
    p.add_argument("A", type=Path)
    p.add_argument("B", type=Path)
    common(p, metric=False)

    p = sub.add_parser("reduce", help="SWI-preserving reduction of per-stage marginals")
    p.add_argument("spec", type=Path)
    p.add_argument("--targets", required=True, help="comma-separated support sizes, one per stage")
    p.add_argument("--seed", type=int, default=0)
    common(p)
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    inputs = {
        "validate": [args.tree] if args.command == "validate" else [],
        "wasserstein": [getattr(args, "P", None), getattr(args, "Q", None)],
        "nested": [getattr(args, "A", None), getattr(args, "B", None)],
        "swi-check": [getattr(args, "A", None), getattr(args, "B", None)],
        "product": [getattr(args, "A", None), getattr(args, "B", None)],
        "reduce": [getattr(args, "spec", None)],
    }[args.command]
    inputs = [p for p in inputs if p is not None]
    metric_path = getattr(args, "metric", None)
    if metric_path is not None and not metric_path.is_file():
        raise FileNotFoundError(f"metric file {metric_path} does not exist")
    targets = None
    if args.command == "reduce":
        try:
            targets = [int(x) for x in args.targets.split(",")]
        except ValueError:
            raise CommandError(EXIT_VALIDATION, f"bad --targets {args.targets!r}") from None
    method = getattr(args, "method", "auto")
    if getattr(args, "force_dp", False):
        method = "dp"
    return RunConfig(
        command=args.command,
        inputs=inputs,
        metric=io.load_metric(metric_path),
        tol=args.tol,
        method=method,
        seed=getattr(args, "seed", 0),
        output=args.output,
        verbosity=args.verbose,
        stage=getattr(args, "stage", 1),
        targets=targets,
        bench=getattr(args, "bench", False),
        table=getattr(args, "table", False),
        plan=getattr(args, "plan", False),
        workers=getattr(args, "workers", 1),
    )


def run(argv: list[str] | None = None) -> tuple[int, dict]:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(name)s: %(message)s")
    try:
        config = _config_from_args(args)
        code, report = HANDLERS[config.command](config)
    except CommandError as exc:
        return exc.code, {"error": str(exc), **exc.details}
    except InvalidTreeError as exc:
        return EXIT_VALIDATION, {"error": str(exc), "validation": exc.report.to_dict()}
    except (FileNotFoundError, ValueError) as exc:
        return EXIT_VALIDATION, {"error": str(exc)}
    if config.output is not None and config.command != "product":
        io.write_json(config.output, report)
    return code, report


def main(argv: list[str] | None = None) -> int:
    code, report = run(argv)
    sys.stdout.write(io.dumps(report))
    return code


if __name__ == "__main__":
    sys.exit(main())

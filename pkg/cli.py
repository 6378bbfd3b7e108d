"""
Command-line surface: instance generation, single solves, strong-partitioning
targets, K-fold imitation, benchmarks and reports.

Every command that writes files also writes run_config.json next to them with
the resolved arguments. Timing columns are the only outputs that change from
one run to the next.
"""

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from config import (ABS_GAP, ALPINE_DELTA, APP_NAME, APP_VERSION, ASCENT_MAX_EVALS, ASCENT_MAX_ITER, DEFAULT_POINTS,
                    EXIT_OK, EXIT_TIME_LIMIT, FAMILIES, ML_FOLDS, ML_MAX_DEPTH, ML_WEAK_LEARNERS, POLICIES,
                    POOLING_BLOCKS, POOLING_EXTRA_EDGES, POOLING_PERTURBATION, REL_GAP, RESULTS_DB_PATH, TIME_LIMIT)
from database import ResultsDatabase
from driver import SolveConfig, read_results_csv, solve_global, summarize, write_results_csv
from instances import FamilySpec, write_family
from ml import MlConfig, Sample, extract_features, kfold_policy, scaled_errors, scaled_mae, write_mae_csv
from model import example_one, load_instance, normalize_to_unit_box
from nsmax import AscentConfig
from policies import make_policy, run_strong_partition, save_sp_result
from relax import PartitionMatrix
from sensitivity import value

logger = logging.getLogger(__name__)

PATH_ARGS = ("out", "instance", "instances", "partition", "predictions", "targets", "csv", "db", "summary",
             "gap_ratios")


@dataclass
class RunConfig:
    """Resolved arguments of one command"""
    subcommand: str
    paths: Dict[str, str] = field(default_factory=dict)
    options: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        paths, options = {}, {}
        for key, val in sorted(vars(args).items()):
            if key in ("command", "func", "verbose"):
                continue
            if key in PATH_ARGS:
                if val is not None:
                    paths[key] = str(Path(val).expanduser().resolve())
            else:
                options[key] = val
        return cls(args.command, paths, options)

    def path(self, key: str) -> Optional[Path]:
        return Path(self.paths[key]) if key in self.paths else None

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["version"] = APP_VERSION
        return data

    def write(self, directory) -> Path:
        target = Path(directory) / "run_config.json"
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return target


def _solve_config(rc: RunConfig) -> SolveConfig:
    o = rc.options
    return SolveConfig(rel_gap=o["rel_gap"], abs_gap=o["abs_gap"], time_limit=o["time_limit"],
                       delta=o["delta"], points=o["points"], seed=o["seed"])


def _ascent_config(rc: RunConfig) -> AscentConfig:
    return AscentConfig(max_iterations=rc.options["ascent_iterations"],
                        max_subgradient_evals=rc.options["ascent_evals"])


def _instance_files(directory: Path) -> List[Path]:
    skip = ("manifest.json", "run_config.json")
    files = sorted(p for p in directory.glob("*.json")
                   if p.name not in skip and not p.name.endswith((".partition.json", ".sidecar.json")))
    if not files:
        raise FileNotFoundError(f"no instance files in {directory}")
    return files


# Commands

def cmd_generate(rc: RunConfig) -> int:
    o = rc.options
    spec = FamilySpec(family=o["family"], n=o["n"], count=o["count"], seed=o["seed"],
                      first_index=o["first_index"], blocks=o["blocks"], extra_edges=o["extra_edges"],
                      perturbation=o["perturbation"])
    target, paths = write_family(rc.path("out"), spec)
    rc.write(target)
    print(f"Wrote {len(paths)} instances and manifest.json to {target}")
    return EXIT_OK


def cmd_solve(rc: RunConfig) -> int:
    q = load_instance(rc.path("instance"))
    partition = PartitionMatrix.load(rc.path("partition")) if rc.path("partition") else None
    policy = make_policy(rc.options["policy"], rc.options["delta"], partition, _ascent_config(rc))
    result = solve_global(q, policy, _solve_config(rc), instance_id=q.name)
    out = rc.path("csv")
    if out is not None:
        write_results_csv([result.metrics], out)
        rc.write(out.parent)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=list(result.metrics.to_dict()))
        writer.writeheader()
        writer.writerow(result.metrics.to_dict())
    return EXIT_TIME_LIMIT if result.metrics.status == "time_limit" else EXIT_OK


def cmd_sp(rc: RunConfig) -> int:
    path = rc.path("instance")
    q = load_instance(path)
    unit, _ = normalize_to_unit_box(q)
    result = run_strong_partition(unit, rc.options["points"], cfg=_ascent_config(rc))
    out = rc.path("out") or path.with_name(path.stem + ".partition.json")
    partition_path, sidecar = save_sp_result(result, out)
    rc.write(partition_path.parent)
    if rc.path("db") is not None:
        ResultsDatabase(rc.path("db")).add_sp_run(q.name, result.value, result.evals, result.wall_s)
    print(f"v(P0)={result.start_value:.10g} v(P*)={result.value:.10g} evals={result.evals}")
    print(f"Wrote {partition_path} and {sidecar}")
    return EXIT_OK


def cmd_train_ml(rc: RunConfig) -> int:
    """Out-of-sample predictions for every instance with a target partition"""
    o = rc.options
    targets_dir = rc.path("targets")
    samples = []
    for path in _instance_files(rc.path("instances")):
        target_path = targets_dir / f"{path.stem}.json"
        if not target_path.exists():
            logger.warning(f"No target partition for {path.name}; skipped")
            continue
        q = load_instance(path)
        features = extract_features(q, seed=o["seed"]).to_array()
        samples.append(Sample(path.stem, features, PartitionMatrix.load(target_path)))
    if not samples:
        raise FileNotFoundError(f"no instance in {rc.path('instances')} has a target in {targets_dir}")

    cfg = MlConfig(folds=min(o["folds"], len(samples)), weak_learners=o["weak_learners"],
                   max_depth=o["max_depth"], seed=o["seed"])
    predictions = kfold_policy(samples, cfg)
    out = rc.path("out")
    out.mkdir(parents=True, exist_ok=True)
    for inst, P in predictions.items():
        P.save(out / f"{inst}.json")
    errors = scaled_errors(predictions, {s.instance_id: s.target for s in samples})
    write_mae_csv(errors, out / "mae.csv")
    rc.write(out)
    mae = scaled_mae(errors)
    share = sum(1 for v in mae.values() if v < 0.2) / len(mae) if mae else 1.0
    print(f"Predicted {len(predictions)} partitions with {cfg.folds} folds; "
          f"{100.0 * share:.1f}% of points have scaled MAE < 0.2")
    return EXIT_OK


def _bench_task(task) -> Dict:
    """Runs in a worker process: one instance under one policy"""
    path, policy_name, cfg_dict, partition_path, ascent_dict = task
    q = load_instance(path)
    partition = PartitionMatrix.load(partition_path) if partition_path else None
    policy = make_policy(policy_name, cfg_dict["delta"], partition, AscentConfig(**ascent_dict))
    result = solve_global(q, policy, SolveConfig(**cfg_dict), instance_id=q.name)
    return result.metrics.to_dict()


def cmd_bench(rc: RunConfig) -> int:
    o = rc.options
    policies = [p.strip() for p in o["policies"].split(",") if p.strip()]
    unknown = [p for p in policies if p not in POLICIES]
    if unknown:
        raise ValueError(f"unknown policies: {unknown}")
    predictions = rc.path("predictions")
    if "ml" in policies and predictions is None:
        raise ValueError("the ml policy needs --predictions")

    cfg = asdict(_solve_config(rc))
    ascent = asdict(_ascent_config(rc))
    tasks = []
    for path in _instance_files(rc.path("instances")):
        for policy in policies:
            part = str(predictions / f"{path.stem}.json") if policy == "ml" else None
            tasks.append((str(path), policy, cfg, part, ascent))

    if o["workers"] > 1:
        with ProcessPoolExecutor(max_workers=o["workers"]) as pool:
            records = list(pool.map(_bench_task, tasks))
    else:
        records = [_bench_task(t) for t in tasks]

    db = ResultsDatabase(rc.path("db") or RESULTS_DB_PATH)
    for record in records:
        db.add_result(record)
    out = write_results_csv(records, rc.path("csv"))
    rc.write(out.parent)
    solved = sum(1 for r in records if r["status"] == "optimal")
    print(f"Benchmarked {len(tasks)} runs ({solved} optimal); results in {out}")
    return EXIT_OK


def _fmt(v, spec=".4g") -> str:
    return "-" if v is None else format(v, spec)


def cmd_report(rc: RunConfig) -> int:
    rows = read_results_csv(rc.path("csv"))
    summary = summarize(rows, baseline=rc.options["baseline"])
    print(f"{'policy':<10} {'n':>4} {'solved':>6} {'sgm_time':>10} {'median':>10} {'min':>10} {'max':>10} "
          f"{'closed@1%':>10}")
    for policy, s in summary["policies"].items():
        print(f"{policy:<10} {s['instances']:>4} {s['solved']:>6} {s['shifted_gm_time']:>10.4f} "
              f"{s['median_time']:>10.4f} {s['min_time']:>10.4f} {s['max_time']:>10.4f} "
              f"{_fmt(s['pct_gap_closed_iter1'], '.1f'):>10}")
    for policy, buckets in summary["speedups"].items():
        print(f"{policy} vs {rc.options['baseline']}: " + ", ".join(f"{k}: {v}" for k, v in buckets.items()))

    if rc.path("summary") is not None:
        rc.path("summary").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if rc.path("gap_ratios") is not None:
        with open(rc.path("gap_ratios"), "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["instance_id", "policy", "ratio"])
            writer.writeheader()
            writer.writerows(summary["gap_ratios"])
    return EXIT_OK


def example_one_curve(step: float = 0.05) -> List[Dict]:
    """Relaxation value of the one-variable example at every single-point partition p"""
    q = example_one()
    rows = []
    for p in np.round(np.arange(0.0, 1.0 + 1e-12, step), 10):
        v = value(q, PartitionMatrix(np.array([[0.0, p, 1.0]]), (0,)))[0]
        closed = (0.16 + p) / (1.0 + p) if p <= 0.4 else 0.16 / p
        rows.append({"p": float(p), "value": v, "closed_form": closed})
    return rows


def cmd_demo_example1(rc: RunConfig) -> int:
    print(f"{'p':>6} {'v(p)':>12} {'closed form':>12}")
    for row in example_one_curve(rc.options["step"]):
        print(f"{row['p']:>6.2f} {row['value']:>12.8f} {row['closed_form']:>12.8f}")
    return EXIT_OK


# Parser

def _solver_args(p: argparse.ArgumentParser):
    p.add_argument("--points", type=int, default=DEFAULT_POINTS, help="partition points per variable (d)")
    p.add_argument("--rel-gap", type=float, default=REL_GAP)
    p.add_argument("--abs-gap", type=float, default=ABS_GAP)
    p.add_argument("--time-limit", type=float, default=TIME_LIMIT)
    p.add_argument("--delta", type=float, default=ALPINE_DELTA, help="refinement scaling")
    p.add_argument("--seed", type=int, default=0)
    _ascent_args(p)


def _ascent_args(p: argparse.ArgumentParser):
    p.add_argument("--ascent-iterations", type=int, default=ASCENT_MAX_ITER)
    p.add_argument("--ascent-evals", type=int, default=ASCENT_MAX_EVALS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcqp-partition", description=f"{APP_NAME} {APP_VERSION}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a family of random instances")
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--first-index", type=int, default=0)
    p.add_argument("--blocks", type=int, default=POOLING_BLOCKS)
    p.add_argument("--extra-edges", type=int, default=POOLING_EXTRA_EDGES)
    p.add_argument("--perturbation", type=float, default=POOLING_PERTURBATION)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="solve one instance to global optimality")
    p.add_argument("--instance", required=True)
    p.add_argument("--policy", choices=POLICIES, default="default")
    p.add_argument("--partition", help="first partition for the ml policy")
    p.add_argument("--csv", help="results CSV (stdout when omitted)")
    _solver_args(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sp", help="strong partitioning target for one instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--points", type=int, default=DEFAULT_POINTS)
    p.add_argument("--out", help="partition JSON (default: next to the instance)")
    p.add_argument("--db", help="results database for the run record")
    _ascent_args(p)
    p.set_defaults(func=cmd_sp)

    p = sub.add_parser("train-ml", help="K-fold imitation of strong partitioning")
    p.add_argument("--instances", required=True)
    p.add_argument("--targets", required=True, help="directory of target partitions named like the instances")
    p.add_argument("--out", required=True)
    p.add_argument("--folds", type=int, default=ML_FOLDS)
    p.add_argument("--weak-learners", type=int, default=ML_WEAK_LEARNERS)
    p.add_argument("--max-depth", type=int, default=ML_MAX_DEPTH)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_ml)

    p = sub.add_parser("bench", help="solve every instance under every policy")
    p.add_argument("--instances", required=True)
    p.add_argument("--policies", default="default,sp")
    p.add_argument("--predictions", help="predicted partitions for the ml policy")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--csv", required=True)
    p.add_argument("--db", help=f"results database (default {RESULTS_DB_PATH})")
    _solver_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="summary statistics of a results CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--baseline", default="default")
    p.add_argument("--summary", help="write the summary as JSON")
    p.add_argument("--gap-ratios", help="write per-instance gap ratios as CSV")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("demo-example1", help="print the one-variable value-function curve")
    p.add_argument("--step", type=float, default=0.05)
    p.set_defaults(func=cmd_demo_example1)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(RunConfig.from_args(args))

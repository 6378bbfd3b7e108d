#!/usr/bin/env python3
"""
Tests for the command-line surface and exit codes
"""

import sys
import os
import csv
import json
import tempfile
from pathlib import Path

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from cli import RunConfig, build_parser, example_one_curve, run
from database import ResultsDatabase
from driver import MetricsRecord, write_results_csv
from main import main as app_main
from model import Qcqp, example_one, load_instance, nonconvex_indices, save_instance
from relax import PartitionMatrix


def test_generate_and_run_config():
    print("Testing generate...")
    with tempfile.TemporaryDirectory() as tmp:
        assert run(["generate", "--family", "qcqp", "--n", "4", "--count", "3", "--first-index", "5",
                    "--seed", "2", "--out", tmp]) == 0
        target = Path(tmp) / "qcqp_4"
        names = sorted(p.name for p in target.iterdir())
        config = json.loads((target / "run_config.json").read_text())
    assert names == ["inst_005.json", "inst_006.json", "inst_007.json", "manifest.json", "run_config.json"]
    assert config["subcommand"] == "generate" and config["options"]["count"] == 3
    assert config["paths"]["out"] == str(Path(tmp).resolve()) and "version" in config

    args = build_parser().parse_args(["report", "--csv", "r.csv"])
    rc = RunConfig.from_args(args)
    assert rc.path("csv").is_absolute() and rc.options["baseline"] == "default"
    print("Generate tests completed successfully!")


def test_solve_and_sp():
    print("Testing solve and sp...")
    with tempfile.TemporaryDirectory() as tmp:
        inst = save_instance(example_one(), os.path.join(tmp, "example_one.json"))
        out_csv = os.path.join(tmp, "solve.csv")
        assert run(["solve", "--instance", str(inst), "--points", "1", "--csv", out_csv]) == 0
        with open(out_csv, newline="") as f:
            (row,) = list(csv.DictReader(f))
        assert row["instance_id"] == "example_one" and row["status"] == "optimal"
        assert abs(float(row["ubd"]) - 0.4) < 1e-5

        db_path = os.path.join(tmp, "r.db")
        assert run(["sp", "--instance", str(inst), "--points", "1", "--db", db_path]) == 0
        partition = PartitionMatrix.load(os.path.join(tmp, "example_one.partition.json"))
        assert abs(partition.rows[0, 1] - 0.4) < 1e-3
        assert os.path.exists(os.path.join(tmp, "example_one.partition.sidecar.json"))
        runs = ResultsDatabase(db_path).get_sp_runs()
        assert len(runs) == 1 and runs[0]["instance_id"] == "example_one"
    print("Solve and sp tests completed successfully!")


def test_train_ml():
    print("Testing train-ml...")
    with tempfile.TemporaryDirectory() as tmp:
        assert run(["generate", "--family", "bilinear", "--n", "3", "--count", "2", "--seed", "7",
                    "--out", tmp]) == 0
        inst_dir = Path(tmp) / "bilinear_3"
        targets = Path(tmp) / "targets"
        for path in sorted(inst_dir.glob("inst_*.json")):
            nc = nonconvex_indices(load_instance(path))
            PartitionMatrix(np.tile([0.0, 0.25, 0.5, 1.0], (len(nc), 1)), nc).save(targets / f"{path.stem}.json")
        out = Path(tmp) / "predictions"
        assert run(["train-ml", "--instances", str(inst_dir), "--targets", str(targets), "--out", str(out),
                    "--folds", "2", "--weak-learners", "3"]) == 0
        predicted = PartitionMatrix.load(out / "inst_000.json")
        with open(out / "mae.csv", newline="") as f:
            errors = list(csv.DictReader(f))
    assert np.allclose(predicted.rows[0], [0.0, 0.25, 0.5, 1.0])
    assert errors and all(float(e["abs_error"]) < 1e-12 for e in errors)
    print("train-ml tests completed successfully!")


def test_report_and_demo():
    print("Testing report and demo-example1...")
    with tempfile.TemporaryDirectory() as tmp:
        csv_path = write_results_csv([
            MetricsRecord("a", "default", "optimal", 0.0, 1, 0.0, 0.0, 1e-4, 0.0),
            MetricsRecord("b", "default", "optimal", 90.0, 3, 0.0, 0.0, 0.2, 0.0),
        ], os.path.join(tmp, "results.csv"))
        summary_path = os.path.join(tmp, "summary.json")
        ratios_path = os.path.join(tmp, "ratios.csv")
        assert run(["report", "--csv", str(csv_path), "--summary", summary_path, "--gap-ratios", ratios_path]) == 0
        summary = json.loads(Path(summary_path).read_text())
        assert os.path.exists(ratios_path)
    stats = summary["policies"]["default"]
    assert abs(stats["shifted_gm_time"] - 21.6228) < 1e-4
    assert stats["pct_gap_closed_iter1"] == 50.0

    assert run(["demo-example1", "--step", "0.5"]) == 0
    rows = example_one_curve(0.1)
    assert len(rows) == 11 and rows[4]["p"] == 0.4
    assert abs(rows[4]["value"] - 0.4) < 1e-8
    print("Report tests completed successfully!")


def test_exit_codes():
    print("Testing exit codes...")
    with tempfile.TemporaryDirectory() as tmp:
        assert app_main(["solve", "--instance", os.path.join(tmp, "missing.json")]) == 2
        assert app_main(["bench", "--instances", tmp, "--policies", "greedy",
                         "--csv", os.path.join(tmp, "r.csv")]) == 2
        infeasible = Qcqp.build(2, Q0=[[0, 1, 0.5], [1, 0, 0.5]],
                                constraints=[(None, [-1.0, 0.0], "le", -2.0)], name="infeasible")
        path = save_instance(infeasible, os.path.join(tmp, "infeasible.json"))
        assert app_main(["solve", "--instance", str(path)]) == 3
    print("Exit code tests completed successfully!")


def main():
    """Run all tests"""
    print("=== Command-line Test Suite ===\n")
    try:
        test_generate_and_run_config()
        test_solve_and_sp()
        test_train_ml()
        test_report_and_demo()
        test_exit_codes()
        print("\nAll command-line tests passed! ✓")
    except Exception as e:
        print(f"Test failed: {e}")
        import traceback
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

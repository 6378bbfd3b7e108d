#!/usr/bin/env python3
"""
Acceptance validation for the QCQP Partition Optimizer
Measures the quick acceptance checks and lists the benchmark-scale ones
"""

import sys
import os
import tempfile
import time

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np


def check_value_curve():
    """Relaxation value of the one-variable example against its closed form"""
    from cli import example_one_curve
    started = time.perf_counter()
    rows = example_one_curve(0.05)
    worst = max(abs(r["value"] - r["closed_form"]) for r in rows)
    elapsed = time.perf_counter() - started
    return worst <= 1e-6 and elapsed < 5.0, f"max error {worst:.2e} over {len(rows)} points in {elapsed:.2f}s"


def check_sp_closes_example():
    from driver import SolveConfig, solve_global
    from model import example_one
    from policies import StrongPartitionPolicy, run_strong_partition
    q = example_one()
    p_star = run_strong_partition(q, 1).partition.rows[0, -2]
    result = solve_global(q, StrongPartitionPolicy(), SolveConfig(points=1))
    ok = abs(p_star - 0.4) <= 1e-3 and result.metrics.iterations == 1 and result.metrics.status == "optimal"
    return ok, f"p* = {p_star:.6f}, {result.metrics.iterations} iteration(s), status {result.metrics.status}"


def check_milp_oracle(count: int = 5):
    from instances import FamilySpec, gen_bilinear
    from milp import enumerate_solve, solve_milp
    from model import nonconvex_indices
    from relax import PartitionMatrix, build_pmr_oa
    worst = 0.0
    rng = np.random.default_rng(0)
    for q, _ in gen_bilinear(FamilySpec("bilinear", n=3, count=count, seed=11)):
        nc = nonconvex_indices(q)
        P = PartitionMatrix.from_rows([[0.0, *np.sort(rng.uniform(0, 1, 2)), 1.0] for _ in nc], nc)
        model = build_pmr_oa(q, P)
        a, b = solve_milp(model, rel_gap=1e-12, abs_gap=1e-12), enumerate_solve(model)
        if a.x is None or b.x is None:
            if (a.x is None) != (b.x is None):
                return False, "feasibility disagreement"
            continue
        worst = max(worst, abs(a.objective - b.objective))
    return worst <= 1e-8, f"max |branch and bound - enumeration| = {worst:.2e} over {count} models"


def check_metrics():
    from driver import effective_gap, shifted_geometric_mean, tle_gap
    ok = (abs(shifted_geometric_mean([0.0])) < 1e-12
          and abs(shifted_geometric_mean([90.0, 90.0]) - 90.0) < 1e-9
          and abs(effective_gap(1.0, 1.0) - 1e-4) < 1e-15
          and abs(tle_gap(1.0, 0.9) - 0.0999999) < 1e-9)
    return ok, "shifted GM, effective gap and TLE gap arithmetic"


def check_determinism():
    from instances import FamilySpec, write_family
    spec = FamilySpec("bilinear", n=5, count=3, seed=7)
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        dir_a, paths_a = write_family(a, spec)
        dir_b, paths_b = write_family(b, spec)
        same = all(pa.read_bytes() == pb.read_bytes() for pa, pb in zip(paths_a, paths_b))
        same = same and (dir_a / "manifest.json").read_bytes() == (dir_b / "manifest.json").read_bytes()
    return same, "generated instances and manifest are byte-identical across runs"


def check_requirements():
    """Measure the acceptance checks that run in seconds"""
    print("=== Acceptance Validation ===\n")
    checks = [
        ("Value-function curve of the one-variable example", check_value_curve),
        ("Strong partitioning closes the one-variable example", check_sp_closes_example),
        ("Branch and bound agrees with enumeration", check_milp_oracle),
        ("Metric arithmetic", check_metrics),
        ("Deterministic generation", check_determinism),
    ]
    passed = 0
    for name, check in checks:
        try:
            ok, detail = check()
        except Exception as e:
            ok, detail = False, f"{type(e).__name__}: {e}"
        print(f"  {'✅' if ok else '❌'} {name}: {detail}")
        passed += ok
    print(f"\n{passed}/{len(checks)} checks passed\n")
    return passed == len(checks)


def check_features():
    """Checks that need benchmark runs"""
    print("=== Benchmark-scale Checks ===\n")
    items = [
        "📈 Gradient fidelity against central differences: sensitivity_test.py",
        "📐 Bound sandwich and refinement monotonicity: relax_test.py",
        "⚙️  End-to-end convergence on n = 10 bilinear: main.py bench --policies default (reduced scale: benchmark_test.py)",
        "🎯 First-iteration gap closure with two SP points: main.py bench --policies sp --points 2 (reduced scale: benchmark_test.py)",
        "🧭 Policy ordering sp <= ml <= default: main.py report --csv results.csv",
        "🤖 Imitation quality (scaled MAE): main.py train-ml, then mae.csv",
    ]
    for item in items:
        print(f"  {item}")
    print()


def check_files():
    """Check all necessary files are present"""
    print("=== File Structure Validation ===\n")
    required_files = [
        ("main.py", "Command-line entry point"),
        ("cli.py", "Subcommands"),
        ("config.py", "Application configuration"),
        ("model.py", "Instances and evaluation"),
        ("linsolve.py", "LP engine"),
        ("milp.py", "Branch and bound"),
        ("relax.py", "Piecewise relaxations"),
        ("sensitivity.py", "Value function gradients"),
        ("nsmax.py", "Nonsmooth ascent"),
        ("policies.py", "Partitioning policies"),
        ("ml.py", "Imitation learning"),
        ("driver.py", "Global solve loop and metrics"),
        ("instances.py", "Instance generators"),
        ("database.py", "Results database"),
        ("test.py", "Basic test suite"),
        ("comprehensive_test.py", "Comprehensive tests"),
        ("model_test.py", "Model tests"),
        ("linsolve_test.py", "LP engine tests"),
        ("milp_test.py", "Branch and bound tests"),
        ("relax_test.py", "Relaxation tests"),
        ("sensitivity_test.py", "Gradient tests"),
        ("nsmax_test.py", "Ascent tests"),
        ("policies_test.py", "Policy tests"),
        ("ml_test.py", "Learning tests"),
        ("driver_test.py", "Solve loop tests"),
        ("instances_test.py", "Generator tests"),
        ("database_test.py", "Database tests"),
        ("cli_test.py", "Command-line tests"),
        ("benchmark_test.py", "Reduced-scale benchmark tests"),
        ("demo.py", "Demonstration"),
        ("README.md", "Documentation"),
        ("requirements.txt", "Dependencies"),
    ]
    base = os.path.dirname(os.path.abspath(__file__))
    all_present = True
    for filename, description in required_files:
        if os.path.exists(os.path.join(base, filename)):
            print(f"  ✅ {filename} - {description}")
        else:
            print(f"  ❌ {filename} - {description} (MISSING)")
            all_present = False
    print()
    return all_present


def check_python_compatibility():
    """Check Python version and library availability"""
    print("=== Python Compatibility Validation ===\n")
    version = sys.version_info
    print(f"Python version: {version.major}.{version.minor}.{version.micro}")
    if version < (3, 8):
        print("❌ Python version too old (requires 3.8+)")
        return False

    all_available = True
    for module_name, description in [("numpy", "Arrays and Philox generator"), ("scipy", "Sparse LU and local NLP"),
                                     ("sqlite3", "Results database")]:
        try:
            __import__(module_name)
            print(f"  ✅ {module_name} - {description}")
        except ImportError:
            print(f"  ❌ {module_name} - {description} (NOT AVAILABLE)")
            all_available = False
    print()
    return all_available


def main():
    """Run final validation"""
    print("=== QCQP Partition Optimizer - Validation ===\n")
    success = check_files() and check_python_compatibility()
    if success:
        success = check_requirements()
    check_features()
    if success:
        print("🎉 VALIDATION SUCCESSFUL! 🎉")
        return 0
    print("❌ VALIDATION FAILED!")
    return 1


if __name__ == "__main__":
    sys.exit(main())

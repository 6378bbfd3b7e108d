#!/usr/bin/env python3
"""
Reduced-scale benchmark checks: default-policy convergence, first-iteration gap
closure by strong partitioning, policy ordering and imitation quality.
The full-scale runs go through `main.py bench` and `main.py report`.
"""

import sys
import os

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from config import GAP_FLOOR
from driver import SolveConfig, solve_global
from instances import FamilySpec, gen_bilinear
from ml import MlConfig, Sample, extract_features, kfold_policy, scaled_errors, scaled_mae
from nsmax import AscentConfig
from policies import AlpinePolicy, FixedFirstPolicy, StrongPartitionPolicy

BATCH = FamilySpec("bilinear", n=3, count=5, seed=11)
ASCENT = AscentConfig(max_iterations=25, max_subgradient_evals=25)
FIRST_ONLY = SolveConfig(points=2, max_iterations=1, time_limit=120.0)

_cache = {}


def _batch():
    if "instances" not in _cache:
        _cache["instances"] = gen_bilinear(BATCH)
    return _cache["instances"]


def _default_runs():
    if "default" not in _cache:
        _cache["default"] = [solve_global(q, AlpinePolicy(), SolveConfig(points=2, time_limit=120.0))
                             for q, _ in _batch()]
    return _cache["default"]


def _solved():
    """(instance, optimal value, default eff. gap) for every instance the default policy closed"""
    return [(q, r.ubd, r.metrics.eff_gap_iter1) for (q, _), r in zip(_batch(), _default_runs())
            if r.metrics.status == "optimal"]


def _sp_runs():
    if "sp" not in _cache:
        runs = []
        for q, v_star, _ in _solved():
            policy = StrongPartitionPolicy(ascent=ASCENT)
            result = solve_global(q, policy, FIRST_ONLY, v_star=v_star)
            runs.append((q, v_star, result.metrics.eff_gap_iter1, policy.last_result.partition))
        _cache["sp"] = runs
    return _cache["sp"]


def test_default_convergence():
    print("Testing default-policy convergence...")
    runs = _default_runs()
    for (q, _), r in zip(_batch(), runs):
        m = r.metrics
        print(f"  {q.name}: {m.status} in {m.iterations} iterations, {m.time_s:.1f}s")
        assert m.lbd <= m.ubd
    solved = sum(1 for r in runs if r.metrics.status == "optimal")
    assert solved >= 4, f"only {solved} of {len(runs)} converged"
    print("Convergence tests completed successfully!")


def test_sp_first_iteration_closure():
    print("Testing first-iteration gap closure with strong partitioning...")
    runs = _sp_runs()
    closed = 0
    for q, v_star, gap, _ in runs:
        print(f"  {q.name}: v* {v_star:.8f}, effective gap {gap:.3e}")
        closed += int(gap <= GAP_FLOOR * (1.0 + 1e-9))
    assert runs and closed / len(runs) >= 0.6, f"{closed} of {len(runs)} closed"
    print("Gap closure tests completed successfully!")


def test_policy_ordering_and_imitation():
    print("Testing policy ordering and imitation quality...")
    sp_runs = _sp_runs()
    samples = [Sample(q.name, extract_features(q).to_array(), target) for q, _, _, target in sp_runs]
    predictions = kfold_policy(samples, MlConfig(folds=len(samples), weak_learners=30, max_depth=4))

    mae = scaled_mae(scaled_errors(predictions, {s.instance_id: s.target for s in samples}))
    share = sum(1 for v in mae.values() if v < 0.2) / len(mae)
    print(f"  {100.0 * share:.0f}% of points with scaled MAE < 0.2")
    # a handful of training instances only; the full criterion runs at benchmark scale
    assert float(np.mean(list(mae.values()))) < 0.5

    ml_gaps = []
    for q, v_star, _, _ in sp_runs:
        result = solve_global(q, FixedFirstPolicy(predictions[q.name]), FIRST_ONLY, v_star=v_star)
        ml_gaps.append(result.metrics.eff_gap_iter1)
    sp_median = float(np.median([gap for _, _, gap, _ in sp_runs]))
    ml_median = float(np.median(ml_gaps))
    default_median = float(np.median([gap for _, _, gap in _solved()]))
    print(f"  median effective gap: sp {sp_median:.3e}, ml {ml_median:.3e}, default {default_median:.3e}")
    assert sp_median <= default_median + 1e-12
    assert all(g is not None and g >= 0.0 for g in ml_gaps)
    print("Ordering tests completed successfully!")


def main():
    """Run all tests"""
    print("=== Benchmark Test Suite ===\n")
    try:
        test_default_convergence()
        test_sp_first_iteration_closure()
        test_policy_ordering_and_imitation()
        print("\nAll benchmark tests passed! ✓")
    except Exception as e:
        print(f"Test failed: {e}")
        import traceback
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""
Tests for local search, the global loop and the benchmark metrics
"""

import sys
import os
import math
import tempfile

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from driver import (MetricsRecord, SolveConfig, default_starts, effective_gap, local_search, read_results_csv,
                    shifted_geometric_mean, solve_global, summarize, tle_gap, write_results_csv)
from model import InfeasibleError, Qcqp, check_feasible, example_one
from policies import AlpinePolicy, UniformPolicy


def _convex_instance():
    """min x0^2 + x1^2 - x0 - x1  s.t.  x0 + x1 >= 1.2 on the unit box; optimum (0.6, 0.6), value -0.48"""
    return Qcqp.build(2, Q0=[[0, 0, 1.0], [1, 1, 1.0]], r0=[-1.0, -1.0],
                      constraints=[(None, [-1.0, -1.0], "le", -1.2)], name="convex")


def _record(inst, policy, time_s, status="optimal", gap=None, tle=0.0):
    return MetricsRecord(inst, policy, status, time_s, 1, 0.0, 0.0, gap, tle)


def test_metrics():
    print("Testing metric arithmetic...")
    assert abs(shifted_geometric_mean([0.0, 90.0]) - 21.6227766) < 1e-6
    assert abs(shifted_geometric_mean([5.0, 5.0, 5.0]) - 5.0) < 1e-9
    for bad in ([], [-1.0]):
        try:
            shifted_geometric_mean(bad)
            raise AssertionError("bad times accepted")
        except ValueError:
            pass
    assert effective_gap(1.0, 1.0) == 1e-4
    assert abs(effective_gap(1.0, 0.5) - 0.5 / (1.0 + 1e-6)) < 1e-12
    assert abs(effective_gap(-2.0, -3.0) - 1.0 / (2.0 + 1e-6)) < 1e-12
    assert abs(tle_gap(10.0, 9.0) - 1.0 / (10.0 + 1e-6)) < 1e-12
    for kwargs in ({"rel_gap": 0.0}, {"points": 0}):
        try:
            SolveConfig(**kwargs)
            raise AssertionError(f"{kwargs} accepted")
        except ValueError:
            pass
    print("Metric tests completed successfully!")


def test_local_search():
    print("Testing local search...")
    q = _convex_instance()
    starts = default_starts(q, 4, seed=0)
    assert len(starts) == 4 and np.allclose(starts[0], [1.0, 1.0]) and np.allclose(starts[1], [0.5, 0.5])
    assert np.allclose(default_starts(q, 4, seed=0)[3], starts[3])
    x, val = local_search(q, starts)
    print(f"  x = {x}, objective {val:.8f}")
    assert check_feasible(q, x, 1e-6)[0]
    assert abs(val + 0.48) < 1e-6 and np.allclose(x, [0.6, 0.6], atol=1e-4)

    # active nonconvex constraint: x^2 >= 0.16 from above
    one = example_one()
    for s in (1.0, 0.7, 0.4):
        found = local_search(one, [np.array([s])])
        assert found is not None, f"no point from {s}"
        print(f"  example from {s}: x = {found[0][0]:.8f}")
        assert abs(found[0][0] - 0.4) < 1e-6 and abs(found[1] - 0.4) < 1e-6

    impossible = Qcqp.build(1, r0=[1.0], constraints=[(None, [-1.0], "le", -2.0)])
    assert local_search(impossible, [np.array([0.5])]) is None
    try:
        local_search(q, [])
        raise AssertionError("empty start list accepted")
    except ValueError:
        pass
    print("Local search tests completed successfully!")


def test_solve_global():
    print("Testing the global loop on a convex instance...")
    q = _convex_instance()
    for policy in (AlpinePolicy(), UniformPolicy()):
        result = solve_global(q, policy, SolveConfig(points=1))
        m = result.metrics
        print(f"  {m.policy}: {m.status} after {m.iterations} iteration(s), LBD {m.lbd:.8f} UBD {m.ubd:.8f}")
        assert m.status == "optimal" and m.instance_id == "convex"
        assert abs(result.ubd + 0.48) < 1e-6
        assert result.lbd <= result.ubd and m.lbd <= m.ubd
        assert all(e["lbd"] <= e["ubd"] for e in result.iteration_log)
        assert np.allclose(result.x, [0.6, 0.6], atol=1e-4)
        assert m.eff_gap_iter1 is not None and m.eff_gap_iter1 >= 1e-4
        assert [e["iteration"] for e in result.iteration_log] == list(range(1, m.iterations + 1))

    infeasible = Qcqp.build(2, Q0=[[0, 1, 0.5], [1, 0, 0.5]],
                            constraints=[(None, [-1.0, 0.0], "le", -2.0)])
    try:
        solve_global(infeasible, AlpinePolicy())
        raise AssertionError("infeasible instance solved")
    except InfeasibleError as e:
        assert e.certificate
    print("Global loop tests completed successfully!")


def test_summary_and_csv():
    print("Testing summaries and result files...")
    records = [
        _record("a", "default", 20.0, gap=0.1), _record("a", "sp", 2.0, gap=1e-4),
        _record("b", "default", 10.0, gap=0.2), _record("b", "sp", 20.0, gap=0.1),
        _record("c", "default", 7200.0, status="time_limit", gap=None, tle=0.05),
    ]
    summary = summarize(records)
    default, sp = summary["policies"]["default"], summary["policies"]["sp"]
    assert default["instances"] == 3 and default["solved"] == 2
    assert abs(default["gm_tle_gap"] - (0.05 + 1e-6)) < 1e-12
    assert sp["pct_gap_closed_iter1"] == 50.0 and default["pct_gap_closed_iter1"] == 0.0
    assert summary["speedups"]["sp"] == {">=10x": 1, "5-10x": 0, "2-5x": 0, "1-2x": 0, "slower": 1}
    ratios = {r["instance_id"]: r["ratio"] for r in summary["gap_ratios"]}
    assert abs(ratios["a"] - 1e-3) < 1e-12 and abs(ratios["b"] - 0.5) < 1e-12

    with tempfile.TemporaryDirectory() as tmp:
        path = write_results_csv(list(reversed(records)), os.path.join(tmp, "out", "results.csv"))
        header = path.read_text().splitlines()[0]
        rows = read_results_csv(path)
    assert header == "instance_id,policy,status,time_s,iterations,lbd,ubd,eff_gap_iter1,tle_gap"
    assert [(r["instance_id"], r["policy"]) for r in rows] == [("a", "default"), ("a", "sp"), ("b", "default"),
                                                              ("b", "sp"), ("c", "default")]
    assert rows[-1]["eff_gap_iter1"] is None and rows[-1]["status"] == "time_limit"
    assert math.isclose(rows[0]["time_s"], 20.0)
    print("Summary tests completed successfully!")


def main():
    """Run all tests"""
    print("=== Driver Test Suite ===\n")
    try:
        test_metrics()
        test_local_search()
        test_solve_global()
        test_summary_and_csv()
        print("\nAll driver tests passed! ✓")
    except Exception as e:
        print(f"Test failed: {e}")
        import traceback
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

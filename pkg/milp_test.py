#!/usr/bin/env python3
"""
Tests for branch and bound over indicator groups, checked against enumeration
"""

import sys
import os

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import scipy.sparse as sp

from instances import FamilySpec, gen_bilinear
from linsolve import StandardFormLp, solve_lp
from milp import MilpModel, add_no_good_cut, enumerate_solve, fix_binaries, solve_milp
from model import LimitExceededError, nonconvex_indices
from relax import PartitionMatrix, build_pmr_oa

TIGHT = {"rel_gap": 1e-12, "abs_gap": 1e-12}


def _choice_model():
    """Pick one of three items (costs 3, 1, 2) with a continuous top-up z that must cover 2 - value"""
    # columns: y0 y1 y2 z s ; rows: y0+y1+y2 = 1 ; 2*y0 + 0*y1 + 1*y2 + z - s = 2
    A = sp.csc_matrix(np.array([[1.0, 1.0, 1.0, 0.0, 0.0],
                                [2.0, 0.0, 1.0, 1.0, -1.0]]))
    lp = StandardFormLp.build([3.0, 1.0, 2.0, 1.5, 0.0], A, [1.0, 2.0], ub=[1.0, 1.0, 1.0, 5.0, np.inf],
                              row_block=["Mbar", "M"], row_kind=["sos", "cover"])
    return MilpModel(lp, ((0, 1, 2),))


def test_small_model():
    print("Testing a hand-sized model...")
    m = _choice_model()
    sol = solve_milp(m, **TIGHT)
    # y0: 3 ; y1: 1 + 2*1.5 = 4 ; y2: 2 + 1.5 = 3.5
    print(f"  objective {sol.objective}, selection {sol.y}")
    assert sol.optimal and sol.y == (0,) and abs(sol.objective - 3.0) < 1e-9
    assert sol.y_columns(m) == [0]
    ref = enumerate_solve(m)
    assert ref.y == (0,) and abs(ref.second_best_objective - 3.5) < 1e-9

    pinned = solve_lp(fix_binaries(m, (1,)))
    assert abs(pinned.objective - 4.0) < 1e-9

    cut = solve_milp(add_no_good_cut(m, sol.y), **TIGHT)
    assert cut.y == (2,) and abs(cut.objective - 3.5) < 1e-9
    print("Small model tests completed successfully!")


def _split_model():
    """Two items that both cost nothing; the top-up z must cover 1 - 2*y for each item"""
    # columns: y0 y1 z s0 s1 ; rows: y0+y1 = 1 ; 2*y0 + z - s0 = 1 ; 2*y1 + z - s1 = 1
    A = sp.csc_matrix(np.array([[1.0, 1.0, 0.0, 0.0, 0.0],
                                [2.0, 0.0, 1.0, -1.0, 0.0],
                                [0.0, 2.0, 1.0, 0.0, -1.0]]))
    lp = StandardFormLp.build([0.0, 0.0, 1.0, 0.0, 0.0], A, [1.0, 1.0, 1.0], ub=[1.0, 1.0, 5.0, np.inf, np.inf],
                              row_block=["Mbar", "M", "M"], row_kind=["sos", "cover", "cover"])
    return MilpModel(lp, ((0, 1),))


def test_fractional_root_is_branched():
    print("Testing branching from a fractional root...")
    m = _split_model()
    root = solve_lp(m.lp)
    # y0 = y1 = 0.5 needs no top-up
    assert root.optimal and abs(root.objective) < 1e-9
    for gaps in (TIGHT, {}):
        sol = solve_milp(m, **gaps)
        print(f"  objective {sol.objective}, selection {sol.y}, nodes {sol.nodes}")
        assert sol.optimal and sol.y in ((0,), (1,))
        assert abs(sol.objective - 1.0) < 1e-9
        assert sol.nodes > 1
        assert abs(sol.best_bound_trace[0]) < 1e-9
    print("Fractional root tests completed successfully!")


def test_against_enumeration():
    print("Testing branch and bound against enumeration on relaxation models...")
    rng = np.random.default_rng(21)
    worst, compared = 0.0, 0
    for q, _ in gen_bilinear(FamilySpec("bilinear", n=3, count=10, seed=2)):
        nc = nonconvex_indices(q)
        P = PartitionMatrix.from_rows([[0.0, *np.sort(rng.uniform(0, 1, 2)), 1.0] for _ in nc], nc)
        m = build_pmr_oa(q, P)
        a, b = solve_milp(m, **TIGHT), enumerate_solve(m)
        assert (a.x is None) == (b.x is None)
        if a.x is None:
            continue
        worst = max(worst, abs(a.objective - b.objective))
        assert all(x <= y + 1e-12 for x, y in zip(a.best_bound_trace, a.best_bound_trace[1:]))
        assert a.bound <= a.objective + 1e-9
        compared += 1
    print(f"  {compared} models, max difference {worst:.2e}")
    assert compared > 0 and worst <= 1e-8
    print("Enumeration comparison completed successfully!")


def test_limits():
    print("Testing limits...")
    m = _choice_model()
    try:
        enumerate_solve(m, limit=2)
        raise AssertionError("enumeration limit ignored")
    except LimitExceededError:
        pass
    try:
        solve_milp(m, rel_gap=0.0)
        raise AssertionError("zero gap accepted")
    except ValueError:
        pass
    print("Limit tests completed successfully!")


def main():
    """Run all tests"""
    print("=== MILP Test Suite ===\n")
    try:
        test_small_model()
        test_fractional_root_is_branched()
        test_against_enumeration()
        test_limits()
        print("\nAll MILP tests passed! ✓")
    except Exception as e:
        print(f"Test failed: {e}")
        import traceback
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

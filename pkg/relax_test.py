#!/usr/bin/env python3
"""
Tests for the partition matrix type and the relaxation builders
"""

import sys
import os
import tempfile

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from instances import FamilySpec, gen_bilinear
from linsolve import solve_lp
from model import DimensionError, example_one, nonconvex_indices
from relax import (OaConfig, PartitionMatrix, active_cells, build_mccormick, build_pmr, build_pmr_oa, fix_y,
                   insert_points, mccormick_bounds, partition_jacobian, pool_adjacent_violators,
                   project_to_partition_set, solve_relaxation, uniform_partition)


def _expect(error, fn, *args):
    try:
        fn(*args)
    except error:
        return
    raise AssertionError(f"{error.__name__} not raised")


def test_partition_matrix():
    print("Testing partition matrix validation...")
    _expect(ValueError, PartitionMatrix, [[0.1, 0.5, 1.0]])
    _expect(ValueError, PartitionMatrix, [[0.0, 0.7, 0.3, 1.0]])
    _expect(ValueError, PartitionMatrix, [[0.0]])
    _expect(DimensionError, PartitionMatrix, [[0.0, 1.0]], (0, 1))

    P = PartitionMatrix.from_rows([[1.0, 0.0], [0.5, 0.0, 1.0]], (2, 5))
    assert P.d == 1 and P.width == 3 and len(P) == 2
    assert np.allclose(P.rows[0], [0.0, 0.0, 1.0])
    assert P.groups(0) == [[0, 1], [2]]
    assert np.allclose(P.points(0), [0.0, 1.0]) and np.allclose(P.points(1), [0.0, 0.5, 1.0])
    assert not P.is_relative_interior()
    assert P.free_entries() == [(0, 1), (1, 1)]

    U = uniform_partition((0, 1, 2), 2)
    assert U.is_relative_interior() and np.allclose(U.rows[1], [0.0, 1 / 3, 2 / 3, 1.0])
    assert PartitionMatrix.trivial((4,)).d == 0

    with tempfile.TemporaryDirectory() as tmp:
        loaded = PartitionMatrix.load(U.save(os.path.join(tmp, "p.json")))
    assert loaded.nc == U.nc and np.array_equal(loaded.rows, U.rows)
    _expect(ValueError, PartitionMatrix.from_dict, {"d": 3, "rows": [[0.0, 0.5, 1.0]]})
    print("Partition matrix tests completed successfully!")


def test_projection():
    print("Testing isotonic projection...")
    assert np.allclose(pool_adjacent_violators([3.0, 1.0, 2.0]), [2.0, 2.0, 2.0])
    assert np.allclose(pool_adjacent_violators([1.0, 3.0, 2.0]), [1.0, 2.5, 2.5])
    assert np.allclose(pool_adjacent_violators([1.0, 3.0, 2.0], [1.0, 3.0, 1.0]), [1.0, 2.75, 2.75])
    assert pool_adjacent_violators([]).size == 0

    P = project_to_partition_set([[0.2, 0.9, 0.3, 1.5]], (0,))
    assert np.allclose(P.rows, [[0.0, 0.6, 0.6, 1.0]])
    clipped = project_to_partition_set([[0.0, -0.4, 1.7, 1.0]])
    assert np.allclose(clipped.rows, [[0.0, 0.0, 1.0, 1.0]])

    rng = np.random.default_rng(5)
    for _ in range(20):
        raw = rng.uniform(-0.5, 1.5, (3, 5))
        proj = project_to_partition_set(raw)
        assert np.all(np.diff(proj.rows, axis=1) >= 0)
        # projecting a member of the set leaves it unchanged
        assert np.allclose(project_to_partition_set(proj).rows, proj.rows)
    print("Projection tests completed successfully!")


def test_insert_and_cells():
    print("Testing point insertion and active cells...")
    P = PartitionMatrix([[0.0, 0.5, 1.0]], (0,))
    wider = insert_points(P, [[0.5, 0.25]])
    assert np.allclose(wider.rows, [[0.0, 0.25, 0.5, 1.0]])
    _expect(DimensionError, insert_points, P, [[0.1], [0.2]])

    Q = PartitionMatrix([[0.0, 0.2, 1.0]], (0,))
    assert active_cells(Q, np.array([0.1])) == (0,)
    assert active_cells(Q, np.array([0.3])) == (1,)
    assert active_cells(Q, np.array([1.0])) == (1,)
    _expect(ValueError, active_cells, PartitionMatrix([[0.0, 0.2, 1.0]]), np.array([0.1]))
    print("Insertion tests completed successfully!")


def test_envelopes():
    print("Testing McCormick envelopes...")
    env = mccormick_bounds((0.0, 1.0), (0.0, 1.0))
    lo, hi = env.interval(0.5, 0.5)
    assert abs(lo) < 1e-12 and abs(hi - 0.5) < 1e-12
    rng = np.random.default_rng(2)
    for _ in range(50):
        xi, xj = rng.uniform(-1.0, 2.0, 2)
        lo, hi = mccormick_bounds((-1.0, 2.0), (-1.0, 2.0)).interval(xi, xj)
        assert lo - 1e-12 <= xi * xj <= hi + 1e-12
    _expect(ValueError, mccormick_bounds, (1.0, 0.0), (0.0, 1.0))
    assert OaConfig.uniform(3).grid == (0.25, 0.5, 0.75)
    print("Envelope tests completed successfully!")


def test_example_one_relaxations():
    print("Testing relaxations of the one-variable example...")
    q = example_one()
    _, mc = solve_relaxation(build_mccormick(q))
    print(f"  McCormick bound {mc.objective:.6f}")
    assert abs(mc.objective - 0.16) < 1e-8

    P = PartitionMatrix([[0.0, 0.2, 1.0]], (0,))
    for build in (build_pmr_oa, build_pmr):
        model, sol = solve_relaxation(build(q, P))
        print(f"  {model.kind} at p = 0.2: {sol.objective:.6f}, cell {sol.y}")
        assert abs(sol.objective - 0.3) < 1e-8 and sol.y == (1,)

    _, right_end = solve_relaxation(build_pmr_oa(q, PartitionMatrix([[0.0, 1.0, 1.0]], (0,))))
    assert abs(right_end.objective - 0.16) < 1e-8

    _expect(DimensionError, build_pmr_oa, q, PartitionMatrix([[0.0, 1.0], [0.0, 1.0]]))
    print("Example relaxation tests completed successfully!")


def test_bilinear_collapse():
    print("Testing collapsed partitions on bilinear instances...")
    checked = 0
    for q, _ in gen_bilinear(FamilySpec("bilinear", n=3, count=4, seed=6)):
        nc = nonconvex_indices(q)
        _, mc = solve_relaxation(build_mccormick(q))
        if mc.x is None:
            continue
        collapsed = PartitionMatrix(np.tile([0.0, 0.0, 1.0], (len(nc), 1)), nc)
        _, flat = solve_relaxation(build_pmr_oa(q, collapsed), 1e-12, 1e-12)
        assert abs(flat.objective - mc.objective) < 1e-7
        P = uniform_partition(nc, 2)
        _, oa = solve_relaxation(build_pmr_oa(q, P), 1e-12, 1e-12)
        _, pmr = solve_relaxation(build_pmr(q, P), 1e-12, 1e-12)
        # no quadratic terms, so the outer approximation changes nothing
        assert abs(oa.objective - pmr.objective) < 1e-7
        checked += 1
    print(f"  {checked} instances checked")
    assert checked > 0
    print("Collapsed partition tests completed successfully!")


def test_fixed_selection():
    print("Testing fixed-selection LPs...")
    q = example_one()
    model = build_pmr_oa(q, PartitionMatrix([[0.0, 0.2, 1.0]], (0,)))
    lp = fix_y(model, (1,))
    # both indicators go, and so do the weight on point 0 and the slack of its row
    assert lp.n == model.lp.n - 4
    assert lp.m < model.lp.m
    assert not set(model.y_columns) & set(int(c) for c in lp.col_origin)
    sol = solve_lp(lp)
    assert sol.optimal and abs(sol.objective - 0.3) < 1e-8
    x_pos = list(lp.col_origin).index(model.x_cols[0])
    assert abs(sol.x[x_pos] - 0.3) < 1e-8

    # the left cell caps W at 0.2 * 0.2 < 0.16
    assert solve_lp(fix_y(model, (0,))).status == "infeasible"
    _expect(DimensionError, fix_y, model, (1, 0))
    _expect(DimensionError, fix_y, model, (2,))
    print("Fixed-selection tests completed successfully!")


def test_partition_jacobian():
    print("Testing partition derivatives of the assembled rows...")
    q = example_one()
    P = PartitionMatrix([[0.0, 0.2, 1.0]], (0,))
    model = build_pmr_oa(q, P)
    dA, db = partition_jacobian(model, 0, 1)
    h = 1e-6
    moved = build_pmr_oa(q, PartitionMatrix([[0.0, 0.2 + h, 1.0]], (0,)))
    fd_A = (moved.lp.A - model.lp.A).toarray() / h
    fd_b = (moved.lp.b - model.lp.b) / h
    assert np.allclose(dA.toarray(), fd_A, atol=1e-4)
    assert np.allclose(db, fd_b, atol=1e-4)

    pinned = build_pmr_oa(q, PartitionMatrix([[0.0, 1.0, 1.0]], (0,)))
    dA, db = partition_jacobian(pinned, 0, 1)
    assert dA.nnz == 0 and not db.any()
    _expect(IndexError, partition_jacobian, model, 0, 2)
    print("Jacobian tests completed successfully!")


def main():
    """Run all tests"""
    print("=== Relaxation Test Suite ===\n")
    try:
        test_partition_matrix()
        test_projection()
        test_insert_and_cells()
        test_envelopes()
        test_example_one_relaxations()
        test_bilinear_collapse()
        test_fixed_selection()
        test_partition_jacobian()
        print("\nAll relaxation tests passed! ✓")
    except Exception as e:
        print(f"Test failed: {e}")
        import traceback
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

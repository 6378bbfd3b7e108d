#!/usr/bin/env python3
"""
Tests for instance construction, evaluation, box normalization and the grid oracle
"""

import sys
import os
import tempfile

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from model import (DimensionError, Qcqp, brute_force_optimum, check_feasible, constraint_residuals,
                   evaluate_objective, example_one, from_dense, load_instance, nonconvex_indices,
                   normalize_to_unit_box, save_instance)


def _box_instance():
    """min x0*x1 - x2 over a box that is not the unit box, with a fixed variable"""
    return Qcqp.build(
        4, Q0=[[0, 1, 0.5], [1, 0, 0.5]], r0=[0.0, 0.0, -1.0, 2.0],
        constraints=[([[0, 0, 1.0]], [0.0, 1.0, 0.0, 0.0], "le", 6.0)],
        lower=[-1.0, 0.0, 2.0, 3.0], upper=[2.0, 4.0, 3.0, 3.0],
    )


def test_example_one():
    print("Testing the one-variable example...")
    q = example_one()
    assert q.n == 1 and q.quadratic_indices == (0,) and q.bilinear_pairs == ()
    assert abs(evaluate_objective(q, [0.4]) - 0.4) < 1e-12
    ok, violation = check_feasible(q, [0.4], 1e-6)
    assert ok and violation == 0.0
    ok, violation = check_feasible(q, [0.3], 1e-6)
    assert not ok and abs(violation - 0.07) < 1e-12
    print(f"  residual at 0.3: {constraint_residuals(q, [0.3])[0]:.4f}")
    print("One-variable example tests completed successfully!")


def test_build_validation():
    print("Testing instance validation...")
    q = from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]), [0.0, 0.0])
    assert q.bilinear_pairs == ((0, 1),)
    assert nonconvex_indices(q) == (0, 1)
    try:
        Qcqp.build(2, Q0=[[0, 1, 1.0]], bilinear_pairs=[], quadratic_indices=[])
        raise AssertionError("undeclared pair accepted")
    except ValueError:
        pass
    try:
        evaluate_objective(q, [1.0, 2.0, 3.0])
        raise AssertionError("wrong dimension accepted")
    except DimensionError:
        pass
    try:
        Qcqp.build(2, lower=[1.0, 0.0], upper=[0.0, 1.0])
        raise AssertionError("inverted bounds accepted")
    except ValueError:
        pass
    print("Validation tests completed successfully!")


def test_normalize_to_unit_box():
    print("Testing box normalization...")
    q = _box_instance()
    unit, box_map = normalize_to_unit_box(q)
    assert unit.is_unit_box and unit.n == 3
    assert box_map.free == (0, 1, 2)
    rng = np.random.default_rng(1)
    for _ in range(20):
        u = rng.random(3)
        x = box_map.to_original(u)
        assert abs(x[3] - 3.0) < 1e-12
        assert abs(evaluate_objective(unit, u) - evaluate_objective(q, x)) < 1e-9
        assert np.allclose(constraint_residuals(unit, u), constraint_residuals(q, x))
        assert np.allclose(box_map.to_unit(x), u)
    same, identity = normalize_to_unit_box(example_one())
    assert identity.is_identity and same is not None
    print("Normalization tests completed successfully!")


def test_grid_oracle():
    print("Testing the grid oracle...")
    res = brute_force_optimum(example_one(), 1001)
    print(f"  grid optimum {res.value:.6f} at {res.point}")
    assert res.status == "optimal"
    assert abs(res.value - 0.4) < 1e-9 and abs(res.point[0] - 0.4) < 1e-9

    infeasible = Qcqp.build(1, r0=[1.0], constraints=[(None, [1.0], "le", -1.0)])
    assert brute_force_optimum(infeasible, 11).status == "infeasible_at_resolution"

    q = _box_instance()
    unit, box_map = normalize_to_unit_box(q)
    a, b = brute_force_optimum(q, 21), brute_force_optimum(unit, 21)
    assert abs(a.value - b.value) < 1e-9
    print("Grid oracle tests completed successfully!")


def test_json_round_trip():
    print("Testing instance files...")
    q = _box_instance()
    with tempfile.TemporaryDirectory() as tmp:
        path = save_instance(q, os.path.join(tmp, "box.json"))
        loaded = load_instance(path)
    assert loaded.name == "box"
    assert loaded.bilinear_pairs == q.bilinear_pairs
    assert np.allclose(loaded.Q0.toarray(), q.Q0.toarray())
    assert np.allclose(loaded.upper, q.upper)
    x = np.array([0.5, 1.0, 2.5, 3.0])
    assert abs(evaluate_objective(loaded, x) - evaluate_objective(q, x)) < 1e-12
    print("Instance file tests completed successfully!")


def main():
    """Run all tests"""
    print("=== Model Test Suite ===\n")
    try:
        test_example_one()
        test_build_validation()
        test_normalize_to_unit_box()
        test_grid_oracle()
        test_json_round_trip()
        print("\nAll model tests passed! ✓")
    except Exception as e:
        print(f"Test failed: {e}")
        import traceback
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

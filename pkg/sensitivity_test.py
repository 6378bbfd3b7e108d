#!/usr/bin/env python3
"""
Tests for value-function gradients against closed forms and difference quotients
"""

import sys
import os

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from instances import FamilySpec, gen_bilinear
from model import example_one, nonconvex_indices
from relax import PartitionMatrix, uniform_partition
from sensitivity import (check_unique_y, finite_difference_gradient, generalized_gradient, make_oracle,
                         value)


def _closed_form(p):
    return (0.16 + p) / (1.0 + p) if p <= 0.4 else 0.16 / p


def _closed_form_slope(p):
    return 0.84 / (1.0 + p) ** 2 if p < 0.4 else -0.16 / p ** 2


def test_example_one_gradients():
    print("Testing gradients on the one-variable example...")
    q = example_one()
    for p in (0.2, 0.7):
        P = PartitionMatrix([[0.0, p, 1.0]], (0,))
        res = generalized_gradient(q, P)
        fd = finite_difference_gradient(q, P)
        print(f"  p={p}: v={res.value:.6f} g={res.subgradient[0, 1]:.6f} fd={fd[0, 1]:.6f} "
              f"closed={_closed_form_slope(p):.6f}")
        assert abs(res.value - _closed_form(p)) < 1e-8
        assert res.unique_y and not res.degenerate and res.guaranteed and not res.notes
        assert abs(res.subgradient[0, 1] - _closed_form_slope(p)) < 1e-6
        assert abs(fd[0, 1] - _closed_form_slope(p)) < 1e-4
        assert res.subgradient[0, 0] == 0.0 and res.subgradient[0, 2] == 0.0
    print("Example gradient tests completed successfully!")


def test_uniqueness_at_the_kink():
    print("Testing selection uniqueness...")
    q = example_one()
    assert check_unique_y(q, PartitionMatrix([[0.0, 0.2, 1.0]], (0,)))
    kink = PartitionMatrix([[0.0, 0.4, 1.0]], (0,))
    assert not check_unique_y(q, kink)
    res = generalized_gradient(q, kink)
    assert not res.unique_y and not res.guaranteed and res.notes
    assert abs(res.value - 0.4) < 1e-8
    assert abs(res.second_best - 0.4) < 1e-8
    print("Uniqueness tests completed successfully!")


def test_one_sided_differences():
    print("Testing one-sided difference quotients...")
    q = example_one()
    P = PartitionMatrix([[0.0, 0.4, 1.0]], (0,))
    left = finite_difference_gradient(q, P, mode="backward")[0, 1]
    right = finite_difference_gradient(q, P, mode="forward")[0, 1]
    print(f"  left {left:.6f}, right {right:.6f}")
    assert abs(left - _closed_form_slope(0.39999999)) < 1e-3
    assert abs(right - _closed_form_slope(0.40000001)) < 1e-3

    pinned = PartitionMatrix([[0.0, 1.0, 1.0]], (0,))
    assert finite_difference_gradient(q, pinned, mode="forward")[0, 1] == 0.0
    try:
        finite_difference_gradient(q, P, mode="sideways")
        raise AssertionError("unknown mode accepted")
    except ValueError:
        pass
    print("One-sided difference tests completed successfully!")


def test_random_instances():
    print("Testing gradients on small random instances...")
    compared = 0
    for q, _ in gen_bilinear(FamilySpec("bilinear", n=3, count=4, seed=9)):
        P = uniform_partition(nonconvex_indices(q), 1)
        try:
            res = generalized_gradient(q, P)
        except Exception as e:
            print(f"  {q.name}: skipped ({type(e).__name__})")
            continue
        v, g = make_oracle(q)(P)
        assert abs(v - res.value) < 1e-9 and np.allclose(g, res.subgradient)
        assert abs(value(q, P)[0] - res.value) < 1e-6
        assert res.subgradient.shape == P.rows.shape and np.all(np.isfinite(res.subgradient))
        assert not res.subgradient[:, 0].any() and not res.subgradient[:, -1].any()
        compared += 1
    print(f"  {compared} instances compared")
    print("Random instance tests completed successfully!")


def test_gradients_against_differences():
    print("Testing gradients against central differences on two-variable instances...")
    rng = np.random.default_rng(13)
    compared, guaranteed, worst = 0, 0, 0.0
    for q, _ in gen_bilinear(FamilySpec("bilinear", n=2, count=5, seed=4)):
        nc = nonconvex_indices(q)
        for _ in range(4):
            P = PartitionMatrix.from_rows([[0.0, *np.sort(rng.uniform(0.05, 0.95, 2)), 1.0] for _ in nc], nc)
            if np.min(np.diff(P.rows, axis=1)) < 1e-3:
                continue
            res = generalized_gradient(q, P)
            # a clear margin keeps every shifted solve on the same piece
            if res.second_best - res.value <= 1e-4 * max(1.0, abs(res.value)):
                continue
            fd = finite_difference_gradient(q, P)
            err = float(np.abs(res.subgradient - fd).max())
            worst = max(worst, err)
            assert err <= max(1e-5, 1e-3 * float(np.abs(res.subgradient).max())), (err, res.subgradient, fd)
            compared += 1
            guaranteed += int(res.guaranteed)
    print(f"  {compared} partitions compared ({guaranteed} nondegenerate), max error {worst:.2e}")
    assert compared > 0
    print("Difference comparison completed successfully!")


def main():
    """Run all tests"""
    print("=== Sensitivity Test Suite ===\n")
    try:
        test_example_one_gradients()
        test_uniqueness_at_the_kink()
        test_one_sided_differences()
        test_random_instances()
        test_gradients_against_differences()
        print("\nAll sensitivity tests passed! ✓")
    except Exception as e:
        print(f"Test failed: {e}")
        import traceback
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

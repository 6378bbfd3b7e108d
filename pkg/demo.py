#!/usr/bin/env python3
"""
Demo script for the QCQP Partition Optimizer
Walks the one-variable example min x s.t. x^2 >= 0.16 through the whole pipeline
"""

import sys
import os

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from cli import example_one_curve
from driver import SolveConfig, solve_global
from model import example_one
from policies import AlpinePolicy, StrongPartitionPolicy, run_strong_partition
from relax import PartitionMatrix, build_mccormick, solve_relaxation
from sensitivity import generalized_gradient


def demo_application():
    """Demonstrate the key steps on the one-variable example"""
    print("=== QCQP Partition Optimizer - Demo ===\n")
    q = example_one()

    print("📋 Instance: min x  s.t.  x^2 >= 0.16,  0 <= x <= 1 (optimum x = 0.4)")
    _, mc = solve_relaxation(build_mccormick(q))
    print(f"✓ McCormick bound: {mc.bound + q.c0:.6f}\n")

    print("📈 Relaxation value as a function of the single partition point p:")
    print("     p |     v(p) | closed form")
    print("  " + "-" * 34)
    for row in example_one_curve(0.1):
        print(f"  {row['p']:4.1f} | {row['value']:8.6f} | {row['closed_form']:8.6f}")
    print()

    print("🧭 Generalized gradients:")
    for p in (0.2, 0.7):
        res = generalized_gradient(q, PartitionMatrix(np.array([[0.0, p, 1.0]]), (0,)))
        print(f"  p = {p}: v = {res.value:.6f}, dv/dp = {res.subgradient[0, 1]:.6f}, unique cells = {res.unique_y}")
    print()

    print("🔍 Strong partitioning with one point...")
    sp = run_strong_partition(q, 1)
    print(f"  start p = {sp.start.rows[0, 1]:.6f} (v = {sp.start_value:.6f})")
    print(f"  final p = {sp.partition.rows[0, -2]:.6f} (v = {sp.value:.6f}) after {sp.evals} evaluations\n")

    print("⚙️  Global solves with one partition point:")
    cfg = SolveConfig(points=1)
    for policy in (AlpinePolicy(), StrongPartitionPolicy()):
        result = solve_global(q, policy, cfg)
        m = result.metrics
        gap = "-" if m.eff_gap_iter1 is None else f"{m.eff_gap_iter1:.2e}"
        print(f"  {policy.name:8} status={m.status} iterations={m.iterations} "
              f"LBD={m.lbd:.6f} UBD={m.ubd:.6f} gap after iteration 1={gap}")

    print("\n=== Demo Complete ===")


if __name__ == "__main__":
    try:
        demo_application()
    except KeyboardInterrupt:
        print("\nDemo interrupted by user")
    except Exception as e:
        print(f"Demo error: {e}")
        import traceback
        traceback.print_exc()

#!/usr/bin/env python3
"""
Quick smoke tests for the QCQP Partition Optimizer
"""

import sys
import os
import tempfile

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from database import ResultsDatabase
from driver import MetricsRecord, effective_gap, shifted_geometric_mean, tle_gap


def test_config():
    """Test configuration"""
    print("Testing configuration...")

    import config
    print(f"App name: {config.APP_NAME}")
    print(f"Results database: {config.RESULTS_DB_PATH}")
    print(f"Policies: {config.POLICIES}")
    assert config.REL_GAP == 1e-4
    assert config.ALPINE_DELTA == 10
    assert config.EXIT_CONFIG == 2 and config.EXIT_INFEASIBLE == 3 and config.EXIT_TIME_LIMIT == 4
    assert set(config.FAMILIES) == {"bilinear", "qcqp", "pooling"}

    print("Configuration tests completed successfully!")


def test_database():
    """Test database operations"""
    print("Testing database operations...")

    with tempfile.TemporaryDirectory() as tmp:
        db = ResultsDatabase(os.path.join(tmp, "results.db"))
        record = MetricsRecord("inst_000", "default", "optimal", 1.5, 3, 0.9, 1.0, 1e-4, 0.0)
        record_id = db.add_result(record)
        print(f"Added result with ID: {record_id}")
        assert db.get_results_count() == 1

        stored = db.get_result("inst_000", "default")
        assert stored["status"] == "optimal" and stored["iterations"] == 3
        print(f"Stored result: {stored['instance_id']} - {stored['policy']} - {stored['status']}")

    print("Database tests completed successfully!")


def test_metrics():
    """Test reporting arithmetic"""
    print("Testing metrics...")

    assert abs(shifted_geometric_mean([0.0])) < 1e-12
    assert abs(shifted_geometric_mean([90.0, 90.0]) - 90.0) < 1e-9
    assert abs(shifted_geometric_mean([0.0, 90.0]) - 21.6228) < 1e-4
    assert effective_gap(1.0, 1.0) == 1e-4
    assert abs(tle_gap(1.0, 0.9) - 0.0999999) < 1e-9
    print("Shifted GM of [0, 90]: "
          f"{shifted_geometric_mean([0.0, 90.0]):.4f}")

    print("Metrics tests completed successfully!")


def main():
    """Run all tests"""
    print("=== QCQP Partition Optimizer - Test Suite ===\n")

    try:
        test_config()
        print()
        test_database()
        print()
        test_metrics()
        print()
        print("All tests passed! ✓")

    except Exception as e:
        print(f"Test failed: {e}")
        import traceback
        traceback.print_exc()
        return 1

    return 0


if __name__ == "__main__":
    sys.exit(main())

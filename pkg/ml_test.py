#!/usr/bin/env python3
"""
Tests for features, regression trees, boosting and K-fold imitation
"""

import sys
import os
import csv
import tempfile

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from instances import FamilySpec, gen_bilinear
from ml import (MlConfig, Sample, audit_folds, extract_features, fit_adaboost, fit_tree, instance_digest,
                kfold_policy, make_folds, scaled_errors, scaled_mae, weighted_median, write_mae_csv)
from relax import PartitionMatrix


def test_regression_tree():
    print("Testing regression trees...")
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    tree = fit_tree(X, [0.0, 0.0, 1.0, 1.0])
    assert tree.depth() == 1 and tree.node_count == 3
    assert tree.threshold[0] == 1.5
    assert np.allclose(tree.predict(X), [0.0, 0.0, 1.0, 1.0])
    assert np.allclose(tree.predict([2.9]), [1.0])

    stump = fit_tree(X, [0.0, 1.0, 2.0, 5.0], max_depth=0)
    assert stump.node_count == 1 and abs(stump.predict([0.0])[0] - 2.0) < 1e-12

    # identical columns: the lower feature index wins
    twin = fit_tree(np.hstack([X, X]), [0.0, 0.0, 1.0, 1.0])
    assert twin.feature[0] == 0

    weighted = fit_tree(np.zeros((2, 1)), [0.0, 1.0], weights=[3.0, 1.0])
    assert abs(weighted.predict([0.0])[0] - 0.25) < 1e-12
    for bad in ((np.zeros((0, 1)), []), (X, [0.0, 1.0])):
        try:
            fit_tree(*bad)
            raise AssertionError("bad training data accepted")
        except ValueError:
            pass
    print("Regression tree tests completed successfully!")


def test_weighted_median():
    print("Testing weighted medians...")
    preds = np.array([[3.0, 1.0, 2.0]])
    assert weighted_median(preds, np.array([1.0, 1.0, 1.0]))[0] == 2.0
    assert weighted_median(preds, np.array([5.0, 1.0, 1.0]))[0] == 3.0
    assert weighted_median(preds, np.array([1.0, 5.0, 1.0]))[0] == 1.0
    print("Weighted median tests completed successfully!")


def test_adaboost():
    print("Testing boosted ensembles...")
    X = np.linspace(0.0, 1.0, 21).reshape(-1, 1)
    y = X.ravel().copy()
    model = fit_adaboost(X, y, MlConfig(weak_learners=25, track_loss=True), seed=3)
    mae = float(np.abs(model.predict(X) - y).mean())
    print(f"  {len(model.trees)} trees, training MAE {mae:.4f}")
    assert 1 <= len(model.trees) <= 25
    assert len(model.weights) == len(model.trees) == len(model.losses)
    assert mae < 0.05
    again = fit_adaboost(X, y, MlConfig(weak_learners=25), seed=3)
    assert np.array_equal(again.predict(X), model.predict(X))

    flat = fit_adaboost(X, np.full(21, 0.7), MlConfig(weak_learners=10))
    assert len(flat.trees) == 1 and np.allclose(flat.predict(X), 0.7)
    print("Boosting tests completed successfully!")


def test_folds():
    print("Testing fold construction and audit...")
    folds = make_folds(10, 3, seed=1)
    assert sorted(np.concatenate(folds).tolist()) == list(range(10))
    assert [f.size for f in folds] == [4, 3, 3]
    assert audit_folds(folds, 10)
    ids = [f"inst_{i:03d}" for i in range(10)]
    assert audit_folds(folds, 10, ids)
    ids[folds[0][0]] = ids[folds[1][0]]
    assert not audit_folds(folds, 10, ids)
    assert not audit_folds(folds[:2], 10)
    try:
        make_folds(3, 5)
        raise AssertionError("more folds than samples accepted")
    except ValueError:
        pass
    print("Fold tests completed successfully!")


def test_kfold_policy():
    print("Testing out-of-sample predictions...")
    target = PartitionMatrix([[0.0, 0.3, 1.0]], (0,))
    samples = [Sample(f"inst_{i:03d}", np.ones(4), target) for i in range(6)]
    preds = kfold_policy(samples, MlConfig(folds=3, weak_learners=5))
    assert sorted(preds) == [s.instance_id for s in samples]
    for P in preds.values():
        assert P.nc == (0,) and np.allclose(P.rows, target.rows)

    duplicated = samples[:5] + [Sample("inst_000", np.ones(4), target)]
    try:
        kfold_policy(duplicated, MlConfig(folds=3, weak_learners=5))
        raise AssertionError("duplicated instance ids accepted")
    except ValueError:
        pass
    print("K-fold tests completed successfully!")


def test_errors_and_csv():
    print("Testing imitation errors...")
    preds = {"a": PartitionMatrix([[0.0, 0.3, 1.0], [0.0, 0.5, 1.0]]),
             "b": PartitionMatrix([[0.0, 0.1, 1.0], [0.0, 0.5, 1.0]])}
    targets = {"a": PartitionMatrix([[0.0, 0.5, 1.0], [0.0, 0.5, 1.0]]),
               "b": PartitionMatrix([[0.0, 0.2, 1.0], [0.0, 0.9, 1.0]])}
    errors = scaled_errors(preds, targets)
    assert len(errors) == 4
    mae = scaled_mae(errors)
    assert abs(mae[(0, 1)] - 0.15) < 1e-12 and abs(mae[(1, 1)] - 0.2) < 1e-12
    halved = scaled_mae(scaled_errors(preds, targets, {"a": np.array([2.0, 2.0])}))
    assert abs(halved[(0, 1)] - 0.1) < 1e-12
    with tempfile.TemporaryDirectory() as tmp:
        path = write_mae_csv(errors, os.path.join(tmp, "mae.csv"))
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
    assert len(rows) == 4 and rows[0]["instance_id"] == "a"
    print("Error tests completed successfully!")


def test_features():
    print("Testing instance features...")
    (q, meta), = gen_bilinear(FamilySpec("bilinear", n=10, count=1, seed=4))
    fv = extract_features(q)
    print(f"  dimension {fv.dimension}, presolve found: {fv.presolve_found}")
    assert fv.dimension == 31
    assert fv.to_array().size == 32
    assert np.allclose(fv.theta, meta.theta)
    assert fv.mccormick_bound <= fv.presolve_objective + 1e-4
    assert len(instance_digest(q)) == 64
    print("Feature tests completed successfully!")


def main():
    """Run all tests"""
    print("=== Imitation Learning Test Suite ===\n")
    try:
        test_regression_tree()
        test_weighted_median()
        test_adaboost()
        test_folds()
        test_kfold_policy()
        test_errors_and_csv()
        test_features()
        print("\nAll imitation learning tests passed! ✓")
    except Exception as e:
        print(f"Test failed: {e}")
        import traceback
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

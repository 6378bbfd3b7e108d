"""
Imitation of strong partitioning: instance features, regression trees,
AdaBoost.R2 ensembles and out-of-sample K-fold predictions.
"""

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import LOCAL_STARTS, ML_FOLDS, ML_MAX_DEPTH, ML_WEAK_LEARNERS
from driver import default_starts, local_search
from model import InfeasibleError, Qcqp, dumps_instance, normalize_to_unit_box
from relax import PartitionMatrix, build_mccormick, solve_relaxation, x_solution

logger = logging.getLogger(__name__)


@dataclass
class FeatureVector:
    theta: np.ndarray
    x_presolve: np.ndarray
    presolve_objective: float
    x_mccormick: np.ndarray
    mccormick_bound: float
    presolve_found: bool = True

    @property
    def dimension(self) -> int:
        """Feature count without the presolve flag"""
        return self.theta.size + self.x_presolve.size + self.x_mccormick.size + 2

    def to_array(self) -> np.ndarray:
        return np.concatenate([
            self.theta, self.x_presolve, [self.presolve_objective],
            self.x_mccormick, [self.mccormick_bound], [1.0 if self.presolve_found else 0.0],
        ])


def extract_features(q: Qcqp, theta: Optional[Sequence[float]] = None, starts: int = LOCAL_STARTS,
                     seed: int = 0) -> FeatureVector:
    """Parameters, presolve solution and McCormick solution of an instance, on the unit box.

    A missing presolve solution is replaced by the McCormick solution and bound
    with the flag cleared.
    """
    theta = np.asarray(q.meta.theta if theta is None else theta, dtype=float)
    unit, _ = normalize_to_unit_box(q)
    model, sol = solve_relaxation(build_mccormick(unit))
    if sol.x is None:
        raise InfeasibleError("McCormick relaxation infeasible, instance rejected")
    x_mc = x_solution(model, sol.x)
    bound = sol.objective + unit.c0

    found = local_search(unit, default_starts(unit, starts, seed))
    if found is None:
        return FeatureVector(theta, x_mc.copy(), bound, x_mc, bound, presolve_found=False)
    x_pre, obj = found
    return FeatureVector(theta, np.asarray(x_pre, dtype=float), float(obj), x_mc, bound)


@dataclass
class RegressionTree:
    """Array-backed binary tree; feature -1 marks a leaf"""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def node_count(self) -> int:
        return self.feature.size

    def depth(self) -> int:
        def walk(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))
        return walk(0)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        node = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                break
            r, n = rows[inner], node[inner]
            go_left = X[r, feat[inner]] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])
        return self.value[node]


def _best_split(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> Tuple[int, float, float]:
    """(feature, threshold, weighted SSE after split); feature -1 when no split exists"""
    best = (-1, 0.0, np.inf)
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys, ws = X[order, f], y[order], w[order]
        cw = np.cumsum(ws)
        cwy = np.cumsum(ws * ys)
        cwy2 = np.cumsum(ws * ys * ys)
        tw, twy, twy2 = cw[-1], cwy[-1], cwy2[-1]
        # candidate cut after position k when the next value differs
        valid = np.flatnonzero(xs[1:] > xs[:-1])
        if valid.size == 0:
            continue
        lw, lwy, lwy2 = cw[valid], cwy[valid], cwy2[valid]
        rw, rwy, rwy2 = tw - lw, twy - lwy, twy2 - lwy2
        with np.errstate(divide="ignore", invalid="ignore"):
            sse = (lwy2 - np.where(lw > 0, lwy * lwy / lw, 0.0)) + (rwy2 - np.where(rw > 0, rwy * rwy / rw, 0.0))
        k = int(np.argmin(sse))
        if sse[k] < best[2]:
            pos = valid[k]
            best = (f, 0.5 * (xs[pos] + xs[pos + 1]), float(sse[k]))
    return best


def fit_tree(X, y, weights=None, max_depth: int = ML_MAX_DEPTH, min_samples_split: int = 2) -> RegressionTree:
    """CART regression tree on weighted squared error; leaves hold weighted means.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size or y.size == 0:
        raise ValueError("X must be a non-empty 2-D array matching y")
    w = np.full(y.size, 1.0 / y.size) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.size != y.size or np.any(w < 0):
        raise ValueError("weights must be nonnegative and match y")

    feature, threshold, left, right, value = [], [], [], [], []

    def leaf_value(idx):
        total = w[idx].sum()
        return float(w[idx] @ y[idx] / total) if total > 0 else float(y[idx].mean())

    def grow(idx, depth):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(leaf_value(idx))
        if depth >= max_depth or idx.size < min_samples_split or np.ptp(y[idx]) == 0.0:
            return node
        f, t, _ = _best_split(X[idx], y[idx], w[idx])
        if f < 0:
            return node
        mask = X[idx, f] <= t
        feature[node], threshold[node] = f, t
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(y.size), 0)
    return RegressionTree(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                          np.array(value))


@dataclass
class MlConfig:
    folds: int = ML_FOLDS
    weak_learners: int = ML_WEAK_LEARNERS
    max_depth: int = ML_MAX_DEPTH
    d: int = 2
    seed: int = 0
    track_loss: bool = False


@dataclass
class AdaBoostModel:
    trees: List[RegressionTree]
    weights: List[float]
    losses: List[float] = field(default_factory=list)
    train_mae: List[float] = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        preds = np.column_stack([t.predict(X) for t in self.trees])
        return weighted_median(preds, np.asarray(self.weights))


def weighted_median(preds: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per row, the smallest prediction whose cumulative weight reaches half the total"""
    order = np.argsort(preds, axis=1, kind="stable")
    cdf = np.cumsum(weights[order], axis=1)
    idx = np.argmax(cdf >= 0.5 * cdf[:, -1:], axis=1)
    return preds[np.arange(preds.shape[0]), order[np.arange(preds.shape[0]), idx]]


def fit_adaboost(X, y, cfg: Optional[MlConfig] = None, seed: Optional[int] = None) -> AdaBoostModel:
    """AdaBoost.R2 with linear loss, weighted bootstrap resampling and weighted-median prediction"""
    cfg = cfg or MlConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n == 0:
        raise ValueError("no training samples")
    rng = np.random.Generator(np.random.Philox(cfg.seed if seed is None else seed))
    w = np.full(n, 1.0 / n)
    model = AdaBoostModel([], [])
    preds = []

    for round_no in range(cfg.weak_learners):
        idx = rng.choice(n, size=n, replace=True, p=w)
        tree = fit_tree(X[idx], y[idx], None, cfg.max_depth)
        pred = tree.predict(X)
        err = np.abs(pred - y)
        max_err = err.max()
        if max_err > 0:
            err = err / max_err
        loss = float(w @ err)

        if loss <= 0:
            model.trees.append(tree)
            model.weights.append(1.0)
            model.losses.append(0.0)
            preds.append(pred)
            if cfg.track_loss:
                model.train_mae.append(float(np.abs(pred - y).mean()))
            break
        if loss >= 0.5:
            if not model.trees:
                model.trees.append(tree)
                model.weights.append(1.0)
                model.losses.append(loss)
            logger.debug(f"Boosting stopped at round {round_no + 1}: loss {loss:.4f}")
            break

        beta = loss / (1.0 - loss)
        model.trees.append(tree)
        model.weights.append(float(np.log(1.0 / beta)))
        model.losses.append(loss)
        preds.append(pred)
        w = w * np.power(beta, 1.0 - err)
        w /= w.sum()
        if cfg.track_loss:
            ensemble = weighted_median(np.column_stack(preds), np.asarray(model.weights))
            model.train_mae.append(float(np.abs(ensemble - y).mean()))
    return model


def make_folds(N: int, K: int, seed: int = 0) -> List[np.ndarray]:
    """Shuffled disjoint folds covering range(N)"""
    if not 2 <= K <= N:
        raise ValueError(f"need 2 <= K <= N, got K={K}, N={N}")
    rng = np.random.Generator(np.random.Philox(seed))
    return [np.sort(f) for f in np.array_split(rng.permutation(N), K)]


def _digest(item: str) -> str:
    return hashlib.sha256(item.encode("utf-8")).hexdigest()


def audit_folds(folds: Sequence[np.ndarray], N: int, ids: Optional[Sequence[str]] = None) -> bool:
    """Check the folds cover range(N) disjointly and no test id appears in its training set"""
    flat = np.concatenate(folds) if folds else np.zeros(0, dtype=int)
    if flat.size != N or set(flat.tolist()) != set(range(N)):
        return False
    ids = [str(i) for i in range(N)] if ids is None else list(ids)
    digests = [_digest(s) for s in ids]
    for k, test in enumerate(folds):
        train = set(digests[i] for j, f in enumerate(folds) if j != k for i in f)
        if any(digests[i] in train for i in test):
            return False
    return True


def instance_digest(q: Qcqp) -> str:
    return _digest(dumps_instance(q))


@dataclass
class Sample:
    instance_id: str
    features: np.ndarray
    target: PartitionMatrix


def kfold_policy(samples: Sequence[Sample], cfg: Optional[MlConfig] = None) -> Dict[str, PartitionMatrix]:
    """Out-of-sample partition predictions for every sample.

    One ensemble per (variable, point) target is trained on the other folds;
    predictions per variable are sorted and clipped to [0, 1].
    """
    cfg = cfg or MlConfig()
    N = len(samples)
    if len({s.instance_id for s in samples}) != N:
        raise ValueError("instance ids must be unique")
    folds = make_folds(N, cfg.folds, cfg.seed)
    if any(f.size == 0 for f in folds):
        raise ValueError("a fold is empty")
    if not audit_folds(folds, N, [s.instance_id for s in samples]):
        raise ValueError("fold audit failed: duplicated ids or overlapping folds")

    X = np.vstack([s.features for s in samples])
    shape = samples[0].target.rows.shape
    if any(s.target.rows.shape != shape for s in samples):
        raise ValueError("all targets must share one partition shape")
    Y = np.stack([s.target.rows for s in samples])
    predicted = np.zeros_like(Y)
    for k, test in enumerate(folds):
        train = np.setdiff1d(np.arange(N), test)
        for i in range(shape[0]):
            for j in range(1, shape[1] - 1):
                ens = fit_adaboost(X[train], Y[train, i, j], cfg, seed=cfg.seed + 7919 * k + 101 * i + j)
                predicted[test, i, j] = ens.predict(X[test])
        logger.info(f"Fold {k + 1}/{len(folds)} done")

    out = {}
    for s, rows in zip(samples, predicted):
        rows = rows.copy()
        rows[:, 1:-1] = np.clip(np.sort(rows[:, 1:-1], axis=1), 0.0, 1.0)
        rows[:, 0], rows[:, -1] = 0.0, 1.0
        out[s.instance_id] = PartitionMatrix(rows, s.target.nc)
    return out


def scaled_errors(predictions: Dict[str, PartitionMatrix], targets: Dict[str, PartitionMatrix],
                  scales: Optional[Dict[str, np.ndarray]] = None) -> List[Dict]:
    """One row per (instance, variable, interior point) with the absolute error and its scale"""
    rows = []
    for inst in sorted(predictions):
        pred, tgt = predictions[inst].rows, targets[inst].rows
        scale = np.ones(pred.shape[0]) if scales is None or inst not in scales else np.asarray(scales[inst])
        for i in range(pred.shape[0]):
            for j in range(1, pred.shape[1] - 1):
                rows.append({"instance_id": inst, "var": i, "point_index": j,
                             "abs_error": float(abs(pred[i, j] - tgt[i, j])), "scale": float(scale[i])})
    return rows


def scaled_mae(errors: Sequence[Dict]) -> Dict[Tuple[int, int], float]:
    """Mean of abs_error/scale per (variable, point) over instances"""
    sums: Dict[Tuple[int, int], List[float]] = {}
    for e in errors:
        sums.setdefault((e["var"], e["point_index"]), []).append(e["abs_error"] / e["scale"])
    return {key: float(np.mean(vals)) for key, vals in sorted(sums.items())}


def write_mae_csv(errors: Sequence[Dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["instance_id", "var", "point_index", "abs_error", "scale"])
        writer.writeheader()
        writer.writerows(errors)
    return path

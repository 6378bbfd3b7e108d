"""
Projected nonsmooth ascent for maximizing v(P) over ordered partition matrices.

A stability center moves only on strict improvement (serious step). Null steps
shrink the step and add the trial subgradient to a bundle; the search direction
is the minimum-norm element of the convex hull of the bundle subgradients that
lie near the center.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.optimize import nnls

from config import (ASCENT_EPS, ASCENT_EXPAND, ASCENT_MAX_EVALS, ASCENT_MAX_ITER, ASCENT_MIN_STEP,
                    ASCENT_SHRINK, BUNDLE_SIZE)
from model import QcqpError
from relax import OaConfig, PartitionMatrix, pool_adjacent_violators
from sensitivity import make_oracle

logger = logging.getLogger(__name__)

Oracle = Callable[[PartitionMatrix], Tuple[float, np.ndarray]]

TERMINATION_REASONS = ("stationary", "iteration-limit", "no-improvement", "time-limit", "evaluation-failure")

# consecutive oracle failures tolerated before giving up
MAX_FAILURES = 5


@dataclass
class AscentConfig:
    max_iterations: int = ASCENT_MAX_ITER
    max_subgradient_evals: int = ASCENT_MAX_EVALS
    stationarity_eps: float = ASCENT_EPS
    bundle_size: int = BUNDLE_SIZE
    initial_step: Optional[float] = None
    shrink: float = ASCENT_SHRINK
    expand: float = ASCENT_EXPAND
    min_step: float = ASCENT_MIN_STEP
    time_limit: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.shrink < 1 or self.expand < 1:
            raise ValueError("shrink must lie in (0, 1) and expand must be >= 1")
        if self.bundle_size < 1:
            raise ValueError("bundle_size must be positive")


@dataclass
class AscentResult:
    best_P: PartitionMatrix
    best_value: float
    iterations: int
    reason: str
    evaluations: int
    trajectory: List[float] = field(default_factory=list)


def default_mask(P: PartitionMatrix) -> np.ndarray:
    """Only the endpoint columns are fixed"""
    mask = np.zeros(P.rows.shape, dtype=bool)
    mask[:, 0] = True
    mask[:, -1] = True
    return mask


def project_masked(rows: np.ndarray, anchor: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Projection onto ordered rows with masked entries held at their anchor values.

    Every run of free entries between two fixed ones is an isotonic regression
    clipped to the fixed neighbours.
    """
    out = np.where(mask, anchor, rows).astype(float)
    for r in range(out.shape[0]):
        fixed = np.flatnonzero(mask[r])
        for a, b in zip(fixed[:-1], fixed[1:]):
            if b - a > 1:
                run = pool_adjacent_violators(rows[r, a + 1:b])
                out[r, a + 1:b] = np.clip(run, anchor[r, a], anchor[r, b])
    return out


def min_norm_hull(gradients: List[np.ndarray]) -> np.ndarray:
    """Minimum-norm point of the convex hull of the given vectors"""
    if len(gradients) == 1:
        return gradients[0].copy()
    G = np.column_stack(gradients)
    weight = 1e3 * max(1.0, float(np.abs(G).max()))
    # a heavily weighted row of ones turns the simplex constraint into a penalty nnls handles
    A = np.vstack([G, weight * np.ones((1, G.shape[1]))])
    b = np.concatenate([np.zeros(G.shape[0]), [weight]])
    lam, _ = nnls(A, b)
    total = lam.sum()
    if total <= 0:
        return gradients[0].copy()
    return G @ (lam / total)


def maximize(oracle: Oracle, P0: PartitionMatrix, cfg: Optional[AscentConfig] = None,
             fixed_mask: Optional[np.ndarray] = None) -> AscentResult:
    """Maximize oracle values over partition matrices starting at P0.

    The best value is monotone; masked entries never move; ties keep the
    earlier point.
    """
    cfg = cfg or AscentConfig()
    mask = default_mask(P0) if fixed_mask is None else (np.asarray(fixed_mask, dtype=bool) | default_mask(P0))
    if mask.shape != P0.rows.shape:
        raise ValueError("mask shape does not match the partition matrix")
    start = time.perf_counter()
    anchor = P0.rows.copy()
    free = ~mask

    center = P0
    v_c, g_c = oracle(center)
    g_c = np.where(free, g_c, 0.0)
    evals = 1
    trajectory = [v_c]
    norm_c = float(np.abs(g_c).max(initial=0.0))
    step = cfg.initial_step if cfg.initial_step is not None else 0.1 / (1.0 + norm_c)
    bundle: List[Tuple[np.ndarray, np.ndarray]] = [(center.rows, g_c)]
    failures = 0
    reason = "iteration-limit"
    logger.info(f"Ascent start: v={v_c:.10g} |g|={norm_c:.3e} step={step:.3e}")

    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if cfg.time_limit is not None and time.perf_counter() - start > cfg.time_limit:
            reason = "time-limit"
            break
        if evals >= cfg.max_subgradient_evals:
            reason = "iteration-limit"
            break
        if step < cfg.min_step:
            reason = "no-improvement"
            break

        radius = 2.0 * step * max(norm_c, cfg.stationarity_eps)
        near = [g for p, g in bundle if np.abs(p - center.rows).max(initial=0.0) <= radius]
        direction = min_norm_hull(near or [g_c])
        if np.abs(direction).max(initial=0.0) <= cfg.stationarity_eps:
            if norm_c <= cfg.stationarity_eps:
                reason = "stationary"
                break
            step *= cfg.shrink
            continue

        trial_rows = project_masked(center.rows + step * direction, anchor, mask)
        if np.abs(trial_rows - center.rows).max() <= cfg.stationarity_eps * max(1.0, step):
            if len(near) <= 1:
                reason = "stationary"
                break
            bundle = [(center.rows, g_c)]
            continue

        trial = PartitionMatrix(trial_rows, P0.nc)
        try:
            v_t, g_t = oracle(trial)
        except (QcqpError, ValueError) as e:
            evals += 1
            failures += 1
            logger.warning(f"It {it}: oracle failed ({e}); shrinking step")
            if failures >= MAX_FAILURES:
                reason = "evaluation-failure"
                break
            step *= cfg.shrink
            continue
        evals += 1
        failures = 0
        g_t = np.where(free, g_t, 0.0)
        trajectory.append(v_t)

        if v_t > v_c:
            center, v_c, g_c = trial, v_t, g_t
            norm_c = float(np.abs(g_c).max(initial=0.0))
            step *= cfg.expand
            bundle = [(center.rows, g_c)]
            logger.info(f"It {it}: serious v={v_c:.10g} |g|={norm_c:.3e} step={step:.3e}")
        else:
            step *= cfg.shrink
            bundle.append((trial_rows, g_t))
            if len(bundle) > cfg.bundle_size:
                bundle = [bundle[0]] + bundle[-(cfg.bundle_size - 1):] if cfg.bundle_size > 1 else [bundle[0]]
            logger.debug(f"It {it}: null v={v_t:.10g} step={step:.3e}")

    logger.info(f"Ascent done: reason={reason} v={v_c:.10g} evals={evals}")
    return AscentResult(best_P=center, best_value=v_c, iterations=it, reason=reason,
                        evaluations=evals, trajectory=trajectory)


def maximize_value(q, P0: PartitionMatrix, oa: Optional[OaConfig] = None, cfg: Optional[AscentConfig] = None,
                   fixed_mask: Optional[np.ndarray] = None) -> AscentResult:
    """Ascent on the relaxation value function of an instance"""
    return maximize(make_oracle(q, oa), P0, cfg, fixed_mask)

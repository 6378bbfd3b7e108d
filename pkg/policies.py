"""
Partition-point policies: adaptive refinement around a reference point, strong
partitioning by value-function ascent, fixed first partitions and uniform bisection.
"""

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence, Tuple

import numpy as np

from config import ALPINE_DELTA, MIP_ABS_GAP, MIP_REL_GAP, POSTPROCESS_REL_TOL, PRESOLVE_MATCH_TOL
from milp import solve_milp
from model import InfeasibleError, NumericalError, Qcqp, nonconvex_indices
from nsmax import AscentConfig, AscentResult, maximize
from relax import OaConfig, PartitionMatrix, active_cells, build_pmr_oa, x_solution
from sensitivity import make_oracle, value

logger = logging.getLogger(__name__)


@dataclass
class RefinementState:
    """Inputs of one refinement step; x_bar is the reference point on the unit box"""
    P_prev: PartitionMatrix
    x_bar: np.ndarray
    delta: float = ALPINE_DELTA
    iteration: int = 1
    active: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        self.x_bar = np.asarray(self.x_bar, dtype=float)
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.active is None:
            self.active = active_cells(self.P_prev, self.x_bar)


@dataclass
class PolicyContext:
    """What a policy may look at before the first partition is chosen"""
    q: Qcqp
    d: int
    x_ref: np.ndarray
    oa: Optional[OaConfig] = None


def _pad(rows: Sequence[Sequence[float]]) -> np.ndarray:
    width = max(len(r) for r in rows)
    return np.array([np.concatenate([np.zeros(width - len(r)), np.sort(r)]) for r in rows])


def alpine_refine(s: RefinementState) -> PartitionMatrix:
    """Insert points at x_bar +- width/delta inside the active cell of every variable.

    A point that would reach or cross the cell boundary is not added.
    """
    P = s.P_prev
    rows = []
    for r, var in enumerate(P.nc):
        pts = P.points(r)
        cell = s.active[r]
        lo, hi = pts[cell], pts[cell + 1]
        width = hi - lo
        xv = float(np.clip(s.x_bar[var], lo, hi))
        row = list(P.rows[r])
        for candidate in (xv - width / s.delta, xv + width / s.delta):
            if lo < candidate < hi:
                row.append(float(candidate))
        rows.append(row)
    refined = PartitionMatrix(_pad(rows), P.nc)
    logger.debug(f"Refinement {s.iteration}: width {P.width} -> {refined.width}")
    return refined


def uniform_refine(s: RefinementState) -> PartitionMatrix:
    """Bisect the active cell of every variable"""
    P = s.P_prev
    rows = []
    for r, var in enumerate(P.nc):
        pts = P.points(r)
        cell = s.active[r]
        rows.append(list(P.rows[r]) + [0.5 * (pts[cell] + pts[cell + 1])])
    return PartitionMatrix(_pad(rows), P.nc)


def sp_preprocess(q: Qcqp, d: int, oa: Optional[OaConfig] = None) -> Tuple[PartitionMatrix, np.ndarray]:
    """Starting partition for strong partitioning and the mask of entries that stay fixed.

    Each round solves the outer-approximated relaxation and inserts the solution
    components that do not already match a point. Rows are then left-padded with
    zeros to width d + 2; the padding and the endpoints are masked.
    """
    if d < 1:
        raise ValueError("d must be at least 1")
    nc = nonconvex_indices(q)
    rows = [[0.0, 1.0] for _ in nc]
    for k in range(d):
        P = PartitionMatrix.from_rows(rows, nc)
        model = build_pmr_oa(q, P, oa)
        sol = solve_milp(model, rel_gap=MIP_REL_GAP, abs_gap=MIP_ABS_GAP)
        if sol.status == "infeasible":
            raise InfeasibleError("relaxation infeasible during preprocessing")
        if sol.x is None:
            raise NumericalError(f"relaxation solve ended with status {sol.status}")
        x_hat = x_solution(model, sol.x)
        for r, var in enumerate(nc):
            xv = float(x_hat[var])
            if np.min(np.abs(np.asarray(rows[r]) - xv)) > PRESOLVE_MATCH_TOL:
                rows[r] = sorted(rows[r] + [xv])
        logger.debug(f"Preprocessing round {k + 1}: {[len(r) - 2 for r in rows]} interior points")

    width = d + 2
    padded = np.zeros((len(nc), width))
    mask = np.zeros((len(nc), width), dtype=bool)
    for r, row in enumerate(rows):
        pad = width - len(row)
        padded[r, pad:] = row
        mask[r, :pad] = True
    mask[:, 0] = True
    mask[:, -1] = True
    return PartitionMatrix(padded, nc), mask


def sp_postprocess(q: Qcqp, P1: PartitionMatrix, v_bar: float, oa: Optional[OaConfig] = None,
                   rel_tol: float = POSTPROCESS_REL_TOL) -> PartitionMatrix:
    """Zero out points whose removal keeps the value within rel_tol of v_bar.

    Entries are visited column by column, rows ascending inside each column.
    """
    rows = P1.rows.copy()
    threshold = v_bar - rel_tol * abs(v_bar)
    for j in range(1, P1.width - 1):
        for i in range(len(P1)):
            if rows[i, j] == 0.0:
                continue
            trial = rows.copy()
            trial[i, j] = 0.0
            trial[i] = np.sort(trial[i])
            try:
                v_hat = value(q, PartitionMatrix(trial, P1.nc), oa)[0]
            except (InfeasibleError, NumericalError):
                continue
            if v_hat >= threshold:
                rows = trial
    return PartitionMatrix(rows, P1.nc)


@dataclass
class StrongPartitionResult:
    partition: PartitionMatrix
    value: float
    raw: PartitionMatrix
    raw_value: float
    start: PartitionMatrix
    start_value: float
    evals: int
    wall_s: float
    ascent: AscentResult = field(repr=False, default=None)


def run_strong_partition(q: Qcqp, d: int, oa: Optional[OaConfig] = None,
                         cfg: Optional[AscentConfig] = None) -> StrongPartitionResult:
    """Preprocess, maximize the relaxation value, then strip redundant points"""
    started = time.perf_counter()
    P0, mask = sp_preprocess(q, d, oa)
    ascent = maximize(make_oracle(q, oa), P0, cfg, mask)
    final = sp_postprocess(q, ascent.best_P, ascent.best_value, oa)
    final_value = value(q, final, oa)[0]
    wall = time.perf_counter() - started
    logger.info(f"Strong partitioning: v(P0)={ascent.trajectory[0]:.10g} v(P*)={ascent.best_value:.10g} "
                f"v(post)={final_value:.10g} evals={ascent.evaluations} time={wall:.2f}s")
    return StrongPartitionResult(partition=final, value=final_value, raw=ascent.best_P,
                                 raw_value=ascent.best_value, start=P0, start_value=ascent.trajectory[0],
                                 evals=ascent.evaluations, wall_s=wall, ascent=ascent)


def strong_partition(q: Qcqp, d: int, oa: Optional[OaConfig] = None,
                     cfg: Optional[AscentConfig] = None) -> PartitionMatrix:
    return run_strong_partition(q, d, oa, cfg).partition


def save_sp_result(result: StrongPartitionResult, path) -> Tuple[Path, Path]:
    """Write the partition JSON and its sidecar next to it"""
    path = Path(path)
    result.partition.save(path)
    sidecar = path.with_name(path.stem + ".sidecar.json")
    data = {"value": result.value, "evals": result.evals, "wall_s": round(result.wall_s, 6)}
    sidecar.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path, sidecar


class Policy(Protocol):
    name: str

    def first_partition(self, ctx: PolicyContext) -> PartitionMatrix:
        ...

    def refine(self, state: RefinementState) -> PartitionMatrix:
        ...


def _initial_state(ctx: PolicyContext) -> RefinementState:
    return RefinementState(PartitionMatrix.trivial(nonconvex_indices(ctx.q)), ctx.x_ref, iteration=1)


class AlpinePolicy:
    """Adaptive refinement at every iteration, the first one around the presolve point"""
    name = "default"

    def __init__(self, delta: float = ALPINE_DELTA):
        self.delta = delta

    def first_partition(self, ctx: PolicyContext) -> PartitionMatrix:
        state = _initial_state(ctx)
        state.delta = self.delta
        return alpine_refine(state)

    def refine(self, state: RefinementState) -> PartitionMatrix:
        state.delta = self.delta
        return alpine_refine(state)


class StrongPartitionPolicy(AlpinePolicy):
    """Strong partitioning for the first iteration, adaptive refinement afterwards"""
    name = "sp"

    def __init__(self, delta: float = ALPINE_DELTA, ascent: Optional[AscentConfig] = None):
        super().__init__(delta)
        self.ascent = ascent
        self.last_result: Optional[StrongPartitionResult] = None

    def first_partition(self, ctx: PolicyContext) -> PartitionMatrix:
        self.last_result = run_strong_partition(ctx.q, ctx.d, ctx.oa, self.ascent)
        return self.last_result.partition


class FixedFirstPolicy(AlpinePolicy):
    """A supplied first partition (for example ML predictions), adaptive refinement afterwards"""
    name = "ml"

    def __init__(self, partition: PartitionMatrix, delta: float = ALPINE_DELTA):
        super().__init__(delta)
        self.partition = partition

    def first_partition(self, ctx: PolicyContext) -> PartitionMatrix:
        nc = nonconvex_indices(ctx.q)
        if len(self.partition) != len(nc):
            raise ValueError(f"supplied partition has {len(self.partition)} rows, expected {len(nc)}")
        return PartitionMatrix(self.partition.rows, nc)


class UniformPolicy:
    """Evenly spaced first partition, bisection of the active cell afterwards"""
    name = "uniform"

    def first_partition(self, ctx: PolicyContext) -> PartitionMatrix:
        nc = nonconvex_indices(ctx.q)
        return PartitionMatrix(np.tile(np.linspace(0.0, 1.0, ctx.d + 2), (len(nc), 1)), nc)

    def refine(self, state: RefinementState) -> PartitionMatrix:
        return uniform_refine(state)


def make_policy(name: str, delta: float = ALPINE_DELTA, partition: Optional[PartitionMatrix] = None,
                ascent: Optional[AscentConfig] = None) -> Policy:
    if name == "default":
        return AlpinePolicy(delta)
    if name == "sp":
        return StrongPartitionPolicy(delta, ascent)
    if name == "ml":
        if partition is None:
            raise ValueError("the ml policy needs a predicted partition")
        return FixedFirstPolicy(partition, delta)
    if name == "uniform":
        return UniformPolicy()
    raise ValueError(f"unknown policy '{name}'")

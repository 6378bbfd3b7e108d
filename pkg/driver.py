"""
Partitioning-based global optimization loop, local search for upper bounds,
and the benchmark metrics.
"""

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.stats import gmean

from config import (ABS_GAP, ALPINE_DELTA, DEFAULT_POINTS, FEAS_TOL, GAP_EPS, GAP_FLOOR, GM_SHIFT, LOCAL_STARTS,
                    MAX_ITERATIONS, REL_GAP, TIME_LIMIT)
from model import InfeasibleError, NumericalError, Qcqp, check_feasible, evaluate_objective, normalize_to_unit_box
from policies import PolicyContext, RefinementState
from relax import OaConfig, PartitionMatrix, build_mccormick, build_pmr, solve_relaxation, x_solution

logger = logging.getLogger(__name__)

RESULT_FIELDS = ["instance_id", "policy", "status", "time_s", "iterations", "lbd", "ubd", "eff_gap_iter1", "tle_gap"]


@dataclass
class SolveConfig:
    rel_gap: float = REL_GAP
    abs_gap: float = ABS_GAP
    time_limit: float = TIME_LIMIT
    delta: float = ALPINE_DELTA
    points: int = DEFAULT_POINTS
    local_starts: int = LOCAL_STARTS
    max_iterations: int = MAX_ITERATIONS
    seed: int = 0

    def __post_init__(self):
        if self.rel_gap <= 0 or self.abs_gap <= 0:
            raise ValueError("gaps must be positive")
        if self.points < 1:
            raise ValueError("points must be at least 1")


@dataclass
class MetricsRecord:
    instance_id: str
    policy: str
    status: str
    time_s: float
    iterations: int
    lbd: float
    ubd: float
    eff_gap_iter1: Optional[float]
    tle_gap: float

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class SolveResult:
    x: Optional[np.ndarray]
    ubd: float
    lbd: float
    metrics: MetricsRecord
    iteration_log: List[Dict] = field(default_factory=list)
    lbd_iter1: Optional[float] = None


# Local search

def default_starts(q: Qcqp, count: int = LOCAL_STARTS, seed: int = 0) -> List[np.ndarray]:
    """Upper corner, box midpoint, then seeded uniform points"""
    starts = [q.upper.copy(), 0.5 * (q.lower + q.upper)]
    rng = np.random.Generator(np.random.Philox(seed))
    while len(starts) < count:
        starts.append(q.lower + rng.random(q.n) * (q.upper - q.lower))
    return starts[:max(count, 1)]


def _quadratic(Q, r, b=0.0):
    def f(x):
        return float(x @ (Q @ x) + r @ x - b)

    def grad(x):
        return 2.0 * (Q @ x) + r
    return f, grad


def _penalty_stage(q: Qcqp, x0: np.ndarray, tol: float, mu: float = 10.0, rounds: int = 8) -> np.ndarray:
    """Exact L1 penalty in elastic form: min f(x) + mu * sum(s) s.t. g_k(x) <= s_k (|g_k(x)| <= s_k for equalities)"""
    obj, obj_grad = _quadratic(q.Q0, q.r0)
    cons = [(c.sense, *_quadratic(c.Q, c.r, c.b)) for c in q.constraints]
    n, m = q.n, len(cons)
    x = np.clip(x0, q.lower, q.upper)
    if m == 0:
        return x

    rows = []
    for k, (sense, g, g_grad) in enumerate(cons):
        def upper(z, k=k, g=g):
            return z[n + k] - g(z[:n])

        def upper_jac(z, k=k, g_grad=g_grad):
            jac = np.zeros(n + m)
            jac[:n] = -g_grad(z[:n])
            jac[n + k] = 1.0
            return jac
        rows.append({"type": "ineq", "fun": upper, "jac": upper_jac})
        if sense == "eq":
            def lower(z, k=k, g=g):
                return z[n + k] + g(z[:n])

            def lower_jac(z, k=k, g_grad=g_grad):
                jac = np.zeros(n + m)
                jac[:n] = g_grad(z[:n])
                jac[n + k] = 1.0
                return jac
            rows.append({"type": "ineq", "fun": lower, "jac": lower_jac})
    bounds = list(zip(q.lower, q.upper)) + [(0.0, None)] * m

    for _ in range(rounds):
        s0 = np.array([max(g(x), 0.0) if sense == "le" else abs(g(x)) for sense, g, _ in cons])

        def fun(z, weight=mu):
            return obj(z[:n]) + weight * float(z[n:].sum())

        def fun_grad(z, weight=mu):
            return np.concatenate([obj_grad(z[:n]), np.full(m, weight)])
        res = minimize(fun, np.concatenate([x, s0]), jac=fun_grad, method="SLSQP", bounds=bounds,
                       constraints=rows, options={"ftol": 1e-12, "maxiter": 500})
        x = np.clip(res.x[:n], q.lower, q.upper)
        if check_feasible(q, x, tol)[0]:
            break
        mu *= 10.0
    return x


def _polish(q: Qcqp, x0: np.ndarray) -> np.ndarray:
    obj, obj_grad = _quadratic(q.Q0, q.r0)
    constraints = []
    for c in q.constraints:
        g, g_grad = _quadratic(c.Q, c.r, c.b)
        if c.sense == "eq":
            constraints.append({"type": "eq", "fun": g, "jac": g_grad})
        else:
            constraints.append({"type": "ineq", "fun": lambda x, g=g: -g(x), "jac": lambda x, gg=g_grad: -gg(x)})
    res = minimize(obj, x0, jac=obj_grad, method="SLSQP", bounds=list(zip(q.lower, q.upper)),
                   constraints=constraints, options={"ftol": 1e-12, "maxiter": 500})
    return np.clip(res.x, q.lower, q.upper)


def local_search(q: Qcqp, starts: Sequence[np.ndarray], tol: float = FEAS_TOL) -> Optional[Tuple[np.ndarray, float]]:
    """Best feasible local minimum over the starts, or None when no start reaches feasibility.

    Each start runs an exact-penalty stage with growing weights. SLSQP then
    polishes both the penalty point and the start itself, and the start is a
    candidate too.
    """
    if not starts:
        raise ValueError("at least one start is required")
    best: Optional[Tuple[np.ndarray, float]] = None
    for x0 in starts:
        start = np.clip(np.asarray(x0, dtype=float), q.lower, q.upper)
        candidates = [start]
        try:
            x = _penalty_stage(q, start, tol)
            candidates += [x, _polish(q, x)]
        except (ValueError, ArithmeticError) as e:
            logger.debug(f"Penalty stage failed: {e}")
        try:
            candidates.append(_polish(q, start))
        except (ValueError, ArithmeticError) as e:
            logger.debug(f"SLSQP polish failed: {e}")
        for cand in candidates:
            if not check_feasible(q, cand, tol)[0]:
                continue
            val = evaluate_objective(q, cand)
            if best is None or val < best[1]:
                best = (cand.copy(), val)
    return best


# Metrics

def shifted_geometric_mean(times: Sequence[float], shift: float = GM_SHIFT) -> float:
    t = np.asarray(times, dtype=float)
    if t.size == 0:
        raise ValueError("no times given")
    if np.any(t < 0):
        raise ValueError("times must be nonnegative")
    return float(gmean(t + shift) - shift)


def effective_gap(v_star: float, v_lbd: float) -> float:
    return max(GAP_FLOOR, (v_star - v_lbd) / (GAP_EPS + abs(v_star)))


def tle_gap(ub: float, lb: float) -> float:
    return (ub - lb) / (GAP_EPS + abs(ub))


def _gap_closed(ubd: float, lbd: float, cfg: SolveConfig) -> bool:
    if not math.isfinite(ubd):
        return False
    return (ubd - lbd) / (abs(ubd) + GAP_EPS) <= cfg.rel_gap or ubd - lbd <= cfg.abs_gap


# Global loop

def _clamp_lbd(lbd: float, ubd: float) -> float:
    """The incumbent is only FEAS_TOL-feasible, so its value may dip below a certified bound"""
    if lbd > ubd:
        if lbd - ubd > FEAS_TOL * (1.0 + abs(ubd)):
            logger.warning(f"Lower bound {lbd:.10g} exceeds incumbent {ubd:.10g}")
        return ubd
    return lbd


def solve_global(q: Qcqp, policy, cfg: Optional[SolveConfig] = None, oa: Optional[OaConfig] = None,
                 instance_id: str = "", v_star: Optional[float] = None) -> SolveResult:
    """Partition, bound and refine until the relative or absolute gap closes.

    The reference point for the first partition is the presolve solution when
    one is found, else the McCormick solution; later refinements use the
    previous relaxation solution.
    """
    cfg = cfg or SolveConfig()
    started = time.perf_counter()
    unit, box_map = normalize_to_unit_box(q)
    instance_id = instance_id or q.name

    def elapsed():
        return time.perf_counter() - started

    found = local_search(unit, default_starts(unit, cfg.local_starts, cfg.seed))
    x_hat, ubd = (found[0], found[1]) if found else (None, math.inf)
    logger.info(f"Presolve: {'UBD=' + format(ubd, '.10g') if found else 'no feasible point'}")

    mc_model, mc = solve_relaxation(build_mccormick(unit, oa))
    if mc.status == "infeasible":
        raise InfeasibleError("McCormick relaxation is infeasible", certificate="termwise McCormick LP infeasible")
    if mc.x is None:
        raise NumericalError(f"McCormick relaxation ended with status {mc.status}")
    lbd = _clamp_lbd(mc.bound + unit.c0, ubd)
    x_ref = x_hat if x_hat is not None else x_solution(mc_model, mc.x)
    logger.info(f"McCormick bound: LBD={lbd:.10g}")

    log: List[Dict] = []
    status = "iteration_limit"
    lbd_iter1 = None
    P: Optional[PartitionMatrix] = None
    x_rel = x_ref
    iteration = 0
    if _gap_closed(ubd, lbd, cfg):
        status = "optimal"
    else:
        for iteration in range(1, cfg.max_iterations + 1):
            if elapsed() > cfg.time_limit:
                status = "time_limit"
                iteration -= 1
                break
            if iteration == 1:
                P = policy.first_partition(PolicyContext(unit, cfg.points, x_ref, oa))
            else:
                P = policy.refine(RefinementState(P, x_rel, cfg.delta, iteration))

            remaining = max(cfg.time_limit - elapsed(), 1e-3)
            model, sol = solve_relaxation(build_pmr(unit, P), time_limit=remaining)
            if sol.status == "infeasible":
                raise InfeasibleError("piecewise relaxation is infeasible", certificate=f"iteration {iteration}")
            if sol.x is not None:
                lbd = max(lbd, sol.bound + unit.c0)
                x_rel = x_solution(model, sol.x)
                starts = [x_rel] + ([x_hat] if x_hat is not None else [])
                found = local_search(unit, starts)
                if found is not None and found[1] < ubd:
                    x_hat, ubd = found
            else:
                lbd = max(lbd, sol.bound + unit.c0)
            lbd = _clamp_lbd(lbd, ubd)
            if iteration == 1:
                lbd_iter1 = lbd

            log.append({"iteration": iteration, "lbd": lbd, "ubd": ubd, "wall_s": elapsed(),
                        "points": [len(P.points(r)) - 2 for r in range(len(P))]})
            logger.info(f"It {iteration}: LBD={lbd:.10g} UBD={ubd:.10g} time={elapsed():.2f}s")
            if _gap_closed(ubd, lbd, cfg):
                status = "optimal"
                break
            if elapsed() > cfg.time_limit:
                status = "time_limit"
                break

    if lbd_iter1 is None:
        lbd_iter1 = lbd
    if v_star is None:
        v_star = q.meta.v_star if q.meta.v_star is not None else (ubd if status == "optimal" else None)
    eff = effective_gap(v_star, lbd_iter1) if v_star is not None and math.isfinite(v_star) else None
    metrics = MetricsRecord(
        instance_id=instance_id, policy=getattr(policy, "name", str(policy)), status=status,
        time_s=elapsed(), iterations=iteration, lbd=lbd, ubd=ubd, eff_gap_iter1=eff,
        tle_gap=tle_gap(ubd, lbd) if math.isfinite(ubd) else math.inf,
    )
    x_out = box_map.to_original(x_hat) if x_hat is not None else None
    return SolveResult(x=x_out, ubd=ubd, lbd=lbd, metrics=metrics, iteration_log=log, lbd_iter1=lbd_iter1)


# Reporting

def _row(record) -> Dict:
    return record.to_dict() if isinstance(record, MetricsRecord) else dict(record)


def write_results_csv(records: Sequence, path) -> Path:
    """Results CSV ordered by (instance_id, policy)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = sorted((_row(r) for r in records), key=lambda r: (r["instance_id"], r["policy"]))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=RESULT_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in RESULT_FIELDS})
    return path


def read_results_csv(path) -> List[Dict]:
    def num(v):
        return None if v in ("", None) else float(v)

    with open(path, newline="", encoding="utf-8") as f:
        rows = []
        for r in csv.DictReader(f):
            rows.append({
                "instance_id": r["instance_id"], "policy": r["policy"], "status": r["status"],
                "time_s": float(r["time_s"]), "iterations": int(float(r["iterations"])),
                "lbd": num(r["lbd"]), "ubd": num(r["ubd"]),
                "eff_gap_iter1": num(r["eff_gap_iter1"]), "tle_gap": num(r["tle_gap"]),
            })
    return rows


SPEEDUP_BUCKETS = [(">=10x", 10.0, math.inf), ("5-10x", 5.0, 10.0), ("2-5x", 2.0, 5.0), ("1-2x", 1.0, 2.0),
                   ("slower", 0.0, 1.0)]


def summarize(records: Sequence, baseline: str = "default") -> Dict:
    """Per-policy time statistics, gap-floor share, speedup buckets and gap ratios against the baseline"""
    rows = [_row(r) for r in records]
    by_policy: Dict[str, Dict[str, Dict]] = {}
    for r in rows:
        by_policy.setdefault(r["policy"], {})[r["instance_id"]] = r

    summary = {"policies": {}, "speedups": {}, "gap_ratios": []}
    for policy in sorted(by_policy):
        runs = list(by_policy[policy].values())
        times = [r["time_s"] for r in runs]
        unsolved = [r["tle_gap"] for r in runs if r["status"] == "time_limit" and r["tle_gap"] is not None]
        gaps = [r["eff_gap_iter1"] for r in runs if r["eff_gap_iter1"] is not None]
        summary["policies"][policy] = {
            "instances": len(runs),
            "solved": sum(1 for r in runs if r["status"] == "optimal"),
            "shifted_gm_time": shifted_geometric_mean(times),
            "median_time": float(np.median(times)),
            "min_time": float(np.min(times)),
            "max_time": float(np.max(times)),
            "gm_tle_gap": float(gmean(np.asarray(unsolved) + GAP_EPS)) if unsolved else None,
            "pct_gap_closed_iter1": 100.0 * sum(1 for g in gaps if g <= GAP_FLOOR) / len(gaps) if gaps else None,
            "median_eff_gap_iter1": float(np.median(gaps)) if gaps else None,
        }

    base = by_policy.get(baseline, {})
    for policy in sorted(by_policy):
        if policy == baseline:
            continue
        buckets = {name: 0 for name, _, _ in SPEEDUP_BUCKETS}
        for inst, r in sorted(by_policy[policy].items()):
            b = base.get(inst)
            if b is None:
                continue
            ratio = b["time_s"] / max(r["time_s"], 1e-9)
            for name, lo, hi in SPEEDUP_BUCKETS:
                if lo <= ratio < hi:
                    buckets[name] += 1
                    break
            if r["eff_gap_iter1"] is not None and b["eff_gap_iter1"] is not None:
                summary["gap_ratios"].append({"instance_id": inst, "policy": policy,
                                              "ratio": r["eff_gap_iter1"] / b["eff_gap_iter1"]})
        summary["speedups"][policy] = buckets
    return summary

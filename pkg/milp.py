"""
Branch and bound over SOS1 indicator rows, with an enumeration oracle and no-good cuts
"""

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from config import ENUMERATION_LIMIT, INTEGER_TOL, MIP_ABS_GAP, MIP_NODE_LIMIT, MIP_REL_GAP
from linsolve import LpBasis, LpSolution, StandardFormLp, solve_lp, warm_solve
from model import DimensionError, LimitExceededError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MilpModel:
    """An LP core plus groups of binary columns, each group summing to one in the LP"""
    lp: StandardFormLp
    y_groups: Tuple[Tuple[int, ...], ...]

    @property
    def y_columns(self) -> List[int]:
        return [j for group in self.y_groups for j in group]


@dataclass
class MilpSolution:
    status: str
    x: Optional[np.ndarray] = None
    y: Tuple[int, ...] = ()
    objective: float = math.inf
    bound: float = -math.inf
    nodes: int = 0
    second_best_objective: Optional[float] = None
    basis: Optional[LpBasis] = None
    best_bound_trace: List[float] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def y_columns(self, m: MilpModel) -> List[int]:
        """LP column of the selected cell in every group"""
        return [group[k] for group, k in zip(m.y_groups, self.y)]


@dataclass(order=True)
class _Node:
    bound: float
    node_id: int
    fixed_zero: frozenset = field(compare=False)
    solution: LpSolution = field(compare=False)


def _node_lp(m: MilpModel, fixed_zero) -> StandardFormLp:
    if not fixed_zero:
        return m.lp
    ub = m.lp.ub.copy()
    ub[list(fixed_zero)] = 0.0
    return m.lp.with_bounds(ub=ub)


def _fractional_group(m: MilpModel, x: np.ndarray) -> Tuple[int, float]:
    """Group with the most fractional mass (1 - largest member), ties to the lowest index"""
    best, best_mass = -1, INTEGER_TOL
    for g, group in enumerate(m.y_groups):
        mass = 1.0 - float(np.max(x[list(group)]))
        if mass > best_mass:
            best, best_mass = g, mass
    return best, best_mass


def _selection(m: MilpModel, x: np.ndarray) -> Tuple[int, ...]:
    return tuple(int(np.argmax(x[list(group)])) for group in m.y_groups)


def _gap_closed(incumbent: float, bound: float, rel_gap: float, abs_gap: float) -> bool:
    if math.isinf(incumbent):
        return False
    gap = incumbent - bound
    return gap <= abs_gap or gap <= rel_gap * abs(incumbent)


def solve_milp(m: MilpModel, rel_gap: float = MIP_REL_GAP, abs_gap: float = MIP_ABS_GAP,
               node_limit: int = MIP_NODE_LIMIT, time_limit: Optional[float] = None) -> MilpSolution:
    """Best-bound branch and bound with SOS1 branching.

    A fractional group's allowed members are split into two halves; each child
    forbids one half by fixing those upper bounds to zero. Children re-optimize
    from the parent basis.
    """
    if rel_gap <= 0 or abs_gap <= 0:
        raise ValueError("gaps must be positive")
    start = time.perf_counter()
    root = solve_lp(m.lp)
    if root.status != "optimal":
        status = "infeasible" if root.status == "infeasible" else root.status
        return MilpSolution(status=status, nodes=1)

    counter = itertools.count()
    heap: List[_Node] = [_Node(root.objective, next(counter), frozenset(), root)]
    incumbent = math.inf
    best: Optional[LpSolution] = None
    best_y: Tuple[int, ...] = ()
    proven = -math.inf
    trace: List[float] = []
    nodes = 1
    status = "optimal"
    final_bound = None

    def consider(sol: LpSolution):
        nonlocal incumbent, best, best_y
        if sol.objective < incumbent:
            incumbent, best, best_y = sol.objective, sol, _selection(m, sol.x)

    while heap:
        node = heapq.heappop(heap)
        proven = max(proven, node.bound)
        trace.append(proven)
        if node.bound >= incumbent or _gap_closed(incumbent, node.bound, rel_gap, abs_gap):
            final_bound = min(node.bound, incumbent)
            heap.clear()
            break
        g, _ = _fractional_group(m, node.solution.x)
        if g < 0:
            consider(node.solution)
            continue
        if nodes >= node_limit:
            status = "node_limit"
            heapq.heappush(heap, node)
            break
        if time_limit is not None and time.perf_counter() - start > time_limit:
            status = "time_limit"
            heapq.heappush(heap, node)
            break

        allowed = [j for j in m.y_groups[g] if j not in node.fixed_zero]
        half = len(allowed) // 2
        for forbid in (allowed[half:], allowed[:half]):
            fixed = node.fixed_zero | frozenset(forbid)
            child = warm_solve(_node_lp(m, fixed), node.solution.basis)
            nodes += 1
            if child.status != "optimal" or child.objective >= incumbent:
                continue
            if _gap_closed(incumbent, child.objective, rel_gap, abs_gap):
                continue
            if _fractional_group(m, child.x)[0] < 0:
                consider(child)
            else:
                heapq.heappush(heap, _Node(max(child.objective, node.bound), next(counter), fixed, child))

    if best is None:
        if status == "optimal":
            return MilpSolution(status="infeasible", nodes=nodes, best_bound_trace=trace)
        return MilpSolution(status=status, bound=proven, nodes=nodes, best_bound_trace=trace)

    if final_bound is not None:
        bound = final_bound
    else:
        bound = min(incumbent, heap[0].bound) if heap else incumbent
    logger.debug(f"B&B finished: status={status} nodes={nodes} objective={incumbent:.10g} bound={bound:.10g}")
    return MilpSolution(status=status, x=best.x, y=best_y, objective=incumbent, bound=bound,
                        nodes=nodes, basis=best.basis, best_bound_trace=trace)


def fix_binaries(m: MilpModel, y: Sequence[int]) -> StandardFormLp:
    """The LP with every group pinned to its selected member"""
    if len(y) != len(m.y_groups):
        raise DimensionError("selection does not match the indicator groups")
    lb = m.lp.lb.copy()
    ub = m.lp.ub.copy()
    for group, k in zip(m.y_groups, y):
        if not 0 <= k < len(group):
            raise DimensionError(f"selection {k} out of range for a group of {len(group)}")
        ub[list(group)] = 0.0
        ub[group[k]] = 1.0
        lb[group[k]] = 1.0
    return m.lp.with_bounds(lb=lb, ub=ub)


def enumerate_solve(m: MilpModel, limit: int = ENUMERATION_LIMIT) -> MilpSolution:
    """Solve the LP for every selection; also report the second-best objective"""
    sizes = [len(group) for group in m.y_groups]
    total = int(np.prod(sizes)) if sizes else 1
    if total > limit:
        raise LimitExceededError(f"{total} indicator assignments exceed the enumeration limit {limit}")

    results = []
    basis = None
    for y in itertools.product(*[range(s) for s in sizes]):
        sol = warm_solve(fix_binaries(m, y), basis)
        if sol.status == "optimal":
            basis = sol.basis
            results.append((sol.objective, y, sol))
    if not results:
        return MilpSolution(status="infeasible", nodes=total)
    results.sort(key=lambda item: item[0])
    objective, y, sol = results[0]
    second = results[1][0] if len(results) > 1 else math.inf
    return MilpSolution(status="optimal", x=sol.x, y=tuple(y), objective=objective, bound=objective,
                        nodes=total, second_best_objective=second, basis=sol.basis)


def add_no_good_cut(m: MilpModel, y_star: Sequence[int]) -> MilpModel:
    """Exclude one selection: sum of its chosen indicators <= groups - 1"""
    if len(y_star) != len(m.y_groups):
        raise DimensionError("selection does not match the indicator groups")
    cols = [group[k] for group, k in zip(m.y_groups, y_star)]
    row = sp.csr_matrix((np.ones(len(cols)), ([0] * len(cols), cols)), shape=(1, m.lp.n))
    lp = m.lp.with_rows(row, ["le"], [len(cols) - 1.0], ["no_good"], block="Mbar")
    return replace(m, lp=lp)

"""
Value function of the outer-approximated relaxation and its generalized gradients.

The gradient of v(P) at a fixed optimal cell selection comes from one primal-dual
pair of the fixed-selection LP: g = -pi' (dA/dP) z + pi' (db/dP).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from config import MIP_ABS_GAP, MIP_REL_GAP, UNIQUENESS_REL_TOL
from linsolve import solve_lp
from milp import MilpSolution, add_no_good_cut, solve_milp
from model import InfeasibleError, NumericalError, Qcqp
from relax import OaConfig, PartitionMatrix, PmrModel, build_pmr_oa, fix_y, value_gradient

logger = logging.getLogger(__name__)


@dataclass
class ValueFunctionResult:
    value: float
    y_star: Tuple[int, ...]
    unique_y: bool
    subgradient: np.ndarray
    degenerate: bool = False
    residual: float = 0.0
    second_best: float = math.inf
    notes: List[str] = field(default_factory=list)

    @property
    def guaranteed(self) -> bool:
        """True when the subgradient is the gradient of the smooth piece (unique selection, nondegenerate LP)"""
        return self.unique_y and not self.degenerate


def _solve(q: Qcqp, P: PartitionMatrix, oa: Optional[OaConfig]) -> Tuple[PmrModel, MilpSolution]:
    model = build_pmr_oa(q, P, oa)
    sol = solve_milp(model, rel_gap=MIP_REL_GAP, abs_gap=MIP_ABS_GAP)
    if sol.status == "infeasible":
        raise InfeasibleError("the piecewise relaxation is infeasible, so the instance is infeasible",
                              certificate=f"relaxation with partition d={P.d} has no feasible cell selection")
    if sol.x is None:
        raise NumericalError(f"relaxation solve ended with status {sol.status}")
    return model, sol


def value(q: Qcqp, P: PartitionMatrix, oa: Optional[OaConfig] = None) -> Tuple[float, Tuple[int, ...]]:
    """Optimal value of the outer-approximated relaxation at P and the optimal cell selection"""
    _, sol = _solve(q, P, oa)
    return sol.objective + q.c0, sol.y


def _second_best(q: Qcqp, model: PmrModel, sol: MilpSolution) -> float:
    cut = add_no_good_cut(model, sol.y)
    other = solve_milp(cut, rel_gap=MIP_REL_GAP, abs_gap=MIP_ABS_GAP)
    if other.x is None:
        return math.inf
    return other.objective + q.c0


def _uniqueness_tol(v: float, tol: Optional[float]) -> float:
    return UNIQUENESS_REL_TOL * max(1.0, abs(v)) if tol is None else tol


def check_unique_y(q: Qcqp, P: PartitionMatrix, oa: Optional[OaConfig] = None,
                   tol: Optional[float] = None) -> bool:
    """True when every other cell selection is worse than the optimum by more than tol"""
    model, sol = _solve(q, P, oa)
    v = sol.objective + q.c0
    return _second_best(q, model, sol) > v + _uniqueness_tol(v, tol)


def generalized_gradient(q: Qcqp, P: PartitionMatrix, oa: Optional[OaConfig] = None,
                         tol: Optional[float] = None, check_unique: bool = True) -> ValueFunctionResult:
    """Value and one generalized gradient of v at P.

    When the optimal selection is not unique or the LP is degenerate the result
    is still returned, flagged, as a single element of the hull of piece
    gradients.
    """
    model, sol = _solve(q, P, oa)
    lp = fix_y(model, sol.y)
    lp_sol = solve_lp(lp)
    if not lp_sol.optimal:
        raise NumericalError(f"fixed-selection LP ended with status {lp_sol.status}")

    duals = np.zeros(model.lp.m)
    duals[lp.row_origin] = lp_sol.duals
    z = np.zeros(model.lp.n)
    z[lp.col_origin] = lp_sol.x
    z[sol.y_columns(model)] = 1.0

    v = lp_sol.objective + q.c0
    grad = value_gradient(model, duals, z)
    result = ValueFunctionResult(value=v, y_star=sol.y, unique_y=True, subgradient=grad,
                                 degenerate=lp_sol.degenerate, residual=lp_sol.residual)
    if check_unique:
        result.second_best = _second_best(q, model, sol)
        result.unique_y = result.second_best > v + _uniqueness_tol(v, tol)
    if not result.unique_y:
        result.notes.append("selection not unique: element of the generalized gradient, not guaranteed")
    if result.degenerate:
        result.notes.append("degenerate LP: duals may not be unique")
    logger.debug(f"v(P)={v:.10g} |g|={np.abs(grad).max(initial=0.0):.3e} unique={result.unique_y}")
    return result


def finite_difference_gradient(q: Qcqp, P: PartitionMatrix, oa: Optional[OaConfig] = None,
                               h: float = 1e-5, mode: str = "central") -> np.ndarray:
    """Difference quotients of value() per free entry.

    mode "central" falls back to a one-sided quotient when a step would leave
    the ordered set; "forward" and "backward" force one side.
    """
    if mode not in ("central", "forward", "backward"):
        raise ValueError(f"unknown mode '{mode}'")
    rows = P.rows
    grad = np.zeros(rows.shape)
    base = None
    for i, j in P.free_entries():
        can_up = rows[i, j] + h <= rows[i, j + 1]
        can_down = rows[i, j] - h >= rows[i, j - 1]

        def shifted(delta):
            moved = rows.copy()
            moved[i, j] += delta
            return value(q, PartitionMatrix(moved, P.nc), oa)[0]

        if mode == "central" and can_up and can_down:
            grad[i, j] = (shifted(h) - shifted(-h)) / (2 * h)
            continue
        if base is None:
            base = value(q, P, oa)[0]
        if (mode == "forward" or mode == "central") and can_up:
            grad[i, j] = (shifted(h) - base) / h
        elif (mode == "backward" or mode == "central") and can_down:
            grad[i, j] = (base - shifted(-h)) / h
        else:
            logger.debug(f"Entry ({i}, {j}) is pinned on the requested side")
    return grad


def make_oracle(q: Qcqp, oa: Optional[OaConfig] = None) -> Callable[[PartitionMatrix], Tuple[float, np.ndarray]]:
    """Callable P -> (value, gradient matrix) for the ascent solver"""
    def oracle(P: PartitionMatrix) -> Tuple[float, np.ndarray]:
        res = generalized_gradient(q, P, oa, check_unique=False)
        return res.value, res.subgradient
    return oracle

"""
Linear programming engine: bounded-variable revised simplex with duals and warm starts
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import FrozenSet, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lu_factor, lu_solve

from config import (
    LP_DEGENERACY_LIMIT,
    LP_DUAL_TOL,
    LP_MAX_ITER_FACTOR,
    LP_PIVOT_TOL,
    LP_PRIMAL_TOL,
    LP_REFACTOR_EVERY,
    LP_RESIDUAL_LIMIT,
)
from model import DimensionError

logger = logging.getLogger(__name__)

AT_LOWER, AT_UPPER, BASIC = 0, 1, 2


@dataclass(frozen=True)
class StandardFormLp:
    """min c'z  s.t.  A z = b,  lb <= z <= ub.

    row_block labels every row "M" (rows whose data may depend on the partition)
    or "Mbar" (rows linking indicator variables); row_kind names the row family.
    col_origin maps columns back to a parent model when columns were removed.
    """
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    row_block: Tuple[str, ...]
    row_kind: Tuple[str, ...]
    col_origin: Optional[np.ndarray] = None
    row_origin: Optional[np.ndarray] = None

    @classmethod
    def build(cls, c, A, b, lb=None, ub=None, row_block: Sequence[str] = None,
              row_kind: Sequence[str] = None, col_origin=None, row_origin=None) -> "StandardFormLp":
        c = np.asarray(c, dtype=float).ravel()
        A = sp.csc_matrix(A, dtype=float)
        b = np.asarray(b, dtype=float).ravel()
        m, n = A.shape
        if c.shape[0] != n or b.shape[0] != m:
            raise DimensionError(f"LP data mismatch: A is {m}x{n}, c has {c.shape[0]}, b has {b.shape[0]}")
        lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=float).ravel()
        ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float).ravel()
        if lb.shape[0] != n or ub.shape[0] != n:
            raise DimensionError("bound vectors must match the column count")
        if not np.all(np.isfinite(lb)):
            raise ValueError("lower bounds must be finite")
        row_block = tuple(row_block) if row_block is not None else ("M",) * m
        row_kind = tuple(row_kind) if row_kind is not None else ("row",) * m
        if len(row_block) != m or len(row_kind) != m:
            raise DimensionError("row labels must match the row count")
        return cls(c, A, b, lb, ub, row_block, row_kind, col_origin, row_origin)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def with_bounds(self, lb=None, ub=None) -> "StandardFormLp":
        return replace(self,
                       lb=self.lb if lb is None else np.asarray(lb, dtype=float),
                       ub=self.ub if ub is None else np.asarray(ub, dtype=float))

    def with_rows(self, rows, senses: Sequence[str], rhs, kinds: Sequence[str],
                  block: str = "M") -> "StandardFormLp":
        """Append rows 'le', 'ge' or 'eq'; inequalities get new slack columns at the end"""
        rows = sp.csr_matrix(rows, dtype=float)
        k = rows.shape[0]
        if rows.shape[1] != self.n or len(senses) != k or len(kinds) != k:
            raise DimensionError("appended rows do not match the LP")
        slack_rows = [r for r, s in enumerate(senses) if s in ("le", "ge")]
        signs = [1.0 if senses[r] == "le" else -1.0 for r in slack_rows]
        s_count = len(slack_rows)
        S = sp.csr_matrix((signs, (slack_rows, range(s_count))), shape=(k, s_count))
        top = sp.hstack([self.A, sp.csr_matrix((self.m, s_count))])
        bottom = sp.hstack([rows, S])
        return replace(
            self,
            c=np.concatenate([self.c, np.zeros(s_count)]),
            A=sp.vstack([top, bottom]).tocsc(),
            b=np.concatenate([self.b, np.asarray(rhs, dtype=float).ravel()]),
            lb=np.concatenate([self.lb, np.zeros(s_count)]),
            ub=np.concatenate([self.ub, np.full(s_count, np.inf)]),
            row_block=self.row_block + (block,) * k,
            row_kind=self.row_kind + tuple(kinds),
        )


@dataclass(frozen=True)
class LpBasis:
    """Basic column per row (indices >= n are artificial columns) and the nonbasic columns at their upper bound"""
    head: Tuple[int, ...]
    at_upper: FrozenSet[int]


@dataclass(frozen=True)
class LpSolution:
    status: str
    x: Optional[np.ndarray] = None
    duals: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    objective: float = np.inf
    basis: Optional[LpBasis] = None
    pivots: int = 0
    residual: float = 0.0
    degenerate: bool = False

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _SingularBasis(Exception):
    pass


class _BasisFactor:
    """Dense LU of the basis plus product-form eta updates"""

    def __init__(self, B: np.ndarray):
        self.lu = lu_factor(B, check_finite=False)
        diag = np.abs(np.diag(self.lu[0]))
        if diag.size and diag.min() <= LP_PIVOT_TOL * max(1.0, diag.max()):
            raise _SingularBasis()
        self.etas = []

    def ftran(self, v: np.ndarray) -> np.ndarray:
        w = lu_solve(self.lu, v, check_finite=False)
        for r, d in self.etas:
            t = w[r] / d[r]
            w -= t * d
            w[r] = t
        return w

    def btran(self, v: np.ndarray) -> np.ndarray:
        v = np.array(v, dtype=float)
        for r, d in reversed(self.etas):
            v[r] = (v[r] - d @ v + d[r] * v[r]) / d[r]
        return lu_solve(self.lu, v, trans=1, check_finite=False)

    def update(self, r: int, d: np.ndarray):
        self.etas.append((r, d.copy()))


class _Simplex:
    """Working state of one solve over the artificial-extended column set"""

    def __init__(self, A: sp.csc_matrix, b: np.ndarray, lb: np.ndarray, ub: np.ndarray,
                 head, state: np.ndarray, x: np.ndarray):
        self.A = A
        self.AT = A.T.tocsr()
        self.b = b
        self.lb = lb
        self.ub = ub
        self.head = list(head)
        self.state = state
        self.x = x
        self.m, self.N = A.shape
        self.pivots = 0
        self.bland = False
        self.degenerate_run = 0
        self.max_iter = LP_MAX_ITER_FACTOR * (self.m + self.N)
        norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=0)).ravel())
        self.norms = np.maximum(norms, 1.0)
        self.refactor()

    def column(self, j: int) -> np.ndarray:
        return self.A[:, j].toarray().ravel()

    def refactor(self):
        B = self.A[:, self.head].toarray()
        self.factor = _BasisFactor(B)
        x_nb = self.x.copy()
        x_nb[self.head] = 0.0
        self.x[self.head] = self.factor.ftran(self.b - self.A @ x_nb)

    def _note_step(self, t: float):
        if t <= 1e-12:
            self.degenerate_run += 1
            if not self.bland and self.degenerate_run > LP_DEGENERACY_LIMIT:
                logger.debug("Degeneracy limit reached, switching to Bland's rule")
                self.bland = True
        else:
            self.degenerate_run = 0

    def _after_pivot(self, r: int, q: int, d: np.ndarray):
        self.head[r] = q
        self.state[q] = BASIC
        self.pivots += 1
        if len(self.factor.etas) + 1 >= LP_REFACTOR_EVERY:
            self.refactor()
        else:
            self.factor.update(r, d)

    def duals(self, cost: np.ndarray) -> np.ndarray:
        return self.factor.btran(cost[self.head])

    def primal(self, cost: np.ndarray) -> str:
        """Primal simplex from a primal feasible basis"""
        for _ in range(self.max_iter):
            y = self.duals(cost)
            rc = cost - self.AT @ y
            rc[self.head] = 0.0
            movable = self.ub > self.lb
            eligible = (((self.state == AT_LOWER) & (rc < -LP_DUAL_TOL) & movable)
                        | ((self.state == AT_UPPER) & (rc > LP_DUAL_TOL)))
            cand = np.flatnonzero(eligible)
            if cand.size == 0:
                return "optimal"
            if self.bland:
                q = int(cand[0])
            else:
                q = int(cand[np.argmax(np.abs(rc[cand]) / self.norms[cand])])
            sign = 1.0 if self.state[q] == AT_LOWER else -1.0
            d = self.factor.ftran(self.column(q))
            delta = sign * d
            xb = self.x[self.head]
            lb_h = self.lb[self.head]
            ub_h = self.ub[self.head]
            ratios = np.full(self.m, np.inf)
            dec = delta > LP_PIVOT_TOL
            inc = delta < -LP_PIVOT_TOL
            ratios[dec] = (xb[dec] - lb_h[dec]) / delta[dec]
            ratios[inc] = (ub_h[inc] - xb[inc]) / -delta[inc]
            ratios = np.maximum(ratios, 0.0)

            leave = -1
            t = self.ub[q] - self.lb[q]
            if self.m:
                t_row = ratios.min()
                if t_row < t:
                    ties = np.flatnonzero(ratios <= t_row + 1e-12)
                    if self.bland:
                        leave = int(ties[np.argmin(np.asarray(self.head)[ties])])
                    else:
                        leave = int(ties[np.argmax(np.abs(delta[ties]))])
                    t = ratios[leave]
            if not np.isfinite(t):
                return "unbounded"

            self.x[self.head] = xb - t * delta
            self.x[q] += sign * t
            self._note_step(t)
            if leave < 0:
                self.state[q] = AT_UPPER if sign > 0 else AT_LOWER
                self.x[q] = self.ub[q] if sign > 0 else self.lb[q]
                continue
            p = self.head[leave]
            if delta[leave] > 0:
                self.x[p] = self.lb[p]
                self.state[p] = AT_LOWER
            else:
                self.x[p] = self.ub[p]
                self.state[p] = AT_UPPER
            self._after_pivot(leave, q, d)
        return "iteration_limit"

    def dual(self, cost: np.ndarray) -> str:
        """Dual simplex from a dual feasible basis"""
        for _ in range(self.max_iter):
            xb = self.x[self.head]
            below = self.lb[self.head] - xb
            above = xb - self.ub[self.head]
            infeasibility = np.maximum(below, above)
            cand = np.flatnonzero(infeasibility > LP_PRIMAL_TOL)
            if cand.size == 0:
                return "optimal"
            r = int(cand[0]) if self.bland else int(cand[np.argmax(infeasibility[cand])])
            p = self.head[r]
            to_lower = below[r] > LP_PRIMAL_TOL
            e_r = np.zeros(self.m)
            e_r[r] = 1.0
            alpha = self.AT @ self.factor.btran(e_r)
            rc = cost - self.AT @ self.duals(cost)
            movable = self.ub > self.lb
            at_lower = (self.state == AT_LOWER) & movable
            at_upper = self.state == AT_UPPER
            if to_lower:
                eligible = (at_lower & (alpha < -LP_PIVOT_TOL)) | (at_upper & (alpha > LP_PIVOT_TOL))
            else:
                eligible = (at_lower & (alpha > LP_PIVOT_TOL)) | (at_upper & (alpha < -LP_PIVOT_TOL))
            cand = np.flatnonzero(eligible)
            if cand.size == 0:
                return "infeasible"
            ratios = np.abs(rc[cand]) / np.abs(alpha[cand])
            best = ratios.min()
            ties = cand[ratios <= best + 1e-12]
            q = int(ties[0]) if self.bland else int(ties[np.argmax(np.abs(alpha[ties]))])

            d = self.factor.ftran(self.column(q))
            target = self.lb[p] if to_lower else self.ub[p]
            step = (self.x[p] - target) / d[r]
            self.x[self.head] -= step * d
            self.x[q] += step
            self.x[p] = target
            self.state[p] = AT_LOWER if to_lower else AT_UPPER
            self._note_step(abs(best))
            self._after_pivot(r, q, d)
        return "iteration_limit"

    def primal_feasible(self) -> bool:
        xb = self.x[self.head]
        return bool(np.all(xb >= self.lb[self.head] - LP_PRIMAL_TOL)
                    and np.all(xb <= self.ub[self.head] + LP_PRIMAL_TOL))

    def dual_feasible(self, cost: np.ndarray) -> bool:
        rc = cost - self.AT @ self.duals(cost)
        movable = self.ub > self.lb
        bad = (((self.state == AT_LOWER) & movable & (rc < -LP_DUAL_TOL))
               | ((self.state == AT_UPPER) & movable & (rc > LP_DUAL_TOL)))
        return not bool(np.any(bad))


def _extended(lp: StandardFormLp, signs: np.ndarray) -> sp.csc_matrix:
    return sp.hstack([lp.A, sp.diags(signs, format="csc")]).tocsc()


def _finish(lp: StandardFormLp, sx: _Simplex, status: str, cost: np.ndarray) -> LpSolution:
    if status != "optimal":
        return LpSolution(status=status, pivots=sx.pivots)
    n = lp.n
    x = np.clip(sx.x[:n], lp.lb, lp.ub)
    y = sx.duals(cost)
    rc = lp.c - lp.A.T @ y
    objective = float(lp.c @ x)

    def residual():
        nonbasic = np.ones(n, dtype=bool)
        nonbasic[[h for h in sx.head if h < n]] = False
        bound_terms = float(rc[nonbasic] @ x[nonbasic])
        return abs(objective - float(lp.b @ y) - bound_terms)

    res = residual()
    if res > LP_RESIDUAL_LIMIT:
        sx.refactor()
        y = sx.duals(cost)
        rc = lp.c - lp.A.T @ y
        res = residual()
        if res > LP_RESIDUAL_LIMIT:
            logger.warning(f"LP duality residual {res:.3e} after refactorization")
            return LpSolution(status="numerical", pivots=sx.pivots, residual=res)

    # fixed columns sit at a bound whether basic or not, so only ranged ones count
    basic = [h for h in sx.head if h < n]
    ranged = [h for h in basic if lp.ub[h] > lp.lb[h]]
    degenerate = False
    if ranged:
        xb = x[ranged]
        degenerate = bool(np.any(np.minimum(np.abs(xb - lp.lb[ranged]), np.abs(lp.ub[ranged] - xb)) <= 1e-9))
    nonbasic = np.ones(n, dtype=bool)
    nonbasic[basic] = False
    nonbasic &= lp.ub > lp.lb
    if np.any(np.abs(rc[nonbasic]) <= 1e-9):
        degenerate = True

    at_upper = frozenset(int(j) for j in np.flatnonzero(sx.state[:n] == AT_UPPER))
    return LpSolution(
        status="optimal", x=x, duals=y, reduced_costs=rc, objective=objective,
        basis=LpBasis(tuple(int(h) for h in sx.head), at_upper), pivots=sx.pivots,
        residual=res, degenerate=degenerate,
    )


def _trivial(lp: StandardFormLp) -> LpSolution:
    """No rows: every column sits at its cheaper bound"""
    x = np.where(lp.c >= 0, lp.lb, lp.ub)
    if not np.all(np.isfinite(x)):
        return LpSolution(status="unbounded")
    at_upper = frozenset(int(j) for j in np.flatnonzero((lp.c < 0) & (lp.ub > lp.lb)))
    return LpSolution(status="optimal", x=x, duals=np.zeros(0), reduced_costs=lp.c.copy(),
                      objective=float(lp.c @ x), basis=LpBasis((), at_upper))


def solve_lp(lp: StandardFormLp) -> LpSolution:
    """Two-phase bounded-variable revised simplex"""
    if lp.m == 0:
        return _trivial(lp)
    try:
        return _cold_solve(lp)
    except _SingularBasis:
        logger.warning("Basis became singular during the solve")
        return LpSolution(status="numerical")


def _cold_solve(lp: StandardFormLp) -> LpSolution:
    n, m = lp.n, lp.m
    x0 = lp.lb.copy()
    resid = lp.b - lp.A @ x0
    signs = np.where(resid >= 0, 1.0, -1.0)
    A_ext = _extended(lp, signs)
    lb = np.concatenate([lp.lb, np.zeros(m)])
    ub = np.concatenate([lp.ub, np.full(m, np.inf)])
    x = np.concatenate([x0, np.abs(resid)])
    state = np.full(n + m, AT_LOWER, dtype=int)
    head = list(range(n, n + m))
    state[head] = BASIC

    sx = _Simplex(A_ext, lp.b, lb, ub, head, state, x)
    phase_one = np.concatenate([np.zeros(n), np.ones(m)])
    status = sx.primal(phase_one)
    if status != "optimal":
        logger.warning(f"Phase one ended with status {status}")
        return LpSolution(status="numerical" if status != "iteration_limit" else status, pivots=sx.pivots)
    infeasibility = float(sx.x[n:].sum())
    if infeasibility > 1e-8 * max(1.0, float(np.abs(lp.b).max())):
        return LpSolution(status="infeasible", pivots=sx.pivots)

    sx.ub[n:] = 0.0
    sx.x[n:] = np.clip(sx.x[n:], 0.0, 0.0)
    sx.refactor()
    cost = np.concatenate([lp.c, np.zeros(m)])
    status = sx.primal(cost)
    return _finish(lp, sx, status, cost)


def warm_solve(lp: StandardFormLp, basis: Optional[LpBasis]) -> LpSolution:
    """Re-optimize from a previous basis, using the dual simplex when only bounds moved.

    Falls back to a cold solve when the basis does not fit, is singular, or is
    neither primal nor dual feasible.
    """
    n, m = lp.n, lp.m
    if basis is None or m == 0 or len(basis.head) != m or len(set(basis.head)) != m \
            or any(h < 0 or h >= n + m for h in basis.head):
        return solve_lp(lp)

    A_ext = _extended(lp, np.ones(m))
    lb = np.concatenate([lp.lb, np.zeros(m)])
    ub = np.concatenate([lp.ub, np.zeros(m)])
    state = np.full(n + m, AT_LOWER, dtype=int)
    for j in basis.at_upper:
        if j < n and np.isfinite(ub[j]):
            state[j] = AT_UPPER
    state[list(basis.head)] = BASIC
    x = np.where(state == AT_UPPER, ub, lb).astype(float)

    try:
        sx = _Simplex(A_ext, lp.b, lb, ub, basis.head, state, x)
    except _SingularBasis:
        logger.debug("Supplied basis is singular, cold solving")
        return solve_lp(lp)

    cost = np.concatenate([lp.c, np.zeros(m)])
    try:
        if sx.primal_feasible():
            status = sx.primal(cost)
        elif sx.dual_feasible(cost):
            status = sx.dual(cost)
            if status == "optimal":
                status = sx.primal(cost)
        else:
            return solve_lp(lp)
    except _SingularBasis:
        return solve_lp(lp)
    if status == "iteration_limit":
        return solve_lp(lp)
    return _finish(lp, sx, status, cost)


def write_lp_debug(lp: StandardFormLp, path) -> Path:
    """Plain-text dump of an LP for triage"""
    path = Path(path)
    dense = lp.A.toarray()
    lines = [f"# {lp.m} rows, {lp.n} columns", "c: " + " ".join(f"{v:.12g}" for v in lp.c)]
    for r in range(lp.m):
        entries = " ".join(f"{j}:{dense[r, j]:.12g}" for j in np.flatnonzero(dense[r]))
        lines.append(f"Aeq[{r}] {lp.row_block[r]} {lp.row_kind[r]}: {entries}")
    lines.append("rhs: " + " ".join(f"{v:.12g}" for v in lp.b))
    lines.append("lb: " + " ".join(f"{v:.12g}" for v in lp.lb))
    lines.append("ub: " + " ".join(f"{v:.12g}" for v in lp.ub))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path

"""
Relaxation builders: termwise McCormick, piecewise McCormick (lambda formulation)
and its outer approximation, plus the partition matrix type.

Partition-dependent data is recorded symbolically. Every coefficient or
right-hand side that depends on the partition is stored as a term
scale * p[f1] * p[f2] over distinct partition points (f = -1 stands for 1),
which lets the sensitivity code differentiate the assembled rows exactly.
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from config import COLLAPSE_TOL, MIP_ABS_GAP, MIP_REL_GAP, OA_GRID_POINTS, TANGENT_ROUNDS, TANGENT_TOL
from linsolve import StandardFormLp
from milp import MilpModel, MilpSolution, solve_milp
from model import DimensionError, Qcqp, nonconvex_indices

logger = logging.getLogger(__name__)


def pool_adjacent_violators(values: Sequence[float], weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Closest nondecreasing sequence under the weighted L2 norm"""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values.copy()
    weights = np.ones_like(values) if weights is None else np.asarray(weights, dtype=float)
    # blocks of (weighted mean, total weight, length)
    means: List[float] = []
    totals: List[float] = []
    lengths: List[int] = []
    for v, w in zip(values, weights):
        means.append(float(v))
        totals.append(float(w))
        lengths.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            w_sum = totals[-2] + totals[-1]
            merged = (means[-2] * totals[-2] + means[-1] * totals[-1]) / w_sum
            length = lengths[-2] + lengths[-1]
            del means[-1], totals[-1], lengths[-1]
            means[-1], totals[-1], lengths[-1] = merged, w_sum, length
    return np.repeat(means, lengths)


@dataclass(frozen=True, eq=False)
class PartitionMatrix:
    """One row of sorted partition points per partitioned variable, endpoints 0 and 1"""
    rows: np.ndarray
    nc: Tuple[int, ...] = ()

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float, ndmin=2)
        if rows.shape[1] < 2:
            raise ValueError("partition rows need at least the two endpoints")
        if self.nc and len(self.nc) != rows.shape[0]:
            raise DimensionError(f"{rows.shape[0]} rows for {len(self.nc)} partitioned variables")
        if rows.size and (np.any(rows[:, 0] != 0.0) or np.any(rows[:, -1] != 1.0)):
            raise ValueError("partition rows must start at 0 and end at 1")
        if rows.size and np.any(np.diff(rows, axis=1) < 0):
            raise ValueError("partition rows must be sorted")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "nc", tuple(int(i) for i in self.nc))

    @property
    def d(self) -> int:
        return self.rows.shape[1] - 2

    @property
    def width(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def trivial(cls, nc: Sequence[int]) -> "PartitionMatrix":
        return cls(np.tile([0.0, 1.0], (len(nc), 1)), tuple(nc))

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]], nc: Sequence[int] = ()) -> "PartitionMatrix":
        """Sort ragged rows and left-pad the shorter ones with zeros"""
        sorted_rows = [np.sort(np.asarray(r, dtype=float)) for r in rows]
        width = max((len(r) for r in sorted_rows), default=2)
        padded = [np.concatenate([np.zeros(width - len(r)), r]) for r in sorted_rows]
        return cls(np.array(padded).reshape(len(padded), width), tuple(nc))

    def groups(self, i: int) -> List[List[int]]:
        """Column indices of row i grouped by coinciding value"""
        row = self.rows[i]
        groups = [[0]]
        for j in range(1, self.width):
            if row[j] - row[groups[-1][0]] > COLLAPSE_TOL:
                groups.append([j])
            else:
                groups[-1].append(j)
        return groups

    def points(self, i: int) -> np.ndarray:
        """Distinct points of row i"""
        last = self.width - 1
        return np.array([1.0 if last in g else self.rows[i, g[0]] for g in self.groups(i)])

    def is_relative_interior(self) -> bool:
        return bool(np.all(np.diff(self.rows, axis=1) > 0))

    def free_entries(self) -> List[Tuple[int, int]]:
        return [(i, j) for i in range(len(self)) for j in range(1, self.width - 1)]

    def to_dict(self) -> Dict:
        data = {"d": self.d, "rows": [[float(v) for v in row] for row in self.rows]}
        if self.nc:
            data["nc"] = list(self.nc)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "PartitionMatrix":
        rows = data["rows"]
        if rows and "d" in data and len(rows[0]) != int(data["d"]) + 2:
            raise ValueError("row width does not match d")
        return cls(np.array(rows, dtype=float).reshape(len(rows), -1) if rows else np.zeros((0, 2)),
                   tuple(data.get("nc", ())))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "PartitionMatrix":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def uniform_partition(nc: Sequence[int], d: int) -> PartitionMatrix:
    return PartitionMatrix(np.tile(np.linspace(0.0, 1.0, d + 2), (len(nc), 1)), tuple(nc))


def insert_points(P: PartitionMatrix, new_points: Sequence[Sequence[float]]) -> PartitionMatrix:
    """Add points per row (duplicates of existing points are dropped)"""
    if len(new_points) != len(P):
        raise DimensionError("one list of points per row is required")
    rows = []
    for i, extra in enumerate(new_points):
        pts = list(P.rows[i])
        for p in extra:
            if np.min(np.abs(np.asarray(pts) - p)) > COLLAPSE_TOL:
                pts.append(float(p))
        rows.append(pts)
    return PartitionMatrix.from_rows(rows, P.nc)


def project_to_partition_set(P_raw, nc: Sequence[int] = ()) -> PartitionMatrix:
    """Euclidean projection of every row's interior entries onto 0 <= p_2 <= ... <= p_{d+1} <= 1"""
    if isinstance(P_raw, PartitionMatrix):
        nc = nc or P_raw.nc
        P_raw = P_raw.rows
    rows = np.array(P_raw, dtype=float, ndmin=2)
    out = rows.copy()
    out[:, 0] = 0.0
    out[:, -1] = 1.0
    for r in range(rows.shape[0]):
        out[r, 1:-1] = np.clip(pool_adjacent_violators(rows[r, 1:-1]), 0.0, 1.0)
    return PartitionMatrix(out, tuple(nc))


@dataclass(frozen=True)
class OaConfig:
    """Extra outer-approximation points per quadratic variable; partition points are always added"""
    grid: Tuple[float, ...]

    @classmethod
    def uniform(cls, count: int = OA_GRID_POINTS) -> "OaConfig":
        return cls(tuple(float(k) / (count + 1) for k in range(1, count + 1)))


@dataclass(frozen=True)
class McCormickEnvelope:
    """Under- and overestimators W >= / <= a*x_i + b*x_j + c"""
    under: Tuple[Tuple[float, float, float], ...]
    over: Tuple[Tuple[float, float, float], ...]

    def interval(self, xi: float, xj: float) -> Tuple[float, float]:
        lo = max(a * xi + b * xj + c for a, b, c in self.under)
        hi = min(a * xi + b * xj + c for a, b, c in self.over)
        return lo, hi


def mccormick_bounds(xi_range: Tuple[float, float], xj_range: Tuple[float, float]) -> McCormickEnvelope:
    li, ui = xi_range
    lj, uj = xj_range
    if li > ui or lj > uj:
        raise ValueError("invalid variable range")
    return McCormickEnvelope(
        under=((lj, li, -li * lj), (uj, ui, -ui * uj)),
        over=((uj, li, -li * uj), (lj, ui, -ui * lj)),
    )


@dataclass(frozen=True, eq=False)
class PmrModel(MilpModel):
    """A relaxation MILP with its column map and partition-dependence descriptors"""
    kind: str
    c0: float
    x_cols: Tuple[int, ...]
    w_cols: Dict[Tuple[int, int], int]
    nc: Tuple[int, ...]
    partition: Optional[PartitionMatrix]
    point_values: np.ndarray
    point_offsets: Tuple[int, ...]
    coef_terms: np.ndarray
    rhs_terms: np.ndarray
    tangent_quads: Tuple[int, ...]
    col_roles: Tuple[str, ...]

    def point_id(self, i: int, k: int) -> int:
        return self.point_offsets[i] + k


class _ModelBuilder:
    def __init__(self, point_values: np.ndarray):
        self.values = point_values
        self.lb: List[float] = []
        self.ub: List[float] = []
        self.cost: List[float] = []
        self.roles: List[str] = []
        self.rows = []
        self.coef_terms = []
        self.rhs_terms = []

    def column(self, role: str, lb: float = 0.0, ub: float = np.inf, cost: float = 0.0) -> int:
        self.lb.append(lb)
        self.ub.append(ub)
        self.cost.append(cost)
        self.roles.append(role)
        return len(self.roles) - 1

    def _val(self, f: int) -> float:
        return 1.0 if f < 0 else float(self.values[f])

    def row(self, entries, sense: str, rhs: float, kind: str, block: str = "M",
            p_entries=(), rhs_terms=()):
        r = len(self.rows)
        coefs: Dict[int, float] = {}
        for col, val in entries:
            coefs[col] = coefs.get(col, 0.0) + val
        for col, scale, f1, f2 in p_entries:
            coefs[col] = coefs.get(col, 0.0) + scale * self._val(f1) * self._val(f2)
            self.coef_terms.append((r, col, scale, f1, f2))
        b = float(rhs)
        for scale, f1, f2 in rhs_terms:
            b += scale * self._val(f1) * self._val(f2)
            self.rhs_terms.append((r, scale, f1, f2))
        self.rows.append((coefs, sense, b, kind, block))

    def build(self) -> Tuple[StandardFormLp, Tuple[str, ...]]:
        n_struct = len(self.roles)
        slack_rows = [r for r, row in enumerate(self.rows) if row[1] != "eq"]
        n_total = n_struct + len(slack_rows)
        data, ri, ci = [], [], []
        b, blocks, kinds = [], [], []
        slack_col = n_struct
        for r, (coefs, sense, rhs, kind, block) in enumerate(self.rows):
            for col, val in coefs.items():
                if val != 0.0:
                    data.append(val)
                    ri.append(r)
                    ci.append(col)
            if sense != "eq":
                data.append(1.0 if sense == "le" else -1.0)
                ri.append(r)
                ci.append(slack_col)
                slack_col += 1
            b.append(rhs)
            blocks.append(block)
            kinds.append(kind)
        A = sp.csc_matrix((data, (ri, ci)), shape=(len(self.rows), n_total))
        lp = StandardFormLp.build(
            np.concatenate([self.cost, np.zeros(len(slack_rows))]), A, b,
            lb=np.zeros(n_total), ub=np.concatenate([self.ub, np.full(len(slack_rows), np.inf)]),
            row_block=blocks, row_kind=kinds,
        )
        roles = tuple(self.roles) + ("slack",) * len(slack_rows)
        return lp, roles


def _require_unit_box(q: Qcqp):
    if not q.is_unit_box:
        raise ValueError("relaxations are built on the unit box; normalize the instance first")


def _check_partition(q: Qcqp, P: PartitionMatrix) -> Tuple[int, ...]:
    nc = nonconvex_indices(q)
    if len(P) != len(nc):
        raise DimensionError(f"partition has {len(P)} rows for {len(nc)} partitioned variables")
    if P.nc and P.nc != nc:
        raise DimensionError("partition rows are keyed to different variables")
    return nc


def _common_columns(q: Qcqp, builder: _ModelBuilder):
    x_cols = tuple(builder.column(f"x[{i}]", 0.0, 1.0, float(q.r0[i])) for i in range(q.n))
    Q0 = q.Q0.tocsr()
    w_cols = {}
    for i, j in q.bilinear_pairs:
        w_cols[(i, j)] = builder.column(f"W[{i},{j}]", 0.0, 1.0, 2.0 * float(Q0[i, j]))
    for k in q.quadratic_indices:
        w_cols[(k, k)] = builder.column(f"W[{k},{k}]", 0.0, 1.0, float(Q0[k, k]))
    return x_cols, w_cols


def _problem_rows(q: Qcqp, builder: _ModelBuilder, x_cols, w_cols):
    for c in q.constraints:
        Q = c.Q.tocsr()
        entries = [(x_cols[i], float(c.r[i])) for i in np.flatnonzero(c.r)]
        for (i, j), col in w_cols.items():
            coef = float(Q[i, j]) * (1.0 if i == j else 2.0)
            if coef != 0.0:
                entries.append((col, coef))
        builder.row(entries, c.sense, c.b, "qcqp")


def _oa_rows(builder: _ModelBuilder, x_col: int, w_col: int, alphas: Sequence[float], kind: str):
    for a in alphas:
        builder.row([(w_col, 1.0), (x_col, -2.0 * a)], "ge", -a * a, kind)


def build_mccormick(q: Qcqp, oa: Optional[OaConfig] = None) -> PmrModel:
    """Termwise McCormick envelopes; quadratic terms get the secant above and tangents below"""
    _require_unit_box(q)
    oa = oa or OaConfig.uniform()
    builder = _ModelBuilder(np.zeros(0))
    x_cols, w_cols = _common_columns(q, builder)
    _problem_rows(q, builder, x_cols, w_cols)
    env = mccormick_bounds((0.0, 1.0), (0.0, 1.0))
    for i, j in q.bilinear_pairs:
        w = w_cols[(i, j)]
        for a, b, c in env.under:
            builder.row([(w, 1.0), (x_cols[i], -a), (x_cols[j], -b)], "ge", c, "mc_under")
        for a, b, c in env.over:
            builder.row([(w, 1.0), (x_cols[i], -a), (x_cols[j], -b)], "le", c, "mc_over")
    for k in q.quadratic_indices:
        builder.row([(w_cols[(k, k)], 1.0), (x_cols[k], -1.0)], "le", 0.0, "secant")
        _oa_rows(builder, x_cols[k], w_cols[(k, k)], (0.0, 1.0) + oa.grid, "oa")
    lp, roles = builder.build()
    return PmrModel(
        lp=lp, y_groups=(), kind="mccormick", c0=q.c0, x_cols=x_cols, w_cols=w_cols,
        nc=nonconvex_indices(q), partition=None, point_values=np.zeros(0), point_offsets=(),
        coef_terms=np.zeros((0, 5)), rhs_terms=np.zeros((0, 4)),
        tangent_quads=tuple(q.quadratic_indices), col_roles=roles,
    )


def _adjacent_cells(k: int, cells: int) -> List[int]:
    """Cells touching point k of a row with the given cell count"""
    return [c for c in (k - 1, k) if 0 <= c < cells]


def _build_partitioned(q: Qcqp, P: PartitionMatrix, oa: Optional[OaConfig], kind: str) -> PmrModel:
    _require_unit_box(q)
    nc = _check_partition(q, P)
    position = {v: r for r, v in enumerate(nc)}
    point_lists = [P.points(r) for r in range(len(nc))]
    offsets = tuple(int(s) for s in np.cumsum([0] + [len(p) for p in point_lists])[:-1])
    values = np.concatenate(point_lists) if point_lists else np.zeros(0)
    builder = _ModelBuilder(values)
    x_cols, w_cols = _common_columns(q, builder)

    y_groups = []
    for r, var in enumerate(nc):
        cells = len(point_lists[r]) - 1
        y_groups.append(tuple(builder.column(f"Y[{var},{c}]", 0.0, 1.0) for c in range(cells)))

    _problem_rows(q, builder, x_cols, w_cols)
    for r, group in enumerate(y_groups):
        builder.row([(y, 1.0) for y in group], "eq", 1.0, "sos", block="Mbar")

    def pid(r, k):
        return offsets[r] + k

    for i, j in q.bilinear_pairs:
        ri, rj = position[i], position[j]
        Li, Lj = len(point_lists[ri]), len(point_lists[rj])
        lam = [[builder.column(f"L[{i},{j}][{k},{l}]") for l in range(Li)] for k in range(Lj)]
        flat = [(k, l, lam[k][l]) for k in range(Lj) for l in range(Li)]
        builder.row([(x_cols[i], 1.0)], "eq", 0.0, "lam_x",
                    p_entries=[(col, -1.0, pid(ri, l), -1) for k, l, col in flat])
        builder.row([(x_cols[j], 1.0)], "eq", 0.0, "lam_x",
                    p_entries=[(col, -1.0, pid(rj, k), -1) for k, l, col in flat])
        builder.row([(w_cols[(i, j)], 1.0)], "eq", 0.0, "lam_w",
                    p_entries=[(col, -1.0, pid(ri, l), pid(rj, k)) for k, l, col in flat])
        builder.row([(col, 1.0) for _, _, col in flat], "eq", 1.0, "lam_sum")
        for l in range(Li):
            entries = [(lam[k][l], 1.0) for k in range(Lj)]
            entries += [(y_groups[ri][c], -1.0) for c in _adjacent_cells(l, Li - 1)]
            builder.row(entries, "le", 0.0, "lam_active", block="Mbar")
        for k in range(Lj):
            entries = [(lam[k][l], 1.0) for l in range(Li)]
            entries += [(y_groups[rj][c], -1.0) for c in _adjacent_cells(k, Lj - 1)]
            builder.row(entries, "le", 0.0, "lam_active", block="Mbar")

    for var in q.quadratic_indices:
        r = position[var]
        L = len(point_lists[r])
        x, w = x_cols[var], w_cols[(var, var)]
        lam = [builder.column(f"L[{var}][{l}]") for l in range(L)]
        builder.row([(x, 1.0)], "eq", 0.0, "quad_x",
                    p_entries=[(lam[l], -1.0, pid(r, l), -1) for l in range(L)])
        builder.row([(w, 1.0)], "le", 0.0, "quad_w",
                    p_entries=[(lam[l], -1.0, pid(r, l), pid(r, l)) for l in range(L)])
        builder.row([(col, 1.0) for col in lam], "eq", 1.0, "lam_sum")
        for l in range(L):
            entries = [(lam[l], 1.0)] + [(y_groups[r][c], -1.0) for c in _adjacent_cells(l, L - 1)]
            builder.row(entries, "le", 0.0, "lam_active", block="Mbar")
        builder.row([(x, 1.0)], "ge", 0.0, "cell_lo",
                    p_entries=[(y, -1.0, pid(r, c), -1) for c, y in enumerate(y_groups[r])])
        builder.row([(x, 1.0)], "le", 0.0, "cell_hi",
                    p_entries=[(y, -1.0, pid(r, c + 1), -1) for c, y in enumerate(y_groups[r])])
        cut_kind = "oa" if kind == "pmr_oa" else "tangent"
        for l in range(L):
            builder.row([(w, 1.0)], "ge", 0.0, cut_kind,
                        p_entries=[(x, -2.0, pid(r, l), -1)], rhs_terms=[(-1.0, pid(r, l), pid(r, l))])
        if kind == "pmr_oa":
            _oa_rows(builder, x, w, (oa or OaConfig.uniform()).grid, "oa")

    lp, roles = builder.build()
    return PmrModel(
        lp=lp, y_groups=tuple(y_groups), kind=kind, c0=q.c0, x_cols=x_cols, w_cols=w_cols, nc=nc,
        partition=P, point_values=values, point_offsets=offsets,
        coef_terms=np.array(builder.coef_terms, dtype=float).reshape(-1, 5),
        rhs_terms=np.array(builder.rhs_terms, dtype=float).reshape(-1, 4),
        tangent_quads=tuple(q.quadratic_indices) if kind == "pmr" else (), col_roles=roles,
    )


def build_pmr(q: Qcqp, P: PartitionMatrix) -> PmrModel:
    """Piecewise McCormick MILP; the convex rows W_kk >= x_k^2 are left to tangent separation"""
    return _build_partitioned(q, P, None, "pmr")


def build_pmr_oa(q: Qcqp, P: PartitionMatrix, oa: Optional[OaConfig] = None) -> PmrModel:
    """Piecewise McCormick MILP with W_kk >= x_k^2 replaced by tangents at partition and grid points"""
    return _build_partitioned(q, P, oa, "pmr_oa")


def add_cuts(m: PmrModel, cuts: Sequence[Tuple[int, float]], kind: str = "tangent") -> PmrModel:
    """Append tangent cuts W_kk >= 2a x_k - a^2 given as (k, a) pairs"""
    if not cuts:
        return m
    rows = sp.lil_matrix((len(cuts), m.lp.n))
    rhs = []
    for r, (k, a) in enumerate(cuts):
        rows[r, m.w_cols[(k, k)]] = 1.0
        rows[r, m.x_cols[k]] = -2.0 * a
        rhs.append(-a * a)
    lp = m.lp.with_rows(rows.tocsr(), ["ge"] * len(cuts), rhs, [kind] * len(cuts))
    return replace(m, lp=lp, col_roles=m.col_roles + ("slack",) * len(cuts))


def x_solution(m: PmrModel, z: np.ndarray) -> np.ndarray:
    return np.asarray(z)[list(m.x_cols)].copy()


def solve_relaxation(m: PmrModel, rel_gap: float = MIP_REL_GAP, abs_gap: float = MIP_ABS_GAP,
                     time_limit: Optional[float] = None) -> Tuple[PmrModel, MilpSolution]:
    """Solve the MILP, separating tangent cuts for W_kk >= x_k^2 until satisfied"""
    sol = solve_milp(m, rel_gap=rel_gap, abs_gap=abs_gap, time_limit=time_limit)
    for round_no in range(TANGENT_ROUNDS):
        if sol.x is None or not m.tangent_quads:
            break
        x = x_solution(m, sol.x)
        cuts = []
        for k in m.tangent_quads:
            if x[k] * x[k] - sol.x[m.w_cols[(k, k)]] > TANGENT_TOL:
                cuts.append((k, float(x[k])))
        if not cuts:
            break
        logger.debug(f"Tangent round {round_no + 1}: {len(cuts)} cuts")
        m = add_cuts(m, cuts)
        sol = solve_milp(m, rel_gap=rel_gap, abs_gap=abs_gap, time_limit=time_limit)
    return m, sol


def active_cells(P: PartitionMatrix, x: np.ndarray) -> Tuple[int, ...]:
    """Index of the distinct-point cell holding x for every partitioned variable"""
    if not P.nc:
        raise ValueError("partition rows must be keyed to variables")
    cells = []
    for r, var in enumerate(P.nc):
        pts = P.points(r)
        c = int(np.searchsorted(pts, x[var], side="right")) - 1
        cells.append(min(max(c, 0), len(pts) - 2))
    return tuple(cells)


def _forced_zero_columns(A: sp.csr_matrix, b: np.ndarray, lb: np.ndarray) -> np.ndarray:
    """Columns pinned to zero by a row sum(a_j z_j) = 0 with a_j > 0 and z_j >= 0"""
    forced = np.zeros(A.shape[1], dtype=bool)
    for r in np.flatnonzero(np.abs(b) <= 1e-12):
        cols = A.indices[A.indptr[r]:A.indptr[r + 1]]
        vals = A.data[A.indptr[r]:A.indptr[r + 1]]
        cols, vals = cols[vals != 0.0], vals[vals != 0.0]
        if cols.size and np.all(vals > 0.0) and np.all(lb[cols] == 0.0):
            forced[cols] = True
    return forced


def fix_y(m: MilpModel, y_star: Sequence[int]) -> StandardFormLp:
    """Substitute a selection into the rows and drop the indicator columns.

    Columns the selection pins to zero (weights on points away from the chosen
    cell, with their row slacks) are dropped too, and so are rows left without
    columns; col_origin and row_origin map the result back to the model.
    """
    if len(y_star) != len(m.y_groups):
        raise DimensionError("selection does not match the indicator groups")
    lp = m.lp
    y_cols = m.y_columns
    y_val = np.zeros(lp.n)
    for group, k in zip(m.y_groups, y_star):
        if not 0 <= k < len(group):
            raise DimensionError(f"selection {k} out of range")
        y_val[group[k]] = 1.0
    keep = np.setdiff1d(np.arange(lp.n), y_cols)
    b = lp.b - lp.A @ y_val
    A = lp.A[:, keep].tocsr()
    live = ~_forced_zero_columns(A, b, lp.lb[keep])
    keep, A = keep[live], A[:, np.flatnonzero(live)].tocsr()
    row_keep = np.flatnonzero((A.getnnz(axis=1) > 0) | (np.abs(b) > 1e-12))
    return StandardFormLp.build(
        lp.c[keep], A[row_keep], b[row_keep], lb=lp.lb[keep], ub=lp.ub[keep],
        row_block=[lp.row_block[r] for r in row_keep], row_kind=[lp.row_kind[r] for r in row_keep],
        col_origin=keep, row_origin=row_keep,
    )


def _term_derivative(m: PmrModel, f1: np.ndarray, f2: np.ndarray, g: int) -> np.ndarray:
    v1 = np.where(f1 >= 0, m.point_values[np.maximum(f1, 0)], 1.0)
    v2 = np.where(f2 >= 0, m.point_values[np.maximum(f2, 0)], 1.0)
    return (f1 == g) * v2 + (f2 == g) * v1


def _entry_share(m: PmrModel, i: int, j: int) -> Tuple[int, float]:
    """Point id carrying matrix entry (i, j) and the share of its derivative; share 0 for pinned groups"""
    P = m.partition
    if P is None:
        raise ValueError("model has no partition")
    if not (0 <= i < len(P)) or not (1 <= j <= P.width - 2):
        raise IndexError(f"({i}, {j}) is not a free partition entry")
    for k, group in enumerate(P.groups(i)):
        if j in group:
            if 0 in group or P.width - 1 in group:
                return m.point_id(i, k), 0.0
            return m.point_id(i, k), 1.0 / len(group)
    raise IndexError(f"({i}, {j}) not found")


def partition_jacobian(m: PmrModel, i: int, j: int) -> Tuple[sp.csr_matrix, np.ndarray]:
    """Derivatives of the constraint matrix and right-hand side with respect to P[i, j].

    Coinciding points share model columns; the derivative of a shared point is
    split evenly over its free entries, and groups pinned to an endpoint are
    treated as fixed.
    """
    g, share = _entry_share(m, i, j)
    rows, cols = m.lp.A.shape
    dA = sp.csr_matrix((rows, cols))
    db = np.zeros(rows)
    if share == 0.0:
        return dA, db
    ct = m.coef_terms
    if ct.size:
        deriv = ct[:, 2] * _term_derivative(m, ct[:, 3].astype(int), ct[:, 4].astype(int), g) * share
        nz = deriv != 0
        dA = sp.csr_matrix((deriv[nz], (ct[nz, 0].astype(int), ct[nz, 1].astype(int))), shape=(rows, cols))
    rt = m.rhs_terms
    if rt.size:
        deriv = rt[:, 1] * _term_derivative(m, rt[:, 2].astype(int), rt[:, 3].astype(int), g) * share
        np.add.at(db, rt[:, 0].astype(int), deriv)
    return dA, db


def value_gradient(m: PmrModel, duals: np.ndarray, z: np.ndarray) -> np.ndarray:
    """d(optimal value)/dP over all matrix entries for a primal-dual pair of the fixed-selection LP.

    duals are per model row and z per model column; the result has the shape of
    the partition matrix with zeros in the endpoint columns.
    """
    P = m.partition
    grad_points = np.zeros(m.point_values.size)
    vals = np.concatenate([m.point_values, [1.0]])

    ct = m.coef_terms
    if ct.size:
        r, c = ct[:, 0].astype(int), ct[:, 1].astype(int)
        f1, f2 = ct[:, 3].astype(int), ct[:, 4].astype(int)
        weight = -duals[r] * z[c] * ct[:, 2]
        mask = f1 >= 0
        np.add.at(grad_points, f1[mask], (weight * vals[f2])[mask])
        mask = f2 >= 0
        np.add.at(grad_points, f2[mask], (weight * vals[f1])[mask])
    rt = m.rhs_terms
    if rt.size:
        r = rt[:, 0].astype(int)
        f1, f2 = rt[:, 2].astype(int), rt[:, 3].astype(int)
        weight = duals[r] * rt[:, 1]
        mask = f1 >= 0
        np.add.at(grad_points, f1[mask], (weight * vals[f2])[mask])
        mask = f2 >= 0
        np.add.at(grad_points, f2[mask], (weight * vals[f1])[mask])

    grad = np.zeros(P.rows.shape)
    for i in range(len(P)):
        for k, group in enumerate(P.groups(i)):
            free = [j for j in group if 0 < j < P.width - 1]
            if not free or len(free) != len(group):
                continue
            grad[i, free] = grad_points[m.point_id(i, k)] / len(free)
    return grad

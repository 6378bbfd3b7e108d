"""
QCQP data model: instances, evaluation, unit-box normalization and a grid oracle
"""

import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as sparse_norm

from config import FEAS_TOL

logger = logging.getLogger(__name__)


class QcqpError(Exception):
    """Base class for errors raised by the optimizer"""


class DimensionError(QcqpError, ValueError):
    """Inputs with mismatched or out-of-range dimensions"""


class InfeasibleError(QcqpError):
    """A relaxation (and therefore the problem) has no feasible point"""

    def __init__(self, message: str, certificate: str = ""):
        super().__init__(message)
        self.certificate = certificate


class NumericalError(QcqpError):
    """Linear algebra broke down beyond recovery"""


class LimitExceededError(QcqpError):
    """A combinatorial or resource limit was hit"""


def _symmetric(n: int, triplets) -> sp.csr_matrix:
    """Build a symmetric sparse matrix from (i, j, v) triplets by averaging with the transpose"""
    if triplets is None or len(triplets) == 0:
        return sp.csr_matrix((n, n))
    arr = np.asarray(triplets, dtype=float).reshape(-1, 3)
    rows = arr[:, 0].astype(int)
    cols = arr[:, 1].astype(int)
    if rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n:
        raise DimensionError(f"matrix index out of range for n={n}")
    mat = sp.coo_matrix((arr[:, 2], (rows, cols)), shape=(n, n)).tocsr()
    sym = ((mat + mat.T) * 0.5).tocsr()
    sym.eliminate_zeros()
    return sym


def _as_csr(n: int, mat) -> sp.csr_matrix:
    if mat is None:
        return sp.csr_matrix((n, n))
    if sp.issparse(mat):
        mat = mat.tocsr().astype(float)
    else:
        mat = sp.csr_matrix(np.asarray(mat, dtype=float))
    if mat.shape != (n, n):
        raise DimensionError(f"expected a {n}x{n} matrix, got {mat.shape}")
    sym = ((mat + mat.T) * 0.5).tocsr()
    sym.eliminate_zeros()
    return sym


def _vector(n: int, values, name: str) -> np.ndarray:
    vec = np.zeros(n) if values is None else np.asarray(values, dtype=float).ravel()
    if vec.shape != (n,):
        raise DimensionError(f"{name} must have length {n}, got {vec.shape}")
    vec = vec.copy()
    vec.setflags(write=False)
    return vec


@dataclass(frozen=True)
class Constraint:
    """One quadratic constraint x'Qx + r'x (sense) b with sense 'le' or 'eq'"""
    Q: sp.csr_matrix
    r: np.ndarray
    sense: str
    b: float

    def value(self, x: np.ndarray) -> float:
        return float(x @ (self.Q @ x) + self.r @ x)


@dataclass(frozen=True)
class InstanceMeta:
    """Provenance of a generated instance"""
    family: str = "custom"
    theta: Tuple[float, ...] = ()
    seed: int = 0
    index: int = 0
    v_star: Optional[float] = None
    v_star_source: Optional[str] = None
    flags: Tuple[str, ...] = ()

    def to_dict(self) -> Dict:
        data = {
            "family": self.family,
            "theta": [float(t) for t in self.theta],
            "seed": int(self.seed),
            "index": int(self.index),
        }
        if self.v_star is not None:
            data["v_star"] = float(self.v_star)
            data["v_star_source"] = self.v_star_source or "unknown"
        if self.flags:
            data["flags"] = list(self.flags)
        return data

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "InstanceMeta":
        if not data:
            return cls()
        return cls(
            family=data.get("family", "custom"),
            theta=tuple(float(t) for t in data.get("theta", [])),
            seed=int(data.get("seed", 0)),
            index=int(data.get("index", 0)),
            v_star=data.get("v_star"),
            v_star_source=data.get("v_star_source"),
            flags=tuple(data.get("flags", [])),
        )


@dataclass(frozen=True)
class Qcqp:
    """min x'Q0x + r0'x + c0  s.t. quadratic constraints, lower <= x <= upper"""
    n: int
    Q0: sp.csr_matrix
    r0: np.ndarray
    constraints: Tuple[Constraint, ...]
    bilinear_pairs: Tuple[Tuple[int, int], ...]
    quadratic_indices: Tuple[int, ...]
    lower: np.ndarray
    upper: np.ndarray
    c0: float = 0.0
    name: str = ""
    meta: InstanceMeta = field(default_factory=InstanceMeta)

    @classmethod
    def build(cls, n: int, Q0=None, r0=None, constraints: Sequence = (),
              lower=None, upper=None, bilinear_pairs=None, quadratic_indices=None,
              c0: float = 0.0, name: str = "", meta: Optional[InstanceMeta] = None) -> "Qcqp":
        """Validate and assemble an instance.

        Constraints are (Q, r, sense, b) tuples or Constraint objects; Q may be a
        dense/sparse matrix or a list of (i, j, v) triplets. When the bilinear pairs
        or quadratic indices are omitted they are derived from the nonzero pattern.
        """
        if n < 1:
            raise DimensionError("an instance needs at least one variable")
        q0 = _as_matrix(n, Q0)
        cons = []
        for item in constraints:
            if isinstance(item, Constraint):
                Qi, ri, sense, bi = item.Q, item.r, item.sense, item.b
            else:
                Qi, ri, sense, bi = item
            if sense not in ("le", "eq"):
                raise ValueError(f"unknown constraint sense '{sense}'")
            cons.append(Constraint(_as_matrix(n, Qi), _vector(n, ri, "constraint r"), sense, float(bi)))

        lo = _vector(n, np.zeros(n) if lower is None else lower, "lower")
        hi = _vector(n, np.ones(n) if upper is None else upper, "upper")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise QcqpError("unbounded variables are not supported")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")

        pattern = set()
        for mat in [q0] + [c.Q for c in cons]:
            coo = mat.tocoo()
            for i, j in zip(coo.row, coo.col):
                pattern.add((int(min(i, j)), int(max(i, j))))

        if bilinear_pairs is None:
            pairs = sorted((i, j) for i, j in pattern if i != j)
        else:
            pairs = sorted({(min(int(i), int(j)), max(int(i), int(j))) for i, j in bilinear_pairs})
        if quadratic_indices is None:
            quads = sorted(i for i, j in pattern if i == j)
        else:
            quads = sorted({int(k) for k in quadratic_indices})

        for i, j in pairs:
            if i == j or j >= n or i < 0:
                raise DimensionError(f"invalid bilinear pair ({i}, {j})")
        for k in quads:
            if k < 0 or k >= n:
                raise DimensionError(f"invalid quadratic index {k}")
        allowed = set(pairs) | {(k, k) for k in quads}
        stray = pattern - allowed
        if stray:
            raise ValueError(f"quadratic terms outside the declared pairs: {sorted(stray)[:5]}")

        return cls(n=n, Q0=q0, r0=_vector(n, r0, "r0"), constraints=tuple(cons),
                   bilinear_pairs=tuple(pairs), quadratic_indices=tuple(quads),
                   lower=lo, upper=hi, c0=float(c0), name=name,
                   meta=meta if meta is not None else InstanceMeta())

    @property
    def is_unit_box(self) -> bool:
        return bool(np.all(self.lower == 0.0) and np.all(self.upper == 1.0))


def _as_matrix(n: int, mat) -> sp.csr_matrix:
    """Lists are (i, j, v) triplets as stored in JSON; arrays and sparse matrices are taken as is"""
    if mat is None:
        return sp.csr_matrix((n, n))
    if isinstance(mat, (list, tuple)):
        return _symmetric(n, mat)
    return _as_csr(n, mat)


def from_dense(Q0, r0, constraints=(), lower=None, upper=None, **kwargs) -> Qcqp:
    """Build an instance from dense numpy data"""
    r0 = np.asarray(r0, dtype=float).ravel()
    n = r0.shape[0]
    cons = [(sp.csr_matrix(np.asarray(Q, dtype=float)), r, sense, b) for Q, r, sense, b in constraints]
    return Qcqp.build(n, sp.csr_matrix(np.asarray(Q0, dtype=float)), r0, cons, lower, upper, **kwargs)


def example_one() -> Qcqp:
    """min x  s.t.  x^2 >= 0.16,  0 <= x <= 1"""
    return Qcqp.build(
        1, Q0=None, r0=[1.0],
        constraints=[([[0, 0, -1.0]], [0.0], "le", -0.16)],
        quadratic_indices=[0], name="example_one",
    )


def nonconvex_indices(q: Qcqp) -> Tuple[int, ...]:
    """Variables appearing in a bilinear pair or a quadratic term"""
    members = {k for pair in q.bilinear_pairs for k in pair} | set(q.quadratic_indices)
    return tuple(sorted(members))


def _check_point(q: Qcqp, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (q.n,):
        raise DimensionError(f"point has dimension {x.shape[0]}, expected {q.n}")
    return x


def evaluate_objective(q: Qcqp, x) -> float:
    x = _check_point(q, x)
    return float(x @ (q.Q0 @ x) + q.r0 @ x + q.c0)


def constraint_residuals(q: Qcqp, x) -> np.ndarray:
    """g_i(x) - b_i for every constraint"""
    x = _check_point(q, x)
    return np.array([c.value(x) - c.b for c in q.constraints])


def check_feasible(q: Qcqp, x, tol: float = FEAS_TOL) -> Tuple[bool, float]:
    """Return (feasible, largest violation) over constraints and the box"""
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    x = _check_point(q, x)
    violation = 0.0
    for c in q.constraints:
        gap = c.value(x) - c.b
        violation = max(violation, abs(gap) if c.sense == "eq" else max(0.0, gap))
    box = max(0.0, float(np.max(q.lower - x)), float(np.max(x - q.upper)))
    violation = max(violation, box)
    return violation <= tol, violation


@dataclass(frozen=True)
class BoxMap:
    """Affine map between unit-box coordinates of the free variables and original coordinates"""
    n_original: int
    free: Tuple[int, ...]
    offset: np.ndarray
    scale: np.ndarray

    def to_original(self, x_unit) -> np.ndarray:
        x_unit = np.asarray(x_unit, dtype=float).ravel()
        x = self.offset.copy()
        x[list(self.free)] = self.offset[list(self.free)] + self.scale * x_unit
        return x

    def to_unit(self, x_orig) -> np.ndarray:
        x_orig = np.asarray(x_orig, dtype=float).ravel()
        idx = list(self.free)
        return (x_orig[idx] - self.offset[idx]) / self.scale

    @property
    def is_identity(self) -> bool:
        return (len(self.free) == self.n_original and bool(np.all(self.offset == 0.0))
                and bool(np.all(self.scale == 1.0)))


def normalize_to_unit_box(q: Qcqp) -> Tuple[Qcqp, BoxMap]:
    """Rescale every free variable to [0, 1]; fixed variables are substituted out.

    With x = l + S u on the free block, x'Qx + r'x becomes
    u'(S Q_ff S)u + (S(2(Q l)_f + r_f))'u + (l'Ql + r'l).
    """
    span = q.upper - q.lower
    free = tuple(int(i) for i in np.flatnonzero(span > 0))
    if not free:
        raise QcqpError("every variable is fixed; nothing to optimize")
    offset = q.lower.copy()
    scale = span[list(free)].copy()
    box_map = BoxMap(q.n, free, offset, scale)
    if box_map.is_identity:
        return q, box_map

    idx = list(free)
    D = sp.diags(scale)

    def transform(Q, r):
        Ql = Q @ offset
        Q_new = (D @ Q[idx][:, idx] @ D).tocsr()
        r_new = scale * (2.0 * Ql[idx] + r[idx])
        const = float(offset @ Ql + r @ offset)
        return Q_new, r_new, const

    Q0, r0, c_obj = transform(q.Q0, q.r0)
    cons = []
    for c in q.constraints:
        Qi, ri, ci = transform(c.Q, c.r)
        cons.append((Qi, ri, c.sense, c.b - ci))

    position = {old: new for new, old in enumerate(free)}
    pairs = [(position[i], position[j]) for i, j in q.bilinear_pairs if i in position and j in position]
    quads = [position[k] for k in q.quadratic_indices if k in position]
    unit = Qcqp.build(len(free), Q0, r0, cons, bilinear_pairs=pairs, quadratic_indices=quads,
                      c0=q.c0 + c_obj, name=q.name, meta=q.meta)
    logger.debug(f"Normalized {q.name or 'instance'}: {q.n - len(free)} fixed variables removed")
    return unit, box_map


@dataclass(frozen=True)
class GridResult:
    """Best feasible grid point, or status 'infeasible_at_resolution'"""
    status: str
    value: float
    point: Optional[np.ndarray]
    error_bound: float


def brute_force_optimum(q: Qcqp, grid_points_per_dim: int = 101, tol: float = FEAS_TOL,
                        chunk: int = 20000) -> GridResult:
    """Exhaustive grid search for tiny instances.

    The error bound is the objective's Lipschitz constant over the box times the
    largest distance from any box point to the grid; it ignores constraint curvature.
    """
    if grid_points_per_dim < 11:
        raise ValueError("grid_points_per_dim must be at least 11")
    if q.n > 6:
        logger.warning(f"Grid search over {q.n} variables will be slow")
    axes = [np.linspace(q.lower[i], q.upper[i], grid_points_per_dim) for i in range(q.n)]

    radius = np.maximum(np.abs(q.lower), np.abs(q.upper))
    lipschitz = 2.0 * sparse_norm(q.Q0) * float(np.linalg.norm(radius)) + float(np.linalg.norm(q.r0))
    half_cell = (q.upper - q.lower) / (2.0 * (grid_points_per_dim - 1))
    error_bound = lipschitz * float(np.linalg.norm(half_cell))

    best_value = math.inf
    best_point = None
    product = itertools.product(*axes)
    while True:
        block = np.array(list(itertools.islice(product, chunk)), dtype=float)
        if block.size == 0:
            break
        block = block.reshape(-1, q.n)
        violation = np.zeros(block.shape[0])
        for c in q.constraints:
            g = np.einsum("ij,ij->i", block, (c.Q @ block.T).T) + block @ c.r - c.b
            violation = np.maximum(violation, np.abs(g) if c.sense == "eq" else g)
        feasible = violation <= tol
        if not np.any(feasible):
            continue
        pts = block[feasible]
        values = np.einsum("ij,ij->i", pts, (q.Q0 @ pts.T).T) + pts @ q.r0 + q.c0
        k = int(np.argmin(values))
        if values[k] < best_value:
            best_value = float(values[k])
            best_point = pts[k].copy()

    if best_point is None:
        return GridResult("infeasible_at_resolution", math.inf, None, error_bound)
    return GridResult("optimal", best_value, best_point, error_bound)


def _triplets(mat: sp.csr_matrix) -> List[List]:
    coo = mat.tocoo()
    order = np.lexsort((coo.col, coo.row))
    return [[int(coo.row[k]), int(coo.col[k]), float(coo.data[k])] for k in order]


def instance_to_dict(q: Qcqp) -> Dict:
    data = {
        "n": q.n,
        "objective": {"Q": _triplets(q.Q0), "r": [float(v) for v in q.r0]},
        "constraints": [
            {"Q": _triplets(c.Q), "r": [float(v) for v in c.r], "sense": c.sense, "b": float(c.b)}
            for c in q.constraints
        ],
        "bilinear_pairs": [[i, j] for i, j in q.bilinear_pairs],
        "quadratic_indices": list(q.quadratic_indices),
        "lower": [float(v) for v in q.lower],
        "upper": [float(v) for v in q.upper],
        "meta": q.meta.to_dict(),
    }
    if q.c0 != 0.0:
        data["c0"] = float(q.c0)
    if q.name:
        data["name"] = q.name
    return data


def instance_from_dict(data: Dict) -> Qcqp:
    try:
        n = int(data["n"])
        obj = data["objective"]
        cons = [(c["Q"], c["r"], c["sense"], c["b"]) for c in data.get("constraints", [])]
        return Qcqp.build(
            n, Q0=obj.get("Q", []), r0=obj.get("r"), constraints=cons,
            lower=data.get("lower"), upper=data.get("upper"),
            bilinear_pairs=data.get("bilinear_pairs"),
            quadratic_indices=data.get("quadratic_indices"),
            c0=data.get("c0", 0.0), name=data.get("name", ""),
            meta=InstanceMeta.from_dict(data.get("meta")),
        )
    except KeyError as e:
        raise ValueError(f"instance JSON is missing field {e}") from e


def dumps_instance(q: Qcqp) -> str:
    return json.dumps(instance_to_dict(q), indent=2, sort_keys=True) + "\n"


def save_instance(q: Qcqp, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_instance(q), encoding="utf-8")
    return path


def load_instance(path) -> Qcqp:
    path = Path(path)
    q = instance_from_dict(json.loads(path.read_text(encoding="utf-8")))
    if not q.name:
        q = replace(q, name=path.stem)
    return q

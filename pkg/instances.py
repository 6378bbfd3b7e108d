"""
Deterministic generators for the random bilinear, random QCQP and pooling families.

Every random draw comes from a Philox generator keyed by
SeedSequence([seed, family code, size, stream, index]):

    stream 0   base data shared by every instance of the family
    stream 1   per-instance parameters, keyed by the instance index
    stream 2   pooling extra-edge draws, keyed by the attempt number

so instance i is the same whether it is generated alone or in a batch.

Random families (all on the unit box):

    min  x'Q0(t)x + r0(t)'x
    s.t. x'Qk(t)x + rk(t)'x <= 1        k = 1..n
         a_j'x = 1                      j = 1..floor(0.2n)

with Qk(t) = Qbar_k + sum_l t[3k+l] Qtil_{k,l} and rk(t) likewise for
k <= floor(0.2n); later rows are fixed. Base draws happen in this order:
bilinear pair choice, quadratic index choice, per row (Qbar, diagonal, rbar),
per parametrized row and l (Gamma, diagonal Gamma, delta), b, a, d.

Pooling (pq-formulation) variable layout:

    [ q_ip for each input->pool edge | y_pj for each pool->output edge |
      x_ij for each input->output edge ]

bilinear pairs (q_ip, y_pj) for every i feeding p and j fed by p. Rows in
order: proportions (eq), input capacity, pool capacity, output demand,
quality upper bound, quality lower bound, pq reinforcement per (p, j) (eq),
pq reinforcement per (i, p).
"""

import hashlib
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from config import (FAMILIES, POOLING_BLOCKS, POOLING_EDGE_RETRIES, POOLING_EXTRA_EDGES,
                    POOLING_PERTURBATION)
from driver import default_starts, local_search
from model import InstanceMeta, Qcqp, save_instance

logger = logging.getLogger(__name__)

FAMILY_CODES = {"bilinear": 1, "qcqp": 2, "pooling": 3}

STREAM_BASE = 0
STREAM_THETA = 1
STREAM_EDGES = 2

# rows whose right-hand side is this small are not rescaled
RESCALE_TOL = 1e-9


@dataclass(frozen=True)
class FamilySpec:
    family: str
    n: int = 10
    count: int = 1
    seed: int = 0
    first_index: int = 0
    blocks: int = POOLING_BLOCKS
    extra_edges: int = POOLING_EXTRA_EDGES
    perturbation: float = POOLING_PERTURBATION

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family '{self.family}'")
        if self.family != "pooling" and self.n < 2:
            raise ValueError("random families need n >= 2")
        if self.family == "pooling" and self.blocks < 1:
            raise ValueError("pooling needs at least one block")
        if self.count < 0 or self.first_index < 0 or self.seed < 0:
            raise ValueError("count, first_index and seed must be non-negative")
        if not 0.0 <= self.perturbation < 1.0:
            raise ValueError("perturbation must lie in [0, 1)")

    @property
    def n_bilinear(self) -> int:
        return min(5 * self.n, math.comb(self.n, 2))

    @property
    def n_quadratic(self) -> int:
        return self.n // 4 if self.family == "qcqp" else 0

    @property
    def m_inequality(self) -> int:
        return self.n

    @property
    def m_equality(self) -> int:
        return self.n // 5

    @property
    def n_parametrized(self) -> int:
        """Rows 0..n_parametrized-1 (objective first) depend on theta"""
        return self.m_inequality // 5 + 1

    @property
    def d_theta(self) -> int:
        if self.family == "pooling":
            return 3 * self.blocks
        return 3 * self.n_parametrized

    @property
    def size_key(self) -> int:
        return self.blocks if self.family == "pooling" else self.n

    def to_dict(self) -> Dict:
        return asdict(self)


def _rng(spec: FamilySpec, stream: int, index: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence([spec.seed, FAMILY_CODES[spec.family], spec.size_key, stream, index])
    return np.random.Generator(np.random.Philox(seq))


def _pair_matrix(n: int, pairs: np.ndarray, values: np.ndarray,
                 diag: np.ndarray = None, diag_values: np.ndarray = None) -> sp.csr_matrix:
    """Symmetric matrix with M_ij = M_ji = value on each pair and optional diagonal"""
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    data = np.concatenate([values, values])
    if diag is not None and len(diag):
        rows = np.concatenate([rows, diag])
        cols = np.concatenate([cols, diag])
        data = np.concatenate([data, diag_values])
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


@dataclass
class RandomBase:
    """Data shared by every instance of a random family"""
    pairs: np.ndarray
    quads: np.ndarray
    q_bar: List[np.ndarray]
    q_diag: List[np.ndarray]
    r_bar: List[np.ndarray]
    gamma: List[List[np.ndarray]]
    gamma_diag: List[List[np.ndarray]]
    delta: List[List[np.ndarray]]
    b: np.ndarray
    a: np.ndarray
    d: np.ndarray

    def digest(self) -> str:
        h = hashlib.sha256()
        arrays = [self.pairs, self.quads, self.b, self.a, self.d]
        arrays += self.q_bar + self.q_diag + self.r_bar
        for group in (self.gamma, self.gamma_diag, self.delta):
            for per_row in group:
                arrays += per_row
        for arr in arrays:
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def random_base(spec: FamilySpec) -> RandomBase:
    n = spec.n
    rng = _rng(spec, STREAM_BASE)
    all_pairs = np.array(list(itertools.combinations(range(n), 2)), dtype=int)
    chosen = np.sort(rng.choice(len(all_pairs), size=spec.n_bilinear, replace=False))
    pairs = all_pairs[chosen]
    quads = np.sort(rng.choice(n, size=spec.n_quadratic, replace=False)).astype(int)
    nb, nq = len(pairs), len(quads)

    q_bar, q_diag, r_bar = [], [], []
    for _ in range(spec.m_inequality + 1):
        q_bar.append(rng.uniform(-0.5, 0.5, nb))
        q_diag.append(rng.uniform(-0.5, 0.5, nq))
        r_bar.append(rng.uniform(-1.0, 1.0, n))

    gamma, gamma_diag, delta = [], [], []
    for _ in range(spec.n_parametrized):
        gamma.append([rng.uniform(0.0, 0.5, nb) for _ in range(3)])
        gamma_diag.append([rng.uniform(0.0, 0.5, nq) for _ in range(3)])
        delta.append([rng.uniform(0.0, 0.5, n) for _ in range(3)])

    b = rng.uniform(0.0, 100.0, spec.m_inequality)
    a = rng.uniform(-1.0, 1.0, (spec.m_equality, n))
    d = rng.uniform(-1.0, 1.0, spec.m_equality)
    return RandomBase(pairs, quads, q_bar, q_diag, r_bar, gamma, gamma_diag, delta, b, a, d)


def _random_row(base: RandomBase, k: int, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pair values, diagonal values and linear part of row k at theta"""
    qv, qd, r = base.q_bar[k].copy(), base.q_diag[k].copy(), base.r_bar[k].copy()
    if k < len(base.gamma):
        for l in range(3):
            t = theta[3 * k + l]
            qv += t * base.gamma[k][l] * base.q_bar[k]
            qd += t * base.gamma_diag[k][l] * base.q_diag[k]
            r += t * base.delta[k][l] * base.r_bar[k]
    return qv, qd, r


def random_instance(spec: FamilySpec, base: RandomBase, index: int) -> Qcqp:
    n = spec.n
    theta = _rng(spec, STREAM_THETA, index).uniform(-1.0, 1.0, spec.d_theta)
    flags = []

    qv, qd, r0 = _random_row(base, 0, theta)
    Q0 = _pair_matrix(n, base.pairs, qv, base.quads, qd)
    constraints = []
    for k in range(1, spec.m_inequality + 1):
        qv, qd, r = _random_row(base, k, theta)
        bk = base.b[k - 1]
        scale = 1.0 / bk if bk > RESCALE_TOL else 1.0
        if bk <= RESCALE_TOL:
            flags.append(f"unscaled_le_{k - 1}")
        constraints.append((_pair_matrix(n, base.pairs, qv * scale, base.quads, qd * scale),
                            r * scale, "le", bk * scale))
    for j in range(spec.m_equality):
        dj = base.d[j]
        scale = 1.0 / dj if abs(dj) > RESCALE_TOL else 1.0
        if abs(dj) <= RESCALE_TOL:
            flags.append(f"unscaled_eq_{j}")
        constraints.append((None, base.a[j] * scale, "eq", dj * scale))

    meta = InstanceMeta(family=spec.family, theta=tuple(float(t) for t in theta), seed=spec.seed,
                        index=index, flags=tuple(flags))
    return Qcqp.build(n, Q0=Q0, r0=r0, constraints=constraints,
                      bilinear_pairs=[tuple(p) for p in base.pairs.tolist()],
                      quadratic_indices=base.quads.tolist(),
                      name=f"{spec.family}_{n}_inst_{index:03d}", meta=meta)


def flag_if_infeasible(q: Qcqp, starts: int = 4) -> Qcqp:
    """Instance with an "infeasible" flag added when local search finds no feasible point"""
    if local_search(q, default_starts(q, starts, q.meta.index)) is not None:
        return q
    logger.warning(f"{q.name}: local search found no feasible point, kept and flagged")
    return replace(q, meta=replace(q.meta, flags=q.meta.flags + ("infeasible",)))


def _random_family(spec: FamilySpec) -> List[Tuple[Qcqp, InstanceMeta]]:
    base = random_base(spec)
    out = []
    for index in range(spec.first_index, spec.first_index + spec.count):
        q = random_instance(spec, base, index)
        q = flag_if_infeasible(q)
        out.append((q, q.meta))
    flagged = sum(1 for q, _ in out if "infeasible" in q.meta.flags)
    logger.info(f"Generated {len(out)} {spec.family} instances with n={spec.n}, |B|={spec.n_bilinear}, "
                f"|Q|={spec.n_quadratic}, d_theta={spec.d_theta}")
    if flagged:
        logger.info(f"{flagged} of {len(out)} instances flagged infeasible")
    return out


def gen_bilinear(spec: FamilySpec) -> List[Tuple[Qcqp, InstanceMeta]]:
    if spec.family != "bilinear":
        raise ValueError("gen_bilinear needs a bilinear FamilySpec")
    return _random_family(spec)


def gen_qcqp(spec: FamilySpec) -> List[Tuple[Qcqp, InstanceMeta]]:
    if spec.family != "qcqp":
        raise ValueError("gen_qcqp needs a qcqp FamilySpec")
    return _random_family(spec)


# Haverly's first pooling instance: three inputs, one pool, two outputs
HAVERLY_INPUTS = ((3.0, 6.0), (1.0, 16.0), (2.0, 10.0))  # (quality, cost)
HAVERLY_OUTPUTS = ((9.0, 100.0), (15.0, 200.0))  # (price, demand)
HAVERLY_POOL_FEEDS = (0, 1)
HAVERLY_DIRECT = (2,)
HAVERLY_INPUT_CAPACITY = 300.0
HAVERLY_POOL_CAPACITY = 300.0


@dataclass
class PoolingNetwork:
    """Nominal network before per-instance quality perturbation; amounts already rescaled"""
    quality: np.ndarray
    cost: np.ndarray
    input_cap: np.ndarray
    pool_cap: np.ndarray
    price: np.ndarray
    demand: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    input_pool: List[Tuple[int, int]] = field(default_factory=list)
    pool_output: List[Tuple[int, int]] = field(default_factory=list)
    input_output: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def n_inputs(self) -> int:
        return len(self.quality)

    @property
    def n_pools(self) -> int:
        return len(self.pool_cap)

    @property
    def n_outputs(self) -> int:
        return len(self.price)

    def connected_inputs(self, j: int) -> List[int]:
        feeds = {i for i, jj in self.input_output if jj == j}
        for p, jj in self.pool_output:
            if jj == j:
                feeds |= {i for i, pp in self.input_pool if pp == p}
        return sorted(feeds)

    def to_dict(self) -> Dict:
        data = {k: v.tolist() if isinstance(v, np.ndarray) else [list(e) for e in v]
                for k, v in asdict(self).items()}
        return data

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _extra_edges(spec: FamilySpec, net: PoolingNetwork, attempt: int):
    existing = set(net.input_pool) | {(-1,) + e for e in net.pool_output} | {(-2,) + e for e in net.input_output}
    candidates = []
    for i in range(net.n_inputs):
        for p in range(net.n_pools):
            if (i, p) not in existing:
                candidates.append(("ip", i, p))
        for j in range(net.n_outputs):
            if (-2, i, j) not in existing:
                candidates.append(("io", i, j))
    for p in range(net.n_pools):
        for j in range(net.n_outputs):
            if (-1, p, j) not in existing:
                candidates.append(("po", p, j))
    rng = _rng(spec, STREAM_EDGES, attempt)
    count = min(spec.extra_edges, len(candidates))
    picks = rng.choice(len(candidates), size=count, replace=False) if count else []
    return [candidates[k] for k in sorted(picks)]


def pooling_network(spec: FamilySpec) -> PoolingNetwork:
    """Composite of perturbed Haverly blocks plus random extra edges"""
    rng = _rng(spec, STREAM_BASE)
    quality, cost, price, demand = [], [], [], []
    input_pool, pool_output, input_output = [], [], []
    for blk in range(spec.blocks):
        factors = rng.uniform(0.8, 1.2, len(HAVERLY_INPUTS) * 2 + len(HAVERLY_OUTPUTS) * 2)
        f = iter(factors)
        for qual, c in HAVERLY_INPUTS:
            quality.append(qual * next(f))
            cost.append(c * next(f))
        for pr, dem in HAVERLY_OUTPUTS:
            price.append(pr * next(f))
            demand.append(dem * next(f))
        base_in, base_out = 3 * blk, 2 * blk
        input_pool += [(base_in + i, blk) for i in HAVERLY_POOL_FEEDS]
        pool_output += [(blk, base_out + j) for j in range(len(HAVERLY_OUTPUTS))]
        input_output += [(base_in + i, base_out + j) for i in HAVERLY_DIRECT for j in range(len(HAVERLY_OUTPUTS))]

    n_in, n_pool = 3 * spec.blocks, spec.blocks
    scale = max(demand)
    net = PoolingNetwork(
        quality=np.array(quality), cost=np.array(cost) / max(cost),
        input_cap=np.full(n_in, HAVERLY_INPUT_CAPACITY / scale),
        pool_cap=np.full(n_pool, HAVERLY_POOL_CAPACITY / scale),
        price=np.array(price) / max(cost), demand=np.array(demand) / scale,
        q_min=np.zeros(len(price)), q_max=np.zeros(len(price)),
        input_pool=input_pool, pool_output=pool_output, input_output=input_output)

    for attempt in range(POOLING_EDGE_RETRIES):
        extra = _extra_edges(spec, net, attempt)
        trial_ip = sorted(net.input_pool + [(a, b) for kind, a, b in extra if kind == "ip"])
        trial_po = sorted(net.pool_output + [(a, b) for kind, a, b in extra if kind == "po"])
        trial_io = sorted(net.input_output + [(a, b) for kind, a, b in extra if kind == "io"])
        trial = PoolingNetwork(net.quality, net.cost, net.input_cap, net.pool_cap, net.price, net.demand,
                               net.q_min, net.q_max, trial_ip, trial_po, trial_io)
        if all(trial.connected_inputs(j) for j in range(trial.n_outputs)):
            net = trial
            break
        logger.warning(f"Pooling edge draw {attempt} left an output without supply; redrawing")
    else:
        raise ValueError("could not draw a pooling network where every output has a supply path")

    alpha = rng.uniform(0.2, 0.4, net.n_outputs)
    beta = rng.uniform(0.6, 0.8, net.n_outputs)
    for j in range(net.n_outputs):
        reach = net.quality[net.connected_inputs(j)]
        c_lo, c_hi = reach.min(), reach.max()
        net.q_min[j] = c_lo + alpha[j] * (c_hi - c_lo)
        net.q_max[j] = c_lo + beta[j] * (c_hi - c_lo)
    return net


def pooling_instance(spec: FamilySpec, net: PoolingNetwork, index: int) -> Qcqp:
    theta = _rng(spec, STREAM_THETA, index).uniform(-1.0, 1.0, net.n_inputs)
    quality = net.quality * (1.0 + spec.perturbation * theta)

    q_idx = {e: k for k, e in enumerate(net.input_pool)}
    y_idx = {e: len(q_idx) + k for k, e in enumerate(net.pool_output)}
    x_idx = {e: len(q_idx) + len(y_idx) + k for k, e in enumerate(net.input_output)}
    n = len(q_idx) + len(y_idx) + len(x_idx)

    upper = np.ones(n)
    for (p, j), k in y_idx.items():
        upper[k] = min(net.pool_cap[p], net.demand[j])
    for (i, j), k in x_idx.items():
        upper[k] = min(net.input_cap[i], net.demand[j])

    # (q column, y column, i, p, j) for every path input -> pool -> output
    paths = [(q_idx[(i, p)], y_idx[(p, j)], i, p, j)
             for (i, p) in net.input_pool for (pp, j) in net.pool_output if pp == p]

    def bilinear(terms):
        """Symmetric matrix whose quadratic form is sum(coef * x_a * x_b)"""
        if not terms:
            return None
        a, b, v = (np.array(t) for t in zip(*terms))
        rows = np.concatenate([a, b]).astype(int)
        cols = np.concatenate([b, a]).astype(int)
        return sp.coo_matrix((np.concatenate([v, v]) * 0.5, (rows, cols)), shape=(n, n)).tocsr()

    r0 = np.zeros(n)
    obj_terms = [(qc, yc, net.cost[i]) for qc, yc, i, p, j in paths]
    for (p, j), k in y_idx.items():
        r0[k] -= net.price[j]
    for (i, j), k in x_idx.items():
        r0[k] += net.cost[i] - net.price[j]

    rows = []
    for p in range(net.n_pools):
        r = np.zeros(n)
        for (i, pp), k in q_idx.items():
            if pp == p:
                r[k] = 1.0
        rows.append((None, r, "eq", 1.0))
    for i in range(net.n_inputs):
        r = np.zeros(n)
        for (ii, j), k in x_idx.items():
            if ii == i:
                r[k] = 1.0
        terms = [(qc, yc, 1.0) for qc, yc, ii, p, j in paths if ii == i]
        rows.append((bilinear(terms), r, "le", net.input_cap[i]))
    for p in range(net.n_pools):
        r = np.zeros(n)
        for (pp, j), k in y_idx.items():
            if pp == p:
                r[k] = 1.0
        rows.append((None, r, "le", net.pool_cap[p]))
    for j in range(net.n_outputs):
        r = np.zeros(n)
        for (p, jj), k in y_idx.items():
            if jj == j:
                r[k] = 1.0
        for (i, jj), k in x_idx.items():
            if jj == j:
                r[k] = 1.0
        rows.append((None, r, "le", net.demand[j]))
    for bound, sign in ((net.q_max, 1.0), (net.q_min, -1.0)):
        for j in range(net.n_outputs):
            r = np.zeros(n)
            for (i, jj), k in x_idx.items():
                if jj == j:
                    r[k] = sign * (quality[i] - bound[j])
            terms = [(qc, yc, sign * (quality[i] - bound[j])) for qc, yc, i, p, jj in paths if jj == j]
            rows.append((bilinear(terms), r, "le", 0.0))
    for (p, j), yk in y_idx.items():
        r = np.zeros(n)
        r[yk] = -1.0
        terms = [(qc, yc, 1.0) for qc, yc, i, pp, jj in paths if (pp, jj) == (p, j)]
        rows.append((bilinear(terms), r, "eq", 0.0))
    for (i, p), qk in q_idx.items():
        r = np.zeros(n)
        r[qk] = -net.pool_cap[p]
        terms = [(qc, yc, 1.0) for qc, yc, ii, pp, j in paths if (ii, pp) == (i, p)]
        rows.append((bilinear(terms), r, "le", 0.0))

    constraints, flags, counts = [], [], {"le": 0, "eq": 0}
    for Q, r, sense, b in rows:
        if b > RESCALE_TOL:
            Q = None if Q is None else Q / b
            r, b = r / b, 1.0
        else:
            flags.append(f"unscaled_{sense}_{counts[sense]}")
        counts[sense] += 1
        constraints.append((Q, r, sense, b))

    meta = InstanceMeta(family="pooling", theta=tuple(float(t) for t in theta), seed=spec.seed, index=index,
                        flags=tuple(flags))
    return Qcqp.build(n, Q0=bilinear(obj_terms), r0=r0, constraints=constraints,
                      lower=np.zeros(n), upper=upper,
                      bilinear_pairs=[(qc, yc) for qc, yc, *_ in paths], quadratic_indices=[],
                      name=f"pooling_{n}_inst_{index:03d}", meta=meta)


def gen_pooling(spec: FamilySpec) -> List[Tuple[Qcqp, InstanceMeta]]:
    if spec.family != "pooling":
        raise ValueError("gen_pooling needs a pooling FamilySpec")
    net = pooling_network(spec)
    out = []
    for index in range(spec.first_index, spec.first_index + spec.count):
        q = pooling_instance(spec, net, index)
        out.append((q, q.meta))
    logger.info(f"Generated {len(out)} pooling instances: {net.n_inputs} inputs, {net.n_pools} pools, "
                f"{net.n_outputs} outputs")
    return out


GENERATORS = {"bilinear": gen_bilinear, "qcqp": gen_qcqp, "pooling": gen_pooling}


def generate(spec: FamilySpec) -> List[Tuple[Qcqp, InstanceMeta]]:
    return GENERATORS[spec.family](spec)


def base_digest(spec: FamilySpec) -> str:
    if spec.family == "pooling":
        return pooling_network(spec).digest()
    return random_base(spec).digest()


def family_dir_name(spec: FamilySpec, n_variables: Optional[int] = None) -> str:
    return f"{spec.family}_{n_variables if n_variables is not None else spec.n}"


def write_family(out_dir, spec: FamilySpec) -> Tuple[Path, List[Path]]:
    """Write out_dir/{family}_{n}/inst_XXX.json plus manifest.json; returns (directory, instance paths)"""
    instances = generate(spec)
    n_vars = instances[0][0].n if instances else None
    target = Path(out_dir) / family_dir_name(spec, n_vars)
    target.mkdir(parents=True, exist_ok=True)
    paths = [save_instance(q, target / f"inst_{meta.index:03d}.json") for q, meta in instances]
    manifest = {"spec": spec.to_dict(), "base_sha256": base_digest(spec),
                "d_theta": spec.d_theta, "instances": [p.name for p in paths]}
    (target / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote {len(paths)} instances to {target}")
    return target, paths

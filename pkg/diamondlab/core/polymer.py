import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .disorder import DisorderField, DisorderSpec, Placement
from .exceptions import AddressMismatch, DepthTooLarge
from .lattice import (
    EDGE_PATH,
    LatticeParams,
    PathAddress,
    SubgraphAddress,
    count_paths,
    enumerate_paths,
    path_vertex_count,
)
from .stats import SampleSet

logger = logging.getLogger(__name__)

DEFAULT_MAX_SITES = 4**14
LOG_SPACE_THRESHOLD = 5.0


@dataclass
class PartitionResult:
    w: float
    log_w: float
    log_z: float
    n: int
    beta: float
    seed: int
    stream: int = 0


@dataclass
class GibbsPathSample:
    path: PathAddress
    # (word length, subgraph rank, branch probabilities) per decision, in draw order
    weight_trace: List[Tuple[int, int, Tuple[float, ...]]] = field(default_factory=list)


def subtree_root(field_: DisorderField, g: Optional[SubgraphAddress]) -> Tuple[int, int]:
    if g is None:
        return 0, 0
    if g.params != field_.params or g.n != field_.n:
        raise AddressMismatch("subgraph address and field disagree on (b, s, n)")
    return len(g.word), g.rank


def check_budget(params: LatticeParams, depth: int, max_sites: int, allow_large: bool):
    sites = params.bs**depth
    if sites > max_sites and not allow_large:
        raise DepthTooLarge(
            f"(bs)^{depth} = {sites} sites exceeds the budget {max_sites}; pass allow_large=True to override"
        )


def w_levels(
    field_: DisorderField,
    spec: DisorderSpec,
    beta: float,
    g: Optional[SubgraphAddress] = None,
    max_sites: int = DEFAULT_MAX_SITES,
    allow_large: bool = False,
) -> Dict[int, np.ndarray]:
    """W on every copy inside g, keyed by word length.

    ``levels[m]`` lists W(h) for the copies h of word length m inside g, in
    rank order, so ``levels[m + 1].reshape(-1, b, s)`` groups the children of
    ``levels[m]``. Vertex placement only.
    """
    if field_.placement is not Placement.VERTICES:
        raise AddressMismatch("w_levels needs a vertex field; use w_edge_recursive for edges")
    params, n = field_.params, field_.n
    top, rank0 = subtree_root(field_, g)
    check_budget(params, n - top, max_sites, allow_large)
    b, s = params.b, params.s
    levels = {n: np.ones(params.bs ** (n - top))}
    for m in range(n - 1, top - 1, -1):
        count = params.bs ** (m - top)
        start = rank0 * count * b * (s - 1)
        omega = field_.values(m + 1, start, start + count * b * (s - 1))
        e = spec.weight(beta, omega).reshape(count, b, s - 1)
        child = levels[m + 1].reshape(count, b, s)
        levels[m] = (child.prod(axis=2) * e.prod(axis=2)).sum(axis=1) / b
    return levels


def w_recursive(
    field_: DisorderField,
    spec: DisorderSpec,
    beta: float,
    g: Optional[SubgraphAddress] = None,
    max_sites: int = DEFAULT_MAX_SITES,
    allow_large: bool = False,
) -> float:
    """W_n(β; g) by the hierarchical recursion; g defaults to the whole lattice."""
    top, _ = subtree_root(field_, g)
    return float(w_levels(field_, spec, beta, g, max_sites, allow_large)[top][0])


def partition_function(field_: DisorderField, spec: DisorderSpec, beta: float, **kwargs) -> PartitionResult:
    w = w_recursive(field_, spec, beta, **kwargs)
    log_w = math.log(w)
    params, n = field_.params, field_.n
    # Z_n sums over paths; E[Z_n] = |Γ_n| exp(λ(β) (s^n - 1))
    log_z = log_w + math.log(count_paths(params, n)) + path_vertex_count(params, n) * spec.cgf(beta)
    return PartitionResult(w, log_w, log_z, n, beta, field_.master_seed, field_.stream)


def w_enumerate(field_: DisorderField, spec: DisorderSpec, beta: float, n: Optional[int] = None, cap: int = 10**6) -> float:
    """Brute-force (1/|Γ_n|) Σ_p Π_{a∈p} E_a(β) with compensated summation."""
    n = field_.n if n is None else n
    if n != field_.n:
        raise AddressMismatch(f"field has depth {field_.n}, asked for {n}")
    params = field_.params
    paths = enumerate_paths(params, n, cap)
    weights = {gen: spec.weight(beta, field_.values(gen)) for gen in range(1, n + 1)}
    terms = []
    for p in paths:
        terms.append(math.prod(float(weights[gen][rank]) for gen, rank in p.vertices))
    return math.fsum(terms) / len(paths)


def path_measure(
    field_: DisorderField, spec: DisorderSpec, beta: float, cap: int = 10**6
) -> Dict[PathAddress, float]:
    """Exact Gibbs probabilities μ_{β,n}(p) by enumeration."""
    params, n = field_.params, field_.n
    paths = enumerate_paths(params, n, cap)
    weights = {gen: spec.weight(beta, field_.values(gen)) for gen in range(1, n + 1)}
    raw = [math.prod(float(weights[gen][rank]) for gen, rank in p.vertices) for p in paths]
    total = math.fsum(raw)
    return {p.path: r / total for p, r in zip(paths, raw)}


# ---------------------------
# Edge model
# ---------------------------

def w_edge_levels(
    field_: DisorderField,
    spec: DisorderSpec,
    beta: float,
    g: Optional[SubgraphAddress] = None,
    max_sites: int = DEFAULT_MAX_SITES,
    allow_large: bool = False,
) -> Dict[int, np.ndarray]:
    if field_.placement is not Placement.EDGES:
        raise AddressMismatch("the edge model needs an edge field")
    params, n = field_.params, field_.n
    top, rank0 = subtree_root(field_, g)
    check_budget(params, n - top, max_sites, allow_large)
    leaves = params.bs ** (n - top)
    levels = {n: spec.weight(beta, field_.values(0, rank0 * leaves, (rank0 + 1) * leaves))}
    for m in range(n - 1, top - 1, -1):
        child = levels[m + 1].reshape(-1, params.b, params.s)
        levels[m] = child.prod(axis=2).sum(axis=1) / params.b
    return levels


def w_edge_recursive(
    field_: DisorderField,
    spec: DisorderSpec,
    beta: float,
    g: Optional[SubgraphAddress] = None,
    max_sites: int = DEFAULT_MAX_SITES,
    allow_large: bool = False,
) -> float:
    top, _ = subtree_root(field_, g)
    return float(w_edge_levels(field_, spec, beta, g, max_sites, allow_large)[top][0])


def w_edge_enumerate(field_: DisorderField, spec: DisorderSpec, beta: float, cap: int = 10**6) -> float:
    if field_.placement is not Placement.EDGES:
        raise AddressMismatch("the edge model needs an edge field")
    paths = enumerate_paths(field_.params, field_.n, cap)
    e = spec.weight(beta, field_.values(0))
    terms = [math.prod(float(e[rank]) for rank in p.edges) for p in paths]
    return math.fsum(terms) / len(paths)


# ---------------------------
# Gibbs path sampling
# ---------------------------

class GibbsSampler:
    """Exact sampler of μ_{β,n} on one disorder realisation.

    Subtree values are computed once (``w_levels``) and shared by every draw.
    Branch products switch to log-space when β·n exceeds ``log_space_threshold``.
    """

    def __init__(
        self,
        field_: DisorderField,
        spec: DisorderSpec,
        beta: float,
        log_space_threshold: float = LOG_SPACE_THRESHOLD,
        **budget,
    ):
        self.field = field_
        self.spec = spec
        self.beta = beta
        self.params = field_.params
        self.n = field_.n
        self.levels = w_levels(field_, spec, beta, **budget)
        self.log_space = abs(beta) * self.n > log_space_threshold
        self._weights = {gen: spec.weight(beta, field_.values(gen)) for gen in range(1, self.n + 1)}
        logger.debug("GibbsSampler ready: n=%d beta=%.4g log_space=%s", self.n, beta, self.log_space)

    def branch_probabilities(self, length: int, rank: int) -> np.ndarray:
        b, s = self.params.b, self.params.s
        child = self.levels[length + 1][rank * b * s : (rank + 1) * b * s].reshape(b, s)
        e = self._weights[length + 1][rank * b * (s - 1) : (rank + 1) * b * (s - 1)].reshape(b, s - 1)
        if self.log_space:
            logw = np.log(child).sum(axis=1) + np.log(e).sum(axis=1)
            w = np.exp(logw - logw.max())
        else:
            w = child.prod(axis=1) * e.prod(axis=1)
        return w / w.sum()

    def sample(self, rng: np.random.Generator) -> GibbsPathSample:
        trace: List[Tuple[int, int, Tuple[float, ...]]] = []
        b, s = self.params.b, self.params.s

        def draw(length: int, rank: int) -> PathAddress:
            if length == self.n:
                return EDGE_PATH
            probs = self.branch_probabilities(length, rank)
            trace.append((length, rank, tuple(float(p) for p in probs)))
            i = int(rng.choice(b, p=probs))
            segments = tuple(draw(length + 1, rank * b * s + i * s + j) for j in range(s))
            return PathAddress(i + 1, segments)

        return GibbsPathSample(draw(0, 0), trace)


def gibbs_sample_path(
    field_: DisorderField, spec: DisorderSpec, beta: float, n: Optional[int], rng: np.random.Generator
) -> GibbsPathSample:
    if n is not None and n != field_.n:
        raise AddressMismatch(f"field has depth {field_.n}, asked for {n}")
    return GibbsSampler(field_, spec, beta).sample(rng)


# ---------------------------
# Replicate sampling on the exact lattice
# ---------------------------

def _w_replicate(shared, stream: int) -> float:
    params, n, seed, spec, beta, edge, max_sites = shared
    placement = Placement.EDGES if edge else Placement.VERTICES
    f = DisorderField(params, n, seed, spec, placement, stream=stream)
    if edge:
        return w_edge_recursive(f, spec, beta, max_sites=max_sites)
    return w_recursive(f, spec, beta, max_sites=max_sites)


def chunked(indices: Sequence[int], chunks: int) -> List[List[int]]:
    chunks = max(1, min(chunks, len(indices)))
    return [list(indices[k::chunks]) for k in range(chunks)] if indices else []


def _run_chunk(job):
    task, shared, chunk = job
    return [(i, task(shared, i)) for i in chunk]


def map_replicates(task: Callable[[Any, int], Any], shared: Any, indices: Sequence[int], workers: int = 1) -> List[Any]:
    """Apply a picklable ``task(shared, index)`` to every index; results come back in index order."""
    jobs = [(task, shared, chunk) for chunk in chunked(list(indices), workers * 4)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            pairs = [pair for part in pool.map(_run_chunk, jobs) for pair in part]
    else:
        pairs = [pair for job in jobs for pair in _run_chunk(job)]
    pairs.sort(key=lambda pair: pair[0])
    return [value for _, value in pairs]


def sample_w(
    params: LatticeParams,
    spec: DisorderSpec,
    beta: float,
    n: int,
    replicates: int,
    master_seed: int,
    edge: bool = False,
    workers: int = 1,
    first_replicate: int = 0,
    max_sites: int = DEFAULT_MAX_SITES,
) -> SampleSet:
    """W_n(β) for replicates ``first_replicate ..``; replicate i uses field stream i."""
    indices = list(range(first_replicate, first_replicate + replicates))
    shared = (params, n, master_seed, spec, beta, edge, max_sites)
    values = np.array(map_replicates(_w_replicate, shared, indices, workers))
    logger.info("Sampled %d replicates of W_%d (beta=%.4g, edge=%s)", len(values), n, beta, edge)
    return SampleSet(
        tag="edge-W" if edge else "W",
        values=values,
        master_seed=master_seed,
        n=n,
        metadata={"beta": beta, "b": params.b, "s": params.s, "engine": "lattice", "first_replicate": first_replicate},
    )


# ---------------------------
# Population engine
# ---------------------------

class PopulationSampler:
    """Iterates a distributional recursion on a pool of size ``pool_size``.

    Each generation draws the b·s children of every new element through b·s
    independent permutations of the pool, so every member fills each
    (i, j) slot exactly once. Pools are re-centred on their known mean
    after every generation.
    """

    def __init__(self, params: LatticeParams, pool_size: int, rng: np.random.Generator):
        if pool_size < 2:
            raise ValueError("pool_size must be >= 2")
        self.params = params
        self.pool_size = pool_size
        self.rng = rng

    def child_indices(self) -> np.ndarray:
        """Shape (pool_size, b, s) indices into the previous pool."""
        b, s, size = self.params.b, self.params.s, self.pool_size
        perms = np.stack([self.rng.permutation(size) for _ in range(b * s)], axis=1)
        return perms.reshape(size, b, s)

    def noise(self, spec: DisorderSpec) -> np.ndarray:
        """Fresh disorder on the b(s-1) interior vertices of every new element."""
        b, s = self.params.b, self.params.s
        return spec.sample(self.rng, (self.pool_size, b, s - 1))

    def draw(self, pool: np.ndarray, size: int) -> np.ndarray:
        if size > pool.size:
            raise ValueError(f"cannot draw {size} values from a pool of {pool.size}")
        return pool[self.rng.permutation(pool.size)[:size]]


def population_w(
    params: LatticeParams,
    spec: DisorderSpec,
    beta: float,
    n: int,
    pool_size: int,
    rng: np.random.Generator,
    edge: bool = False,
) -> np.ndarray:
    """Pool approximating the law of W_n(β) (vertex or edge model)."""
    sampler = PopulationSampler(params, pool_size, rng)
    b = params.b
    if edge:
        pool = spec.weight(beta, spec.sample(rng, pool_size))
    else:
        pool = np.ones(pool_size)
    pool = pool / pool.mean()
    for _ in range(n):
        child = pool[sampler.child_indices()]
        if edge:
            pool = child.prod(axis=2).sum(axis=1) / b
        else:
            e = spec.weight(beta, sampler.noise(spec))
            pool = (child.prod(axis=2) * e.prod(axis=2)).sum(axis=1) / b
        pool = pool / pool.mean()
    return pool

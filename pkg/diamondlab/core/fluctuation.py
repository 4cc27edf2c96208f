"""Fluctuation fields of the weak-disorder polymer and the experiments built on them.

For b = s the fields live on the β = β̂/n scale:

* ``full``       R(g) = √n (W_n(β̂/n; g) - 1), taken straight from ``polymer.w_levels``
* ``quadratic``  R̂, the recursion for R truncated after the pairwise products
* ``cubic``      R̃, the same recursion keeping the triple products

For b > s the fields are ``bgs-full`` (W_n(βₙ) - 1)/βₙ and its linear
truncation ``bgs-linear``, which at the root is the explicit noise sum
Σ_m b^{-m} Σ_{a∈V_m} ω_a.

Every field can be evaluated exactly on the lattice (one shared disorder
field per replicate) or on a population pool when (bs)^n is out of reach.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .disorder import DisorderField, DisorderSpec, Placement
from .exceptions import OutOfRange, RegimeError, VariantMismatch
from .lattice import LatticeParams, SubgraphAddress
from .polymer import (
    DEFAULT_MAX_SITES,
    PopulationSampler,
    check_budget,
    map_replicates,
    population_w,
    sample_w,
    subtree_root,
    w_levels,
)
from .rgflow import (
    BeqVariant,
    affine_fixed_point,
    analog_variance,
    critical_scaling,
    critical_target,
    kappa,
    noise_sum_variance,
    tau,
    upsilon,
    variance_flow_beq,
    variance_flow_bgs,
)
from .stats import SampleSet, correlation_with_se, ks_normal, within_se

logger = logging.getLogger(__name__)

DEFAULT_POOL_SIZE = 100_000
DEFAULT_MAX_SITES_PER_REPLICATE = 1 << 20


class FieldVariant(str, Enum):
    FULL = "full"
    QUADRATIC = "quadratic"
    CUBIC = "cubic"
    BGS_FULL = "bgs-full"
    BGS_LINEAR = "bgs-linear"


BEQ_VARIANTS = frozenset({FieldVariant.FULL, FieldVariant.QUADRATIC, FieldVariant.CUBIC})
BGS_VARIANTS = frozenset({FieldVariant.BGS_FULL, FieldVariant.BGS_LINEAR})


def _check_variant(variant: FieldVariant, params: LatticeParams):
    if variant in BEQ_VARIANTS and params.regime != "b=s":
        raise VariantMismatch(f"the {variant.value} field needs b = s, got b={params.b}, s={params.s}")
    if variant in BGS_VARIANTS and params.regime != "b>s":
        raise VariantMismatch(f"the {variant.value} field needs b > s, got b={params.b}, s={params.s}")


def combine(
    variant: FieldVariant, params: LatticeParams, spec: DisorderSpec, beta: float, n: int, child: np.ndarray, omega: np.ndarray
) -> np.ndarray:
    """One step of the field recursion.

    ``child`` has shape (count, b, s) and holds the values on g×(i, j);
    ``omega`` has shape (count, b, s-1) and holds the disorder on g⋄(i, j).
    """
    b = params.b
    if variant is FieldVariant.FULL:
        root_n = math.sqrt(n)
        w = (1.0 + child / root_n).prod(axis=2) * spec.weight(beta / n, omega).prod(axis=2)
        return root_n * (w.sum(axis=1) / b - 1.0)
    if variant is FieldVariant.BGS_FULL:
        w = (1.0 + beta * child).prod(axis=2) * spec.weight(beta, omega).prod(axis=2)
        return (w.sum(axis=1) / b - 1.0) / beta
    if variant is FieldVariant.BGS_LINEAR:
        return (child.sum(axis=(1, 2)) + omega.sum(axis=(1, 2))) / b

    root_n = math.sqrt(n)
    p1 = child.sum(axis=2)
    p2 = (child * child).sum(axis=2)
    # elementary symmetric polynomials over j, per branch i
    e2 = 0.5 * (p1 * p1 - p2)
    out = p1.sum(axis=1) / b + e2.sum(axis=1) / (b * root_n) + beta * omega.sum(axis=(1, 2)) / (b * root_n)
    if variant is FieldVariant.CUBIC:
        p3 = (child**3).sum(axis=2)
        e3 = (p1**3 - 3.0 * p1 * p2 + 2.0 * p3) / 6.0
        out = out + e3.sum(axis=1) / (b * n)
    return out


@dataclass(frozen=True)
class FluctuationField:
    """A fluctuation field on one disorder realisation.

    ``beta`` is β̂ for the b = s variants and βₙ for the b > s variants.
    """

    variant: FieldVariant
    disorder: DisorderField
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "variant", FieldVariant(self.variant))
        _check_variant(self.variant, self.disorder.params)
        if self.disorder.placement is not Placement.VERTICES:
            raise VariantMismatch("fluctuation fields live on vertex disorder")
        if self.variant is FieldVariant.BGS_FULL and self.beta == 0:
            raise ValueError("the bgs-full field divides by βₙ and needs βₙ > 0")

    @property
    def params(self) -> LatticeParams:
        return self.disorder.params

    @property
    def n(self) -> int:
        return self.disorder.n

    @property
    def spec(self) -> DisorderSpec:
        return self.disorder.spec

    def levels(
        self, g: Optional[SubgraphAddress] = None, max_sites: int = DEFAULT_MAX_SITES, allow_large: bool = False
    ) -> Dict[int, np.ndarray]:
        """Field values on every copy inside g, keyed by word length (same layout as ``w_levels``)."""
        if self.variant is FieldVariant.FULL:
            w = w_levels(self.disorder, self.spec, self.beta / self.n, g, max_sites, allow_large)
            root_n = math.sqrt(self.n)
            return {m: root_n * (v - 1.0) for m, v in w.items()}
        if self.variant is FieldVariant.BGS_FULL:
            w = w_levels(self.disorder, self.spec, self.beta, g, max_sites, allow_large)
            return {m: (v - 1.0) / self.beta for m, v in w.items()}

        params, n = self.params, self.n
        top, rank0 = subtree_root(self.disorder, g)
        check_budget(params, n - top, max_sites, allow_large)
        b, s = params.b, params.s
        levels = {n: np.zeros(params.bs ** (n - top))}
        for m in range(n - 1, top - 1, -1):
            count = params.bs ** (m - top)
            start = rank0 * count * b * (s - 1)
            omega = self.disorder.values(m + 1, start, start + count * b * (s - 1)).reshape(count, b, s - 1)
            child = levels[m + 1].reshape(count, b, s)
            levels[m] = combine(self.variant, params, self.spec, self.beta, n, child, omega)
        return levels


def evaluate_levels(ff: FluctuationField, g: Optional[SubgraphAddress] = None, **budget) -> Dict[int, np.ndarray]:
    return ff.levels(g, **budget)


def evaluate_field(ff: FluctuationField, g: Optional[SubgraphAddress] = None, **budget) -> float:
    top, _ = subtree_root(ff.disorder, g)
    return float(ff.levels(g, **budget)[top][0])


def averaged_field(ff: FluctuationField, k: int, levels: Optional[Dict[int, np.ndarray]] = None) -> float:
    """b^{-(n-k)} Σ_{g∈G_{k,n}} field(g); pass ``levels`` to reuse a whole-lattice evaluation."""
    n = ff.n
    if not 0 <= k <= n:
        raise OutOfRange(f"k = {k} outside 0..{n}")
    levels = ff.levels() if levels is None else levels
    return float(levels[n - k].sum() / ff.params.b ** (n - k))


def noise_sum(disorder: DisorderField) -> float:
    """Σ_{m=1}^n b^{-m} Σ_{a∈V_m} ω_a."""
    b = disorder.params.b
    return math.fsum(float(disorder.values(m).sum()) / b**m for m in range(1, disorder.n + 1))


@dataclass
class ProcessTrace:
    grid: np.ndarray
    values: np.ndarray
    seed: int
    stream: int = 0

    def increments(self) -> np.ndarray:
        return np.diff(np.concatenate([[0.0], self.values]))


def grid_steps(n: int, r_grid: Sequence[float]) -> List[int]:
    for r in r_grid:
        if not 0.0 <= r <= 1.0:
            raise OutOfRange(f"r = {r} outside [0, 1]")
    return [int(math.floor(r * n)) for r in r_grid]


def process_trace(ff: FluctuationField, r_grid: Sequence[float]) -> ProcessTrace:
    """Y_r = averaged field at k = ⌊rn⌋ along ``r_grid``, from one evaluation of the lattice."""
    levels = ff.levels()
    values = [averaged_field(ff, k, levels) for k in grid_steps(ff.n, r_grid)]
    return ProcessTrace(np.asarray(r_grid, dtype=float), np.array(values), ff.disorder.master_seed, ff.disorder.stream)


# ---------------------------
# Replicated sampling
# ---------------------------

@dataclass
class FieldSamples:
    """Coupled root values of several variants plus the averaged process and
    per-level moments of the first (primary) variant."""

    engine: str
    variants: Tuple[FieldVariant, ...]
    values: Dict[FieldVariant, np.ndarray]
    averaged: Dict[int, np.ndarray] = field(default_factory=dict)
    # k -> (E[x²], E[x⁴], sample count) over the copies of word length n-k
    level_moments: Dict[int, Tuple[float, float, int]] = field(default_factory=dict)

    @property
    def primary(self) -> np.ndarray:
        return self.values[self.variants[0]]


def choose_engine(params: LatticeParams, n: int, engine: str = "auto", max_sites: int = DEFAULT_MAX_SITES_PER_REPLICATE) -> str:
    if engine not in ("auto", "lattice", "population"):
        raise ValueError(f"unknown engine {engine!r}")
    if engine == "auto":
        return "lattice" if params.bs**n <= max_sites else "population"
    return engine


def _lattice_task(shared, stream: int) -> Dict[str, Any]:
    params, spec, variants, beta, n, seed, grid_ks, max_sites = shared
    disorder = DisorderField(params, n, seed, spec, Placement.VERTICES, stream)
    out: Dict[str, Any] = {"values": {}}
    for position, variant in enumerate(variants):
        ff = FluctuationField(variant, disorder, beta)
        levels = ff.levels(max_sites=max_sites, allow_large=True)
        out["values"][variant] = float(levels[0][0])
        if position == 0:
            out["averaged"] = {k: averaged_field(ff, k, levels) for k in grid_ks}
            out["moments"] = {
                n - m: (float(np.sum(v**2)), float(np.sum(v**4)), int(v.size)) for m, v in levels.items()
            }
    return out


def _sample_lattice(params, spec, variants, beta, n, replicates, master_seed, grid_ks, max_sites, workers) -> FieldSamples:
    shared = (params, spec, variants, beta, n, master_seed, tuple(grid_ks), max_sites)
    results = map_replicates(_lattice_task, shared, range(replicates), workers)
    values = {v: np.array([r["values"][v] for r in results]) for v in variants}
    averaged = {k: np.array([r["averaged"][k] for r in results]) for k in grid_ks}
    moments = {}
    for k in range(n + 1):
        s2 = math.fsum(r["moments"][k][0] for r in results)
        s4 = math.fsum(r["moments"][k][1] for r in results)
        count = sum(r["moments"][k][2] for r in results)
        moments[k] = (s2 / count, s4 / count, count)
    return FieldSamples("lattice", tuple(variants), values, averaged, moments)


def population_fields(
    params: LatticeParams,
    spec: DisorderSpec,
    variants: Sequence[FieldVariant],
    beta: float,
    n: int,
    pool_size: int,
    rng: np.random.Generator,
    grid_ks: Sequence[int] = (),
) -> FieldSamples:
    """Pools for several variants driven by the same child draws and the same noise.

    Each pool element also carries the averaged field A_k (k in ``grid_ks``)
    of its own subtree; the primary variant's columns give the process.
    """
    variants = tuple(FieldVariant(v) for v in variants)
    for v in variants:
        _check_variant(v, params)
    sampler = PopulationSampler(params, pool_size, rng)
    b = params.b
    pools = {v: np.zeros(pool_size) for v in variants}
    averaged = {k: np.zeros(pool_size) for k in grid_ks}
    moments = {0: (0.0, 0.0, pool_size)}
    for m in range(1, n + 1):
        idx = sampler.child_indices()
        omega = sampler.noise(spec)
        for v in variants:
            new = combine(v, params, spec, beta, n, pools[v][idx], omega)
            pools[v] = new - new.mean()
        primary = pools[variants[0]]
        for k in grid_ks:
            if k == m:
                averaged[k] = primary.copy()
            elif 0 < k < m:
                col = averaged[k][idx].sum(axis=(1, 2)) / b
                averaged[k] = col - col.mean()
        moments[m] = (float(np.mean(primary**2)), float(np.mean(primary**4)), pool_size)
    return FieldSamples("population", variants, pools, averaged, moments)


def sample_fields(
    params: LatticeParams,
    spec: DisorderSpec,
    variants: Sequence[FieldVariant],
    beta: float,
    n: int,
    replicates: int,
    master_seed: int,
    engine: str = "auto",
    grid_ks: Sequence[int] = (),
    pool_size: int = DEFAULT_POOL_SIZE,
    max_sites_per_replicate: int = DEFAULT_MAX_SITES_PER_REPLICATE,
    workers: int = 1,
) -> FieldSamples:
    """``replicates`` coupled draws of the root values of ``variants``."""
    variants = tuple(FieldVariant(v) for v in variants)
    for v in variants:
        _check_variant(v, params)
    engine = choose_engine(params, n, engine, max_sites_per_replicate)
    logger.info(
        "Sampling %s at n=%d, beta=%.4g: %d replicates on the %s engine",
        ",".join(v.value for v in variants), n, beta, replicates, engine,
    )
    if engine == "lattice":
        return _sample_lattice(params, spec, variants, beta, n, replicates, master_seed, grid_ks, max_sites_per_replicate, workers)
    rng = np.random.default_rng(np.random.SeedSequence(master_seed))
    run = population_fields(params, spec, variants, beta, n, max(pool_size, replicates), rng, grid_ks)
    keep = rng.permutation(run.primary.size)[:replicates]
    run.values = {v: arr[keep] for v, arr in run.values.items()}
    run.averaged = {k: arr[keep] for k, arr in run.averaged.items()}
    return run


def sample_w_any(
    params: LatticeParams,
    spec: DisorderSpec,
    beta: float,
    n: int,
    replicates: int,
    master_seed: int,
    engine: str = "auto",
    pool_size: int = DEFAULT_POOL_SIZE,
    max_sites_per_replicate: int = DEFAULT_MAX_SITES_PER_REPLICATE,
    workers: int = 1,
) -> SampleSet:
    """W_n(β) replicates on whichever engine fits (bs)^n."""
    engine = choose_engine(params, n, engine, max_sites_per_replicate)
    if engine == "lattice":
        return sample_w(params, spec, beta, n, replicates, master_seed, workers=workers, max_sites=max(max_sites_per_replicate, params.bs**n))
    rng = np.random.default_rng(np.random.SeedSequence(master_seed))
    pool = population_w(params, spec, beta, n, max(pool_size, replicates), rng)
    values = pool[rng.permutation(pool.size)[:replicates]]
    return SampleSet("W", values, master_seed, n, {"beta": beta, "b": params.b, "s": params.s, "engine": "population"})


# ---------------------------
# Moment checks
# ---------------------------

def moment_ratio_check(level_moments: Dict[int, Tuple[float, float, int]], k_min: int = 1) -> Dict[str, Any]:
    """E[x⁴]/E[x²]² per level; the fitted constant is the largest ratio seen."""
    rows = []
    for k in sorted(level_moments):
        m2, m4, count = level_moments[k]
        if k < k_min or m2 <= 0:
            continue
        rows.append({"k": k, "m2": m2, "m4": m4, "ratio": m4 / m2**2, "count": count})
    constant = max((r["ratio"] for r in rows), default=float("nan"))
    return {"rows": rows, "constant": constant, "bounded": bool(rows) and math.isfinite(constant)}


def moment_flow_check(
    level_moments: Dict[int, Tuple[float, float, int]], flow_values: np.ndarray, k_grid: Sequence[int]
) -> List[Dict[str, Any]]:
    """Second moment per level against the deterministic flow iterates."""
    rows = []
    for k in k_grid:
        m2, m4, count = level_moments[k]
        target = float(flow_values[k])
        se = math.sqrt(max(m4 - m2**2, 0.0) / count) if count else float("nan")
        rows.append({"k": k, "m2": m2, "target": target, "se": se, "within_4se": within_se(m2, target, se) if k else m2 == 0})
    return rows


# ---------------------------
# Experiments
# ---------------------------

def _require(params: LatticeParams, regime: str):
    if params.regime != regime:
        raise RegimeError(f"needs {regime}, got b={params.b}, s={params.s}")


def clt_experiment_beq(
    params: LatticeParams,
    spec: DisorderSpec,
    beta_hat: float,
    n: int,
    replicates: int,
    master_seed: int,
    engine: str = "auto",
    alpha: float = 0.01,
    **sampling,
) -> Dict[str, Any]:
    """√n(W_n(β̂/n) - 1) against the finite-n flow value and the limit υ_b(β̂)."""
    _require(params, "b=s")
    limit = upsilon(params.b, beta_hat)
    samples = sample_fields(
        params, spec, (FieldVariant.FULL, FieldVariant.QUADRATIC), beta_hat, n, replicates, master_seed, engine, **sampling
    )
    full = samples.values[FieldVariant.FULL]
    quad = samples.values[FieldVariant.QUADRATIC]
    sample_set = SampleSet("R", full, master_seed, n, {"beta_hat": beta_hat, "engine": samples.engine})
    flow_target = variance_flow_beq(params, spec, beta_hat, n, BeqVariant.EXACT).final
    quad_target = variance_flow_beq(params, spec, beta_hat, n, BeqVariant.QUADRATIC).final
    variance, variance_se = sample_set.variance(), sample_set.variance_se()
    gap = (full - quad) ** 2
    report = {
        "experiment": "clt",
        "b": params.b,
        "s": params.s,
        "beta_hat": beta_hat,
        "n": n,
        "replicates": replicates,
        "engine": samples.engine,
        "master_seed": master_seed,
        "summary": sample_set.summary(),
        "flow_target": flow_target,
        "limit": limit,
        "flow_limit_relative_gap": abs(flow_target - limit) / limit if limit else 0.0,
        "variance_within_4se": within_se(variance, flow_target, variance_se),
        "quadratic_variance": float(np.var(quad, ddof=1)),
        "quadratic_flow_target": quad_target,
        "coupling_gap": float(gap.mean()),
        "coupling_gap_se": float(gap.std(ddof=1) / math.sqrt(gap.size)),
        "coupling_constant": float(gap.mean() * n),
        "flow_coupling_gap": flow_target - quad_target,
        "values": full,
    }
    if limit > 0:
        report["ks_limit"] = ks_normal(full, 0.0, math.sqrt(limit), alpha).to_dict()
        report["ks_flow"] = ks_normal(full, 0.0, math.sqrt(flow_target), alpha).to_dict()
    logger.info("CLT b=%d beta_hat=%.4g n=%d: variance %.5f (flow %.5f, limit %.5f)", params.b, beta_hat, n, variance, flow_target, limit)
    return report


def critical_experiment(
    params: LatticeParams,
    spec: DisorderSpec,
    n_grid: Sequence[int],
    replicates: int,
    master_seed: int,
    analog_beta_hat: Optional[float] = None,
    engine: str = "auto",
    **sampling,
) -> Dict[str, Any]:
    """√(log n)(W_n(κ_b/n) - 1) across ``n_grid``, plus the shifted-size run at β̂ > κ_b."""
    _require(params, "b=s")
    b = params.b
    k_b = kappa(b)
    target = critical_target(b)
    rows = []
    for n in n_grid:
        if n < 2:
            raise OutOfRange("the critical scaling needs n >= 2")
        w = sample_w_any(params, spec, k_b / n, n, replicates, master_seed + n, engine, **sampling)
        x = SampleSet("critical", math.sqrt(math.log(n)) * (w.values - 1.0), master_seed + n, n)
        reference = critical_scaling(params, spec, n, BeqVariant.EXACT)
        variance, se = x.variance(), x.variance_se()
        skew = x.skewness()
        rows.append({
            "n": n,
            "engine": w.metadata.get("engine"),
            "variance": variance,
            "variance_se": se,
            "reference": reference,
            "within_4se": within_se(variance, reference, se),
            "target": target,
            "gap": abs(reference - target),
            "skewness": skew,
            "skewness_within_4se": within_se(skew, 0.0, math.sqrt(6.0 / x.size)),
        })
        logger.info("critical n=%d: variance %.5f (reference %.5f, target %.4f)", n, variance, reference, target)
    gaps = [r["gap"] for r in rows]
    report = {
        "experiment": "critical",
        "b": b,
        "s": params.s,
        "kappa": k_b,
        "target": target,
        "rows": rows,
        "reference_increasing": all(x["reference"] <= y["reference"] for x, y in zip(rows, rows[1:])),
        "gap_shrinking": all(x >= y for x, y in zip(gaps, gaps[1:])),
    }
    if analog_beta_hat is not None:
        if analog_beta_hat <= k_b:
            raise OutOfRange(f"the shifted-size run needs β̂ > κ_b = {k_b}")
        analog = []
        for n in n_grid:
            depth = int(math.floor(n * k_b / analog_beta_hat))
            w = sample_w_any(params, spec, analog_beta_hat / n, depth, replicates, master_seed + 7 * n, engine, **sampling)
            x = SampleSet("analog", math.sqrt(math.log(n)) * (w.values - 1.0), master_seed + 7 * n, depth)
            reference = analog_variance(params, spec, analog_beta_hat, n)
            analog.append({
                "n": n,
                "depth": depth,
                "variance": x.variance(),
                "variance_se": x.variance_se(),
                "reference": reference,
                "within_4se": within_se(x.variance(), reference, x.variance_se()),
            })
        report["analog"] = {"beta_hat": analog_beta_hat, "rows": analog}
    return report


def _increment_correlations(grid: Sequence[float], series: List[np.ndarray]) -> List[Dict[str, Any]]:
    previous = np.zeros_like(series[0])
    increments = []
    for values in series:
        increments.append(values - previous)
        previous = values
    rows = []
    for i in range(len(increments)):
        for j in range(i + 1, len(increments)):
            c = correlation_with_se(increments[i], increments[j])
            lo_i = grid[i - 1] if i else 0.0
            ok = abs(c["corr"]) < 4 * c["se"] if math.isfinite(c["se"]) else True
            rows.append({"first": [lo_i, grid[i]], "second": [grid[j - 1], grid[j]], **c, "within_4se": ok})
    return rows


def process_experiment(
    params: LatticeParams,
    spec: DisorderSpec,
    beta_hat: float,
    n: int,
    r_grid: Sequence[float],
    replicates: int,
    master_seed: int,
    engine: str = "auto",
    **sampling,
) -> Dict[str, Any]:
    """Y_r = averaged quadratic field at ⌊rn⌋: per-r variance, increment correlations and moment checks."""
    _require(params, "b=s")
    grid = sorted(float(r) for r in r_grid)
    ks = grid_steps(n, grid)
    samples = sample_fields(params, spec, (FieldVariant.QUADRATIC,), beta_hat, n, replicates, master_seed, engine, grid_ks=ks, **sampling)
    flow = variance_flow_beq(params, spec, beta_hat, n, BeqVariant.QUADRATIC).values.astype(float)
    rows = []
    series = []
    for r, k in zip(grid, ks):
        values = samples.averaged[k] if k else np.zeros(replicates)
        series.append(values)
        s = SampleSet("Y", values, master_seed, n)
        variance, se = s.variance(), s.variance_se()
        rows.append({
            "r": r,
            "k": k,
            "variance": variance,
            "variance_se": se,
            "finite_n_target": float(flow[k]),
            "tau": tau(params.b, beta_hat, r),
            "within_4se": within_se(variance, float(flow[k]), se) if k else variance == 0,
        })
    correlations = _increment_correlations(grid, series)
    return {
        "experiment": "process",
        "b": params.b,
        "s": params.s,
        "beta_hat": beta_hat,
        "n": n,
        "replicates": replicates,
        "engine": samples.engine,
        "rows": rows,
        "increment_correlations": correlations,
        "increments_uncorrelated": all(c["within_4se"] for c in correlations),
        "moment_ratios": moment_ratio_check(samples.level_moments),
        "moment_flow": moment_flow_check(samples.level_moments, flow, sorted(set(ks) | {n})),
    }


def bgs_limit_experiment(
    params: LatticeParams,
    spec: DisorderSpec,
    beta_n: float,
    n: int,
    replicates: int,
    master_seed: int,
    engine: str = "auto",
    tolerance: float = 0.05,
    **sampling,
) -> Dict[str, Any]:
    """(W_n(βₙ) - 1)/βₙ against the explicit noise sum on shared disorder (b > s)."""
    _require(params, "b>s")
    samples = sample_fields(
        params, spec, (FieldVariant.BGS_FULL, FieldVariant.BGS_LINEAR), beta_n, n, replicates, master_seed, engine, **sampling
    )
    full = samples.values[FieldVariant.BGS_FULL]
    linear = samples.values[FieldVariant.BGS_LINEAR]
    msd = float(np.mean((full - linear) ** 2))
    noise_var = float(np.var(linear, ddof=1))
    flows = variance_flow_bgs(params, spec, beta_n, n)
    return {
        "experiment": "bgs",
        "b": params.b,
        "s": params.s,
        "beta_n": beta_n,
        "n": n,
        "replicates": replicates,
        "engine": samples.engine,
        "mean_square_difference": msd,
        "noise_variance": noise_var,
        "noise_variance_exact": noise_sum_variance(params, n),
        "limit_variance": affine_fixed_point(params),
        "full_variance": float(np.var(full, ddof=1)),
        "flow_exact": flows.exact.final,
        "flow_affine": flows.affine.final,
        "relative_difference": msd / noise_var if noise_var > 0 else 0.0,
        "coupled": msd <= tolerance * noise_var,
        "values": full,
    }

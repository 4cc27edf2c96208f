import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .exceptions import CapExceeded, LengthMismatch, RegimeError
from .lattice import LatticeParams, coarse_key, count_paths, enumerate_paths
from .rgflow import limiting_variance, mhat_power
from .stats import KSReport, SampleSet, correlation_with_se, ks_normal, ks_two_sample

logger = logging.getLogger(__name__)

DEFAULT_LEAF_TOLERANCE = 1e-4
DEFAULT_MAX_LEAVES = 2048
DEFAULT_PERMUTATIONS = 200
MAX_DEPTH = 14
CHUNK_FLOATS = 1 << 22


class LeafMode(str, Enum):
    GAUSSIAN = "gaussian-leaf"
    EXP_GAUSSIAN = "exp-gaussian-leaf"
    RADEMACHER = "rademacher-leaf"
    GAMMA = "gamma-leaf"


class LeafVariance(str, Enum):
    LINEAR = "linear"  # r (b/s)^depth
    MATCHED = "matched"  # 𝔳(r (b/s)^depth): folded variance equals 𝔳(r)


@dataclass
class LeafArray:
    params: LatticeParams
    depth: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = self.params.bs**self.depth
        if self.values.shape[-1:] != (expected,):
            raise LengthMismatch(f"depth {self.depth} needs {expected} leaves, got {self.values.shape[-1:]}")


def _leaf_depth(params: LatticeParams, count: int) -> int:
    depth, size = 0, 1
    while size < count:
        size *= params.bs
        depth += 1
    if size != count:
        raise LengthMismatch(f"{count} leaves is not a power of b·s = {params.bs}")
    return depth


def _values(params: LatticeParams, leaves: Union[LeafArray, np.ndarray]) -> np.ndarray:
    arr = leaves.values if isinstance(leaves, LeafArray) else np.asarray(leaves, dtype=float)
    _leaf_depth(params, arr.shape[-1])
    return arr


def fold_w(params: LatticeParams, leaves: Union[LeafArray, np.ndarray]) -> Union[float, np.ndarray]:
    """Ŵ(g) = (1/b) Σ_i Π_j Ŵ(g×(i,j)) folded to the root; batches along leading axes."""
    arr = _values(params, leaves)
    b, s = params.b, params.s
    while arr.shape[-1] > 1:
        arr = arr.reshape(arr.shape[:-1] + (-1, b, s)).prod(axis=-1).sum(axis=-1) / b
    out = arr[..., 0]
    return float(out) if out.ndim == 0 else out


def fold_w_linear(params: LatticeParams, leaves: Union[LeafArray, np.ndarray]) -> Union[float, np.ndarray]:
    """Ŵ(g) = 1 + (1/b) Σ_{i,j} (Ŵ(g×(i,j)) - 1) folded to the root."""
    arr = _values(params, leaves) - 1.0
    b, s = params.b, params.s
    while arr.shape[-1] > 1:
        arr = arr.reshape(arr.shape[:-1] + (-1, b * s)).sum(axis=-1) / b
    out = 1.0 + arr[..., 0]
    return float(out) if out.ndim == 0 else out


def default_depth(
    params: LatticeParams,
    r: float,
    leaf_tolerance: float = DEFAULT_LEAF_TOLERANCE,
    max_leaves: int = DEFAULT_MAX_LEAVES,
) -> int:
    """Smallest depth with r(b/s)^depth < leaf_tolerance, capped by the leaf budget and 14."""
    ratio = params.b / params.s
    depth = 0
    while r * ratio**depth >= leaf_tolerance and depth < MAX_DEPTH and params.bs ** (depth + 1) <= max_leaves:
        depth += 1
    return max(depth, 1)


def default_mode(r: float) -> LeafMode:
    return LeafMode.EXP_GAUSSIAN if r > 1 else LeafMode.GAUSSIAN


@dataclass
class LimitLawSampler:
    """Truncated sampler of L_r^{b,s}: fold ``depth`` levels of i.i.d. mean-one leaves."""

    params: LatticeParams
    r: float
    depth: Optional[int] = None
    mode: Optional[LeafMode] = None
    leaf_variance: LeafVariance = LeafVariance.MATCHED
    max_leaves: int = DEFAULT_MAX_LEAVES

    def __post_init__(self):
        if self.params.regime != "b<s":
            raise RegimeError(f"L_r laws need b < s, got b={self.params.b}, s={self.params.s}")
        if self.r < 0:
            raise ValueError("r must be >= 0")
        if self.depth is None:
            self.depth = default_depth(self.params, self.r, max_leaves=self.max_leaves)
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        self.mode = default_mode(self.r) if self.mode is None else LeafMode(self.mode)
        self.leaf_variance = LeafVariance(self.leaf_variance)

    @property
    def leaves_per_draw(self) -> int:
        return self.params.bs**self.depth

    @property
    def leaf_var(self) -> float:
        linear = self.r * (self.params.b / self.params.s) ** self.depth
        if self.leaf_variance is LeafVariance.MATCHED:
            return limiting_variance(self.params, linear)
        return linear

    def truncation_increment(self) -> float:
        """|M̂^d(r(b/s)^d) - M̂^{d-1}(r(b/s)^{d-1})|, the size of the last truncation step."""
        ratio = self.params.b / self.params.s
        d = self.depth
        return abs(mhat_power(self.params, self.r * ratio**d, d) - mhat_power(self.params, self.r * ratio ** (d - 1), d - 1))

    def leaves(self, rng: np.random.Generator, size: int) -> np.ndarray:
        shape = (size, self.leaves_per_draw)
        v = self.leaf_var
        if v == 0:
            return np.ones(shape)
        if self.mode is LeafMode.GAUSSIAN:
            return 1.0 + math.sqrt(v) * rng.standard_normal(shape)
        if self.mode is LeafMode.EXP_GAUSSIAN:
            u = math.log1p(v) if self.leaf_variance is LeafVariance.MATCHED else v
            return np.exp(math.sqrt(u) * rng.standard_normal(shape) - 0.5 * u)
        if self.mode is LeafMode.RADEMACHER:
            return 1.0 + math.sqrt(v) * rng.choice(np.array([-1.0, 1.0]), size=shape)
        return rng.gamma(shape=1.0 / v, scale=v, size=shape)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        chunk = max(1, CHUNK_FLOATS // self.leaves_per_draw)
        out = np.empty(size)
        for start in range(0, size, chunk):
            stop = min(size, start + chunk)
            out[start:stop] = fold_w(self.params, self.leaves(rng, stop - start))
        return out


def sample_limit_law(sampler: LimitLawSampler, rng: np.random.Generator) -> float:
    return float(sampler.sample(rng, 1)[0])


def sample_set(sampler: LimitLawSampler, n_samples: int, seed: int) -> SampleSet:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    values = sampler.sample(rng, n_samples)
    return SampleSet(
        tag="L",
        values=values,
        master_seed=seed,
        n=sampler.depth,
        metadata={
            "r": sampler.r,
            "mode": sampler.mode.value,
            "leaf_variance": sampler.leaf_variance.value,
            "truncation_increment": sampler.truncation_increment(),
        },
    )


def _rngs(seed: int, count: int) -> List[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


# ---------------------------
# Property tests
# ---------------------------

@dataclass
class FixedPointReport:
    ks: KSReport
    direct_mean: float
    folded_mean: float
    direct_variance: float
    folded_variance: float
    target_variance: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ks": self.ks.statistic,
            "p_value": self.ks.p_value,
            "permutation_p_value": self.ks.permutation_p_value,
            "threshold": self.ks.threshold,
            "passed": self.ks.passed,
            "n": self.ks.n,
            "direct_mean": self.direct_mean,
            "folded_mean": self.folded_mean,
            "direct_variance": self.direct_variance,
            "folded_variance": self.folded_variance,
            "target_variance": self.target_variance,
        }


def fixed_point_test(
    params: LatticeParams,
    r: float,
    depth: Optional[int] = None,
    n_samples: int = 100_000,
    seed: int = 0,
    leaf_variance: LeafVariance = LeafVariance.MATCHED,
    n_permutations: int = DEFAULT_PERMUTATIONS,
    alpha: float = 0.01,
    max_leaves: int = DEFAULT_MAX_LEAVES,
) -> FixedPointReport:
    """A ~ L_{(s/b)r} against B = (1/b) Σ_i Π_j X^{(i,j)} with X^{(i,j)} ~ L_r independent."""
    b, s = params.b, params.s
    big_r = s / b * r
    mode = default_mode(big_r)
    rng_a, rng_b, rng_p = _rngs(seed, 3)
    direct = LimitLawSampler(params, big_r, depth, mode, leaf_variance, max_leaves)
    parts = LimitLawSampler(params, r, direct.depth, mode, leaf_variance, max_leaves)
    a = direct.sample(rng_a, n_samples)
    pieces = parts.sample(rng_b, n_samples * b * s).reshape(n_samples, b, s)
    folded = pieces.prod(axis=2).sum(axis=1) / b
    ks = ks_two_sample(a, folded, alpha=alpha, n_permutations=n_permutations, rng=rng_p)
    target = limiting_variance(params, big_r) if big_r > 0 else 0.0
    logger.info("fixed-point test r=%.4g depth=%d: KS=%.4g (threshold %.4g)", r, direct.depth, ks.statistic, ks.threshold)
    return FixedPointReport(ks, float(a.mean()), float(folded.mean()), float(a.var(ddof=1)), float(folded.var(ddof=1)), target)


def small_r_normality(
    params: LatticeParams,
    r: float,
    depth: Optional[int] = None,
    n_samples: int = 100_000,
    seed: int = 0,
    alpha: float = 0.01,
) -> Dict[str, Any]:
    """(X_r - 1)/√r against 𝒩(0, 1)."""
    if r <= 0:
        raise ValueError("r must be > 0")
    sampler = LimitLawSampler(params, r, depth, LeafMode.GAUSSIAN)
    values = sampler.sample(_rngs(seed, 1)[0], n_samples)
    z = SampleSet("standardized-L", (values - 1.0) / math.sqrt(r), seed, sampler.depth)
    ks = ks_normal(z.values, alpha=alpha)
    summary = z.summary()
    return {
        "r": r,
        "depth": sampler.depth,
        "ks": ks.to_dict(),
        "variance": summary["variance"],
        "skewness": summary["skewness"],
        "skewness_se": summary["skewness_se"],
        "kurtosis": summary["kurtosis"],
        "kurtosis_se": summary["kurtosis_se"],
    }


def strong_disorder_decay(
    params: LatticeParams,
    r_grid: Sequence[float],
    depth: Optional[int] = None,
    n_samples: int = 100_000,
    seed: int = 0,
    max_leaves: int = DEFAULT_MAX_LEAVES,
) -> List[Dict[str, float]]:
    """E[X_r^{1/2}] with exp-gaussian leaves against the bound e^{(1-√r)/2}."""
    rows = []
    rngs = _rngs(seed, len(r_grid))
    for r, rng in zip(r_grid, rngs):
        sampler = LimitLawSampler(params, r, depth, LeafMode.EXP_GAUSSIAN, LeafVariance.LINEAR, max_leaves)
        roots = np.sqrt(sampler.sample(rng, n_samples))
        estimate = float(roots.mean())
        se = float(roots.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else float("nan")
        bound = math.exp((1.0 - math.sqrt(r)) / 2.0)
        rows.append(
            {
                "r": r,
                "depth": sampler.depth,
                "estimate": estimate,
                "se": se,
                "bound": bound,
                "within_bound": estimate <= bound + 4 * se if n_samples > 1 else estimate <= bound,
            }
        )
    return rows


def measure_consistency_test(
    params: LatticeParams,
    x: float,
    k: int,
    n: int,
    n_samples: int = 10_000,
    seed: int = 0,
    depth: Optional[int] = 3,
    cap: int = 10**4,
    alpha: float = 0.01,
    max_leaves: int = DEFAULT_MAX_LEAVES,
) -> Dict[str, Any]:
    """Law of {μ_n(S_p)}_{p∈Γ_k} against {μ_k(p)}_{p∈Γ_k} for edge-weighted random path measures."""
    if not 0 <= k < n:
        raise ValueError("need 0 <= k < n")
    for depth_ in (k, n):
        if count_paths(params, depth_) > cap:
            raise CapExceeded(f"|Γ_{depth_}| = {count_paths(params, depth_)} exceeds {cap}")
    ratio = params.b / params.s
    rng_fine, rng_coarse = _rngs(seed, 2)

    def measures(level: int, rng: np.random.Generator):
        paths = enumerate_paths(params, level, cap)
        edges = params.bs**level
        sampler = LimitLawSampler(
            params, x * ratio**level, depth, LeafMode.EXP_GAUSSIAN, LeafVariance.MATCHED, max_leaves
        )
        log_x = np.log(sampler.sample(rng, n_samples * edges).reshape(n_samples, edges))
        incidence = np.zeros((edges, len(paths)))
        for col, p in enumerate(paths):
            incidence[list(p.edges), col] = 1.0
        log_w = log_x @ incidence
        log_w -= log_w.max(axis=1, keepdims=True)
        w = np.exp(log_w)
        return paths, w / w.sum(axis=1, keepdims=True)

    fine_paths, fine = measures(n, rng_fine)
    coarse_paths, coarse = measures(k, rng_coarse)
    column = {coarse_key(p.vertices, k): c for c, p in enumerate(coarse_paths)}
    aggregated = np.zeros_like(coarse)
    for f, p in enumerate(fine_paths):
        aggregated[:, column[coarse_key(p.vertices, k)]] += fine[:, f]

    mass_error = float(np.max(np.abs(aggregated.sum(axis=1) - 1.0)))
    marginals = []
    for c in range(len(coarse_paths)):
        report = ks_two_sample(aggregated[:, c], coarse[:, c], alpha=alpha)
        marginals.append(report.to_dict())
    if len(coarse_paths) > 1 and x > 0:
        corr_gap = float(np.max(np.abs(np.corrcoef(aggregated.T) - np.corrcoef(coarse.T))))
    else:
        corr_gap = 0.0
    return {
        "x": x,
        "k": k,
        "n": n,
        "n_samples": n_samples,
        "coarse_paths": len(coarse_paths),
        "mass_error": mass_error,
        "marginals": marginals,
        "all_marginals_pass": all(m["passed"] for m in marginals),
        "max_correlation_gap": corr_gap,
    }


def universality_test(
    params: LatticeParams,
    x: float,
    depth: Optional[int] = None,
    n_samples: int = 100_000,
    seed: int = 0,
    leaf_mode: LeafMode = LeafMode.RADEMACHER,
    alpha: float = 0.01,
    max_leaves: int = DEFAULT_MAX_LEAVES,
) -> KSReport:
    """Folded gaussian leaves against folded ``leaf_mode`` leaves of the same mean and variance."""
    rng_g, rng_o = _rngs(seed, 2)
    reference = LimitLawSampler(params, x, depth, LeafMode.GAUSSIAN, LeafVariance.LINEAR, max_leaves)
    other = LimitLawSampler(params, x, reference.depth, leaf_mode, LeafVariance.LINEAR, max_leaves)
    return ks_two_sample(reference.sample(rng_g, n_samples), other.sample(rng_o, n_samples), alpha=alpha)


def fold_variance_check(
    params: LatticeParams, x: float, k: int, n_samples: int = 100_000, seed: int = 0
) -> Dict[str, float]:
    """Var of both folds over i.i.d. 1 + 𝒩(0, x) leaves against M̂^k(x) and (s/b)^k x."""
    rng = _rngs(seed, 1)[0]
    leaves_per = params.bs**k
    chunk = max(1, CHUNK_FLOATS // leaves_per)
    full, linear = [], []
    for start in range(0, n_samples, chunk):
        size = min(chunk, n_samples - start)
        leaves = 1.0 + math.sqrt(x) * rng.standard_normal((size, leaves_per))
        full.append(np.atleast_1d(fold_w(params, leaves)))
        linear.append(np.atleast_1d(fold_w_linear(params, leaves)))
    full_set = SampleSet("fold", np.concatenate(full))
    linear_set = SampleSet("fold-linear", np.concatenate(linear))
    diff = full_set.values - linear_set.values
    corr = correlation_with_se(diff, linear_set.values)
    return {
        "variance": full_set.variance(),
        "variance_se": full_set.variance_se(),
        "target": mhat_power(params, x, k),
        "linear_variance": linear_set.variance(),
        "linear_variance_se": linear_set.variance_se(),
        "linear_target": (params.s / params.b) ** k * x,
        "nonlinear_linear_corr": corr["corr"],
        "corr_se": corr["se"],
    }

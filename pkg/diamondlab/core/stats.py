import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, Optional, Sequence

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)


@dataclass
class RunningMoments:
    """Count, mean and centred second moment, mergeable in any order."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, values: Iterable[float]) -> "RunningMoments":
        arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
        if arr.size == 0:
            return cls()
        mean = float(np.mean(arr))
        return cls(int(arr.size), mean, float(np.sum((arr - mean) ** 2)))

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        if other.count == 0:
            return RunningMoments(self.count, self.mean, self.m2)
        if self.count == 0:
            return RunningMoments(other.count, other.mean, other.m2)
        count = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / count
        m2 = self.m2 + other.m2 + delta**2 * self.count * other.count / count
        return RunningMoments(count, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else float("nan")


@dataclass
class SampleSet:
    """Tagged i.i.d. draws of one scalar statistic with provenance."""

    tag: str
    values: np.ndarray
    master_seed: Optional[int] = None
    n: Optional[int] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def size(self) -> int:
        return int(self.values.size)

    def mean(self) -> float:
        return float(np.mean(self.values)) if self.size else float("nan")

    def variance(self) -> float:
        return float(np.var(self.values, ddof=1)) if self.size > 1 else float("nan")

    def mean_se(self) -> float:
        return math.sqrt(self.variance() / self.size) if self.size > 1 else float("nan")

    def variance_se(self) -> float:
        """Standard error of the sample variance, sqrt((μ4 - σ⁴)/N)."""
        if self.size < 4:
            return float("nan")
        centred = self.values - self.values.mean()
        mu4 = float(np.mean(centred**4))
        var = float(np.mean(centred**2))
        return math.sqrt(max(mu4 - var**2, 0.0) / self.size)

    def second_moment_se(self) -> float:
        if self.size < 2:
            return float("nan")
        return float(np.std(self.values**2, ddof=1) / math.sqrt(self.size))

    def skewness(self) -> float:
        return float(stats.skew(self.values)) if self.size > 2 else float("nan")

    def kurtosis(self) -> float:
        """Fourth standardized moment (3 for a normal law)."""
        return float(stats.kurtosis(self.values, fisher=False)) if self.size > 3 else float("nan")

    def summary(self) -> Dict[str, Any]:
        n = self.size
        return {
            "tag": self.tag,
            "count": n,
            "mean": self.mean(),
            "mean_se": self.mean_se(),
            "variance": self.variance(),
            "variance_se": self.variance_se(),
            "skewness": self.skewness(),
            "skewness_se": math.sqrt(6.0 / n) if n else float("nan"),
            "kurtosis": self.kurtosis(),
            "kurtosis_se": math.sqrt(24.0 / n) if n else float("nan"),
        }


@dataclass
class KSReport:
    statistic: float
    p_value: float
    threshold: float
    n: int
    alpha: float = 0.01
    permutation_p_value: Optional[float] = None

    @property
    def passed(self) -> bool:
        return self.statistic <= self.threshold

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def ks_critical_value(n1: int, n2: Optional[int] = None, alpha: float = 0.01) -> float:
    """Asymptotic KS rejection threshold c(α)·sqrt(1/n1 [+ 1/n2])."""
    c_alpha = math.sqrt(-0.5 * math.log(alpha / 2.0))
    scale = 1.0 / n1 if n2 is None else (n1 + n2) / (n1 * n2)
    return c_alpha * math.sqrt(scale)


def ks_normal(values: Sequence[float], loc: float = 0.0, scale: float = 1.0, alpha: float = 0.01) -> KSReport:
    values = np.asarray(values, dtype=float)
    if scale <= 0:
        raise ValueError("normal scale must be positive")
    result = stats.kstest(values, "norm", args=(loc, scale))
    return KSReport(float(result.statistic), float(result.pvalue), ks_critical_value(values.size, alpha=alpha), values.size, alpha)


def ks_two_sample(
    a: Sequence[float],
    b: Sequence[float],
    alpha: float = 0.01,
    n_permutations: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> KSReport:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    result = stats.ks_2samp(a, b)
    report = KSReport(
        float(result.statistic), float(result.pvalue), ks_critical_value(a.size, b.size, alpha), a.size + b.size, alpha
    )
    if n_permutations > 0:
        rng = rng or np.random.default_rng(0)
        pooled = np.concatenate([a, b])
        exceed = 0
        for _ in range(n_permutations):
            perm = rng.permutation(pooled)
            stat = stats.ks_2samp(perm[: a.size], perm[a.size :]).statistic
            exceed += stat >= report.statistic
        report.permutation_p_value = (exceed + 1) / (n_permutations + 1)
    return report


def within_se(estimate: float, target: float, se: float, k: float = 4.0) -> bool:
    return abs(estimate - target) <= k * se


def correlation_with_se(x: np.ndarray, y: np.ndarray) -> Dict[str, float]:
    """Pearson correlation and its null standard error 1/sqrt(N)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3 or np.std(x) == 0 or np.std(y) == 0:
        return {"corr": 0.0, "se": float("nan")}
    return {"corr": float(np.corrcoef(x, y)[0, 1]), "se": 1.0 / math.sqrt(x.size)}

"""Deterministic variance flows of the diamond-lattice polymer and their limit targets.

Every map acts on a non-negative scalar (a variance or second moment) and is
iterated from a starting value, usually 0. Maps that involve the disorder
use ``DisorderSpec.lambda_gap`` = λ(2β) - 2λ(β); exponentials are taken
through ``expm1``/``log1p`` so million-step iterations at β ~ 1/n keep their
relative precision. ``dtype=np.longdouble`` switches a flow to extended
precision.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from .disorder import DisorderSpec
from .exceptions import AtOrBeyondCritical, NoBlowUpDetected, RegimeError, ToleranceNotReached
from .lattice import LatticeParams, count_generation_vertices

logger = logging.getLogger(__name__)

BLOW_UP_THRESHOLD = 1e12


class FlowKind(str, Enum):
    SIGMA = "sigma"
    MHAT = "Mhat"
    MN_BLS = "Mn_bls"
    MN_BEQ = "Mn_beq"
    MHATN_BEQ = "Mhatn_beq"
    MTILDEN_BEQ = "Mtilden_beq"
    MN_BGS = "Mn_bgs"
    MHATN_BGS = "Mhatn_bgs"
    EDGE_EXACT = "edge_exact"
    EDGE_SECOND_MOMENT = "edge_second_moment"


class BeqVariant(str, Enum):
    EXACT = "exact"
    QUADRATIC = "quadratic"
    CUBIC = "cubic"


_BEQ_KIND = {
    BeqVariant.EXACT: FlowKind.MN_BEQ,
    BeqVariant.QUADRATIC: FlowKind.MHATN_BEQ,
    BeqVariant.CUBIC: FlowKind.MTILDEN_BEQ,
}

_NEEDS_SPEC = {FlowKind.SIGMA, FlowKind.MN_BLS, FlowKind.MN_BEQ, FlowKind.MN_BGS}


@dataclass
class FlowMap:
    """One scalar recursion map.

    ``beta`` is β for sigma and the edge maps, β̂ for the b<s and b=s maps and
    βₙ for the b>s maps. ``n`` is the system size for the n-dependent maps
    and the variance scale for ``edge_exact``.
    """

    kind: FlowKind
    params: LatticeParams
    spec: Optional[DisorderSpec] = None
    beta: float = 0.0
    n: int = 1
    dtype: type = float

    def __post_init__(self):
        self.kind = FlowKind(self.kind)
        if self.kind in _NEEDS_SPEC and self.spec is None:
            raise ValueError(f"{self.kind.value} needs a disorder spec")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.kind in (FlowKind.MN_BLS,) and self.params.regime != "b<s":
            raise RegimeError("the M_n map of the b<s regime needs b < s")
        if self.kind in (FlowKind.MN_BEQ, FlowKind.MHATN_BEQ, FlowKind.MTILDEN_BEQ) and self.params.regime != "b=s":
            raise RegimeError(f"{self.kind.value} needs b = s")
        if self.kind in (FlowKind.MN_BGS, FlowKind.MHATN_BGS) and self.params.regime != "b>s":
            raise RegimeError(f"{self.kind.value} needs b > s")
        if self.kind is FlowKind.MN_BGS and self.beta == 0:
            raise ValueError("the b>s map rescales by 1/βₙ² and needs βₙ > 0")
        if self.dtype is float:
            self._log1p, self._expm1 = math.log1p, math.expm1
        else:
            self._log1p, self._expm1 = np.log1p, np.expm1

    @property
    def effective_beta(self) -> float:
        """Inverse temperature fed to the disorder."""
        b, s = self.params.b, self.params.s
        if self.kind is FlowKind.MN_BLS:
            return self.beta * (b / s) ** (self.n / 2.0)
        if self.kind is FlowKind.MN_BEQ:
            return self.beta / self.n
        return self.beta

    @cached_property
    def gap(self):
        if self.spec is None:
            return self.dtype(0.0)
        return self.dtype(self.spec.lambda_gap(self.effective_beta))

    def __call__(self, x):
        b, s = self.params.b, self.params.s
        d = self.dtype
        x = d(x)
        kind = self.kind
        if kind in (FlowKind.SIGMA, FlowKind.MN_BLS):
            return self._expm1(s * self._log1p(x) + (s - 1) * self.gap) / b
        if kind is FlowKind.MHAT:
            return self._expm1(s * self._log1p(x)) / b
        if kind is FlowKind.MN_BEQ:
            n = d(self.n)
            return n * self._expm1(b * self._log1p(x / n) + (b - 1) * self.gap) / b
        if kind is FlowKind.MHATN_BEQ:
            n = d(self.n)
            return x + (b - 1) * x * x / (2 * n) + d(self.beta) ** 2 * (b - 1) / (b * n)
        if kind is FlowKind.MTILDEN_BEQ:
            n = d(self.n)
            return (
                x
                + (b - 1) * x * x / (2 * n)
                + (b - 1) * (b - 2) * x**3 / (6 * n * n)
                + d(self.beta) ** 2 * (b - 1) / (b * n)
            )
        if kind is FlowKind.MN_BGS:
            beta2 = d(self.beta) ** 2
            return self._expm1(s * self._log1p(x * beta2) + (s - 1) * self.gap) / (b * beta2)
        if kind is FlowKind.MHATN_BGS:
            return d(s) * x / b + d(s - 1) / b
        if kind is FlowKind.EDGE_EXACT:
            scale = d(self.n)
            return scale * self._expm1(s * self._log1p(x / scale)) / b
        if kind is FlowKind.EDGE_SECOND_MOMENT:
            return x**s / b + d(b - 1) / b
        raise ValueError(f"unhandled flow kind {kind}")


@dataclass
class FlowTrace:
    values: np.ndarray
    blow_up_index: Optional[int] = None
    converged: bool = False
    tolerance: Optional[float] = None
    kind: Optional[str] = None

    @property
    def final(self) -> float:
        return float(self.values[-1])

    @property
    def blew_up(self) -> bool:
        return self.blow_up_index is not None

    def is_nondecreasing(self) -> bool:
        return bool(np.all(np.diff(self.values.astype(float)) >= 0))

    def rows(self) -> List[Dict[str, float]]:
        return [{"k": k, "value": float(v)} for k, v in enumerate(self.values)]


def iterate(
    flow: Callable,
    x0: float,
    steps: int,
    threshold: float = BLOW_UP_THRESHOLD,
    tol: Optional[float] = None,
    dtype: type = float,
) -> FlowTrace:
    """x_0, flow(x_0), ... for ``steps`` steps; stops at the first value above ``threshold``.

    With ``tol`` the iteration also stops once successive values differ by less than tol.
    """
    values = [dtype(x0)]
    x = values[0]
    blow_up = None
    converged = False
    for k in range(1, steps + 1):
        try:
            x = flow(x)
        except OverflowError:
            x = dtype(math.inf)
        values.append(x)
        if not np.isfinite(x) or x > threshold:
            blow_up = k
            logger.debug("Flow blew up at step %d", k)
            break
        if tol is not None and abs(x - values[-2]) < tol:
            converged = True
            break
    return FlowTrace(np.array(values, dtype=dtype), blow_up, converged, tol, getattr(getattr(flow, "kind", None), "value", None))


def _dtype(extended: bool) -> type:
    return np.longdouble if extended else float


# ---------------------------
# General (b, s): the exact variance recursion
# ---------------------------

def sigma_recursion(params: LatticeParams, spec: DisorderSpec, beta: float, k_max: int, extended: bool = False) -> FlowTrace:
    """σ_0 = 0, σ_{k+1} = (1/b)[(1+σ_k)^s e^{(s-1)(λ(2β)-2λ(β))} - 1]; σ_k = Var W_k(β)."""
    dtype = _dtype(extended)
    return iterate(FlowMap(FlowKind.SIGMA, params, spec, beta, dtype=dtype), 0.0, k_max, dtype=dtype)


# ---------------------------
# b < s
# ---------------------------

def mhat(params: LatticeParams, x: float) -> float:
    return FlowMap(FlowKind.MHAT, params)(x)


def mhat_power(params: LatticeParams, x: float, k: int) -> float:
    """M̂^k(x)."""
    flow = FlowMap(FlowKind.MHAT, params)
    for _ in range(k):
        x = flow(x)
    return x


def mhat_iterate_scaled(params: LatticeParams, x: float, n: int) -> float:
    """M̂^n(x (b/s)^n)."""
    return mhat_power(params, x * (params.b / params.s) ** n, n)


def _require_bls(params: LatticeParams):
    if params.regime != "b<s":
        raise RegimeError(f"needs b < s, got b={params.b}, s={params.s}")


def limiting_variance(params: LatticeParams, x: float, tol: float = 1e-12, max_iter: int = 2000) -> float:
    """𝔳_{b,s}(x) = lim_n M̂^n(x (b/s)^n)."""
    _require_bls(params)
    if x < 0:
        raise ValueError("x must be >= 0")
    if x == 0:
        return 0.0
    previous = mhat_iterate_scaled(params, x, 0)
    for n in range(1, max_iter + 1):
        current = mhat_iterate_scaled(params, x, n)
        if abs(current - previous) < tol * max(1.0, abs(current)):
            return current
        previous = current
    raise ToleranceNotReached(f"𝔳({x}) did not settle to {tol} within {max_iter} iterations")


def bls_target(params: LatticeParams, beta_hat: float) -> float:
    """𝔳(β̂²(s-1)/(s-b)), the b<s variance limit."""
    _require_bls(params)
    b, s = params.b, params.s
    return limiting_variance(params, beta_hat**2 * (s - 1) / (s - b))


def bls_flow(params: LatticeParams, spec: DisorderSpec, beta_hat: float, n: int, extended: bool = False) -> FlowTrace:
    dtype = _dtype(extended)
    flow = FlowMap(FlowKind.MN_BLS, params, spec, beta_hat, n, dtype)
    return iterate(flow, 0.0, n, dtype=dtype)


def variance_limit_bls(params: LatticeParams, spec: DisorderSpec, beta_hat: float, n: int) -> float:
    """M_n^n(0) with βₙ = β̂ (b/s)^{n/2}."""
    _require_bls(params)
    return bls_flow(params, spec, beta_hat, n).final


def initial_envelope(params: LatticeParams, beta_hat: float, n: int, m: int) -> float:
    """β̂²((s-1)/(s-b))(1-(b/s)^m)(b/s)^{n-m}, the early-generation approximation of M_n^m(0)."""
    b, s = params.b, params.s
    r = b / s
    return beta_hat**2 * (s - 1) / (s - b) * (1 - r**m) * r ** (n - m)


def mmap_diagnostics(
    params: LatticeParams, xs: Sequence[float], ns: Sequence[int], Ns: Sequence[int], h: float = 1e-6
) -> Dict[str, float]:
    """Smallest constants C making the three M̂ bounds hold on the sampled grid.

    (i) M̂^{N-n}(x(b/s)^N) <= C x (b/s)^n
    (ii) M̂^{N-n}(x(b/s)^N) - x(b/s)^n <= C x² (b/s)^{2n}
    (iii) d/dx M̂^n(x(b/s)^n) <= C
    """
    _require_bls(params)
    r = params.b / params.s
    c1 = c2 = c3 = 0.0
    for x in xs:
        if x <= 0:
            continue
        for n in ns:
            for N in Ns:
                if N < n:
                    continue
                value = mhat_power(params, x * r**N, N - n)
                c1 = max(c1, value / (x * r**n))
                c2 = max(c2, (value - x * r**n) / (x**2 * r ** (2 * n)))
            slope = (mhat_iterate_scaled(params, x + h, n) - mhat_iterate_scaled(params, x, n)) / h
            c3 = max(c3, slope)
    return {"C_i": c1, "C_ii": c2, "C_iii": c3}


# ---------------------------
# b = s
# ---------------------------

def kappa(b: int) -> float:
    """κ_b = π√b / (√2 (b-1))."""
    if b < 2:
        raise ValueError("b must be >= 2")
    return math.pi * math.sqrt(b) / (math.sqrt(2.0) * (b - 1))


def upsilon(b: int, beta_hat: float) -> float:
    """υ_b(β̂) = β̂ (√2/√b) tan((b-1)β̂/√(2b))."""
    if beta_hat >= kappa(b):
        raise AtOrBeyondCritical(f"β̂ = {beta_hat} is not below κ_{b} = {kappa(b)}")
    if beta_hat < 0:
        raise ValueError("β̂ must be >= 0")
    return beta_hat * math.sqrt(2.0 / b) * math.tan((b - 1) * beta_hat / math.sqrt(2.0 * b))


def tau(b: int, beta_hat: float, r: float) -> float:
    """τ_r = (β̂√2/√b) tan(β̂(b-1)r/√(2b)), the variance of the limit process at time r."""
    if not 0.0 <= r <= 1.0:
        raise ValueError("r must lie in [0, 1]")
    if beta_hat * r >= kappa(b):
        raise AtOrBeyondCritical(f"β̂·r = {beta_hat * r} is not below κ_{b}")
    return beta_hat * math.sqrt(2.0 / b) * math.tan(beta_hat * (b - 1) * r / math.sqrt(2.0 * b))


def riccati_rhs(b: int, beta_hat: float, phi: float) -> float:
    """dφ/dr = ((b-1)/2)φ² + (b-1)β̂²/b, solved by r ↦ τ_r."""
    return 0.5 * (b - 1) * phi**2 + (b - 1) * beta_hat**2 / b


def upsilon_edge(b: int, beta_hat: float) -> float:
    """(1/β̂² - 1/κ_b²)^{-1}, the edge-model limit variance as stated with κ_b."""
    k = kappa(b)
    if beta_hat >= k:
        raise AtOrBeyondCritical(f"β̂ = {beta_hat} is not below κ_{b} = {k}")
    if beta_hat == 0:
        return 0.0
    return 1.0 / (1.0 / beta_hat**2 - 1.0 / k**2)


def edge_critical_point(b: int) -> float:
    """Blow-up point √(2/(b-1)) of the edge variance flow in the β̂/√n schedule (b = s)."""
    return math.sqrt(2.0 / (b - 1))


def edge_variance_limit(b: int, beta_hat: float) -> float:
    """Limit of n·Var W_n(β̂/√n) for the edge model with b = s: (1/β̂² - (b-1)/2)^{-1}."""
    if beta_hat >= edge_critical_point(b):
        raise AtOrBeyondCritical(f"β̂ = {beta_hat} is not below {edge_critical_point(b)}")
    if beta_hat == 0:
        return 0.0
    return 1.0 / (1.0 / beta_hat**2 - 0.5 * (b - 1))


def _require_beq(params: LatticeParams):
    if params.regime != "b=s":
        raise RegimeError(f"needs b = s, got b={params.b}, s={params.s}")


def variance_flow_beq(
    params: LatticeParams,
    spec: DisorderSpec,
    beta_hat: float,
    n: int,
    variant: BeqVariant = BeqVariant.EXACT,
    steps: Optional[int] = None,
    extended: bool = False,
    threshold: float = BLOW_UP_THRESHOLD,
) -> FlowTrace:
    """Iterates M_n, M̂_n or M̃_n (β = β̂/n) from 0; M^k(0) = n·Var W_k(β̂/n)."""
    _require_beq(params)
    dtype = _dtype(extended)
    kind = _BEQ_KIND[BeqVariant(variant)]
    flow = FlowMap(kind, params, spec if kind is FlowKind.MN_BEQ else None, beta_hat, n, dtype)
    return iterate(flow, 0.0, n if steps is None else steps, threshold=threshold, dtype=dtype)


def critical_scaling(
    params: LatticeParams, spec: DisorderSpec, n: int, variant: BeqVariant = BeqVariant.CUBIC, extended: bool = False
) -> float:
    """(log n / n)·M^n(0) at β̂ = κ_b, i.e. log(n)·Var W_n(κ_b/n); tends to 6/(b+1)."""
    trace = variance_flow_beq(params, spec, kappa(params.b), n, variant, extended=extended)
    return math.log(n) / n * trace.final


def critical_target(b: int) -> float:
    return 6.0 / (b + 1)


def critical_table(
    params: LatticeParams, spec: DisorderSpec, n_grid: Sequence[int], variant: BeqVariant = BeqVariant.CUBIC
) -> List[Dict[str, float]]:
    target = critical_target(params.b)
    rows = []
    for n in n_grid:
        value = critical_scaling(params, spec, n, variant)
        rows.append({"n": n, "value": value, "target": target, "relative_gap": abs(value - target) / target})
        logger.info("critical scaling n=%d -> %.6f (target %.4f)", n, value, target)
    return rows


def analog_variance(params: LatticeParams, spec: DisorderSpec, beta_hat: float, n: int) -> float:
    """log(n)·Var W_{⌊nκ_b/β̂⌋}(β̂/n) for β̂ > κ_b; tends to 6/(b+1)."""
    _require_beq(params)
    k = int(math.floor(n * kappa(params.b) / beta_hat))
    trace = variance_flow_beq(params, spec, beta_hat, n, BeqVariant.EXACT, steps=k)
    return math.log(n) / n * trace.final


@dataclass
class ExplosionWindow:
    l_down: int
    l_up: int
    blow_up_index: Optional[int]
    centre: float
    trace: FlowTrace = field(repr=False)

    def offsets(self) -> Dict[str, float]:
        return {"down": self.l_down - self.centre, "up": self.l_up - self.centre}


def explosion_window(
    params: LatticeParams,
    spec: DisorderSpec,
    beta_hat: float,
    n: int,
    eps_low: float = 0.05,
    eps_high: float = 1.0,
    threshold: float = BLOW_UP_THRESHOLD,
) -> ExplosionWindow:
    """Where Var W_k(β̂/n) = M_n^k(0)/n leaves [0, eps_low) and passes eps_high, k <= n."""
    _require_beq(params)
    trace = variance_flow_beq(params, spec, beta_hat, n, BeqVariant.EXACT, threshold=threshold)
    var = trace.values.astype(float) / n
    above = np.nonzero(~(var <= eps_high))[0]
    if above.size == 0:
        raise NoBlowUpDetected(
            f"Var W_k stayed below {eps_high} up to k = n = {n} at β̂ = {beta_hat} (κ_b = {kappa(params.b)})"
        )
    l_up = int(above[0])
    below = np.nonzero(var[:l_up] < eps_low)[0]
    l_down = int(below[-1]) if below.size else 0
    return ExplosionWindow(l_down, l_up, trace.blow_up_index, n * kappa(params.b) / beta_hat, trace)


def explosion_regression(
    params: LatticeParams, spec: DisorderSpec, beta_hat: float, n_grid: Sequence[int], **kwargs
) -> Dict[str, object]:
    """Regresses the window offsets (l - nκ_b/β̂) on log n."""
    rows = []
    for n in n_grid:
        w = explosion_window(params, spec, beta_hat, n, **kwargs)
        blow = w.blow_up_index if w.blow_up_index is not None else w.l_up
        rows.append({"n": n, "l_down": w.l_down, "l_up": w.l_up, "blow_up_index": blow, "centre": w.centre})
    logs = np.log([r["n"] for r in rows])
    up = np.array([r["l_up"] - r["centre"] for r in rows])
    fit = stats.linregress(logs, up)
    return {"rows": rows, "slope": float(fit.slope), "intercept": float(fit.intercept), "r_squared": float(fit.rvalue**2)}


# ---------------------------
# b > s
# ---------------------------

def affine_fixed_point(params: LatticeParams) -> float:
    """(s-1)/(b-s), the fixed point of x ↦ (s/b)x + (s-1)/b."""
    if params.regime != "b>s":
        raise RegimeError(f"needs b > s, got b={params.b}, s={params.s}")
    return (params.s - 1) / (params.b - params.s)


def noise_sum_variance(params: LatticeParams, m_max: int) -> float:
    """Σ_{m=1}^{m_max} b^{-2m}|V_m|, the variance of the explicit b>s noise sum."""
    total = sum(
        (Fraction(count_generation_vertices(params, m), params.b ** (2 * m)) for m in range(1, m_max + 1)),
        Fraction(0),
    )
    return float(total)


@dataclass
class BgsFlowReport:
    exact: FlowTrace
    affine: FlowTrace
    gap: float
    fixed_point: float
    beta_n: float


def variance_flow_bgs(
    params: LatticeParams, spec: DisorderSpec, beta_n: float, n: int, extended: bool = False
) -> BgsFlowReport:
    """M_n and the affine M̂_n for b > s, both iterated n times from 0."""
    dtype = _dtype(extended)
    exact = iterate(FlowMap(FlowKind.MN_BGS, params, spec, beta_n, n, dtype), 0.0, n, dtype=dtype)
    affine = iterate(FlowMap(FlowKind.MHATN_BGS, params, None, beta_n, n, dtype), 0.0, n, dtype=dtype)
    return BgsFlowReport(exact, affine, abs(exact.final - affine.final), affine_fixed_point(params), beta_n)


# ---------------------------
# Edge model
# ---------------------------

def edge_second_moment_flow(
    params: LatticeParams, spec: DisorderSpec, beta: float, n: int, threshold: float = BLOW_UP_THRESHOLD
) -> FlowTrace:
    """m_{k+1} = (1/b) m_k^s + (b-1)/b from m_0 = e^{λ(2β)-2λ(β)}; m_k = E[W_k²] in the edge model."""
    m0 = math.exp(spec.lambda_gap(beta))
    return iterate(FlowMap(FlowKind.EDGE_SECOND_MOMENT, params), m0, n, threshold=threshold)


def edge_variance_flow(
    params: LatticeParams, spec: DisorderSpec, beta_hat: float, n: int, threshold: float = BLOW_UP_THRESHOLD
) -> FlowTrace:
    """n·Var W_k(β̂/√n) of the edge model for k = 0..n."""
    beta = beta_hat / math.sqrt(n)
    x0 = n * math.expm1(spec.lambda_gap(beta))
    return iterate(FlowMap(FlowKind.EDGE_EXACT, params, None, beta, n), x0, n, threshold=threshold)


# ---------------------------
# Rate checks
# ---------------------------

@dataclass
class RateCheck:
    constant: float
    ok: bool
    ratios: List[float]


def fitted_rate_check(ns: Sequence[int], gaps: Sequence[float], rate: Callable[[int], float], slack: float = 2.0) -> RateCheck:
    """Fits C = gap/rate at the smallest n and checks gap <= slack·C·rate(n) elsewhere."""
    if len(ns) != len(gaps) or not ns:
        raise ValueError("ns and gaps must be non-empty and equally long")
    order = np.argsort(ns)
    ns = [ns[i] for i in order]
    gaps = [abs(gaps[i]) for i in order]
    ratios = [g / rate(n) for n, g in zip(ns, gaps)]
    constant = ratios[0]
    ok = all(r <= slack * constant for r in ratios[1:])
    return RateCheck(constant, ok, ratios)

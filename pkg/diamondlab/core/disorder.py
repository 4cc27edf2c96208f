import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp, ndtri

from .exceptions import AddressMismatch, AddressOverflow, DisorderSpecError, OutOfRange
from .lattice import (
    EdgeAddress,
    LatticeParams,
    VertexAddress,
    count_edges,
    count_generation_vertices,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

MOMENT_TOLERANCE = 1e-12
SMALL_BETA = 1e-3
SQRT3 = math.sqrt(3.0)


class DisorderFamily(str, Enum):
    GAUSSIAN = "standard-gaussian"
    RADEMACHER = "rademacher"
    UNIFORM = "uniform-scaled"
    DISCRETE = "discrete"


def _as_output(x: np.ndarray, scalar: bool) -> ArrayLike:
    return float(x) if scalar else x


@dataclass(frozen=True)
class DisorderSpec:
    """Mean-zero, variance-one law of the site disorder ω."""

    family: DisorderFamily = DisorderFamily.GAUSSIAN
    values: Tuple[float, ...] = ()
    probs: Tuple[float, ...] = ()

    def __post_init__(self):
        try:
            family = DisorderFamily(self.family)
        except ValueError as exc:
            raise DisorderSpecError(f"unknown disorder family {self.family!r}") from exc
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if family is DisorderFamily.DISCRETE:
            self._validate_discrete()
        elif self.values or self.probs:
            raise DisorderSpecError(f"{family.value} takes no values/probs")

    def _validate_discrete(self):
        values, probs = np.asarray(self.values), np.asarray(self.probs)
        if values.size == 0 or values.size != probs.size:
            raise DisorderSpecError("discrete disorder needs equally long, non-empty values and probs")
        if np.any(probs < 0) or abs(math.fsum(self.probs) - 1.0) > MOMENT_TOLERANCE:
            raise DisorderSpecError("probs must be non-negative and sum to 1")
        mean = math.fsum(v * p for v, p in zip(self.values, self.probs))
        var = math.fsum(v * v * p for v, p in zip(self.values, self.probs)) - mean**2
        if abs(mean) > MOMENT_TOLERANCE or abs(var - 1.0) > MOMENT_TOLERANCE:
            raise DisorderSpecError(f"discrete disorder must have mean 0 and variance 1, got {mean}, {var}")

    @classmethod
    def gaussian(cls) -> "DisorderSpec":
        return cls(DisorderFamily.GAUSSIAN)

    @classmethod
    def rademacher(cls) -> "DisorderSpec":
        return cls(DisorderFamily.RADEMACHER)

    @classmethod
    def uniform(cls) -> "DisorderSpec":
        return cls(DisorderFamily.UNIFORM)

    @classmethod
    def discrete(cls, values: Sequence[float], probs: Sequence[float]) -> "DisorderSpec":
        return cls(DisorderFamily.DISCRETE, tuple(values), tuple(probs))

    @classmethod
    def from_json(cls, source: Union[str, Path, Dict[str, Any]]) -> "DisorderSpec":
        """Load ``{"values": [...], "probs": [...]}`` (or ``{"family": ...}``) from a dict or a file."""
        if isinstance(source, dict):
            data = source
        else:
            try:
                data = json.loads(Path(source).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise DisorderSpecError(f"cannot read disorder spec {source}: {exc}") from exc
        if "values" in data:
            return cls.discrete(data["values"], data.get("probs", ()))
        return cls(data.get("family", DisorderFamily.GAUSSIAN))

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"family": self.family.value}
        if self.family is DisorderFamily.DISCRETE:
            out.update(values=list(self.values), probs=list(self.probs))
        return out

    # ---------------------------
    # Cumulants and weights
    # ---------------------------

    def _raw_moment(self, k: int) -> float:
        return math.fsum(v**k * p for v, p in zip(self.values, self.probs))

    def cgf(self, beta: ArrayLike) -> ArrayLike:
        """λ(β) = log E[e^{βω}]."""
        scalar = np.ndim(beta) == 0
        beta = np.asarray(beta, dtype=float)
        if not np.all(np.isfinite(beta)):
            raise OutOfRange(f"beta must be finite, got {beta}")
        family = self.family
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            if family is DisorderFamily.GAUSSIAN:
                out = 0.5 * beta**2
            elif family is DisorderFamily.RADEMACHER:
                a = np.abs(beta)
                out = a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)
            elif family is DisorderFamily.UNIFORM:
                x = np.abs(SQRT3 * beta)
                small = x < 1e-4
                safe = np.where(small, 1.0, x)
                big = safe + np.log1p(-np.exp(-2.0 * safe)) - np.log(2.0 * safe)
                out = np.where(small, x**2 / 6.0 - x**4 / 180.0, big)
            else:
                values = np.asarray(self.values)
                logp = np.log(np.asarray(self.probs))
                out = logsumexp(np.multiply.outer(beta, values) + logp, axis=-1)
        if not np.all(np.isfinite(out)):
            raise OutOfRange(f"lambda(beta) is not finite for {family.value} at beta={beta}")
        return _as_output(out, scalar)

    def lambda_gap(self, beta: ArrayLike) -> ArrayLike:
        """λ(2β) - 2λ(β), evaluated without cancellation at small β."""
        scalar = np.ndim(beta) == 0
        beta = np.asarray(beta, dtype=float)
        if not np.all(np.isfinite(beta)):
            raise OutOfRange(f"beta must be finite, got {beta}")
        family = self.family
        if family is DisorderFamily.GAUSSIAN:
            out = beta**2
        elif family is DisorderFamily.RADEMACHER:
            out = np.log1p(np.tanh(beta) ** 2)
        elif family is DisorderFamily.UNIFORM:
            # log(x coth x) with x = sqrt(3) beta
            x = np.abs(SQRT3 * beta)
            small = x < 1e-2
            safe = np.where(small, 1.0, x)
            series = x**2 / 3.0 - x**4 / 45.0 + 2.0 * x**6 / 945.0
            out = np.where(small, np.log1p(series), np.log(safe / np.tanh(safe)))
        else:
            k3 = self._raw_moment(3)
            k4 = self._raw_moment(4) - 3.0
            k5 = self._raw_moment(5) - 10.0 * k3
            series = beta**2 + k3 * beta**3 + (7.0 / 12.0) * k4 * beta**4 + 0.25 * k5 * beta**5
            small = np.abs(beta) < SMALL_BETA
            direct = np.asarray(self.cgf(2.0 * beta)) - 2.0 * np.asarray(self.cgf(beta))
            out = np.where(small, series, direct)
        if not np.all(np.isfinite(out)):
            raise OutOfRange(f"lambda gap is not finite at beta={beta}")
        return _as_output(np.asarray(out, dtype=float), scalar)

    def weight(self, beta: float, omega: ArrayLike) -> ArrayLike:
        """E(β) = exp(βω - λ(β))."""
        scalar = np.ndim(omega) == 0
        lam = self.cgf(beta)
        out = np.exp(beta * np.asarray(omega, dtype=float) - lam)
        return _as_output(out, scalar)

    # ---------------------------
    # Sampling
    # ---------------------------

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF transform of uniforms in (0, 1)."""
        u = np.asarray(u, dtype=float)
        family = self.family
        if family is DisorderFamily.GAUSSIAN:
            return ndtri(u)
        if family is DisorderFamily.RADEMACHER:
            return np.where(u < 0.5, -1.0, 1.0)
        if family is DisorderFamily.UNIFORM:
            return SQRT3 * (2.0 * u - 1.0)
        cumulative = np.cumsum(self.probs)
        index = np.minimum(np.searchsorted(cumulative, u, side="right"), len(self.values) - 1)
        return np.asarray(self.values)[index]

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.from_uniform(open_uniforms(rng, size))


def open_uniforms(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms on the open interval (0, 1), one 53-bit integer draw per value."""
    bits = rng.integers(0, 1 << 53, size=size, dtype=np.int64)
    return (bits + 0.5) * (1.0 / (1 << 53))


def cgf(spec: DisorderSpec, beta: ArrayLike) -> ArrayLike:
    return spec.cgf(beta)


def lambda_gap(spec: DisorderSpec, beta: ArrayLike) -> ArrayLike:
    return spec.lambda_gap(beta)


def weight(spec: DisorderSpec, beta: float, omega: ArrayLike) -> ArrayLike:
    return spec.weight(beta, omega)


# ---------------------------
# Seeded fields
# ---------------------------

class Placement(str, Enum):
    VERTICES = "vertices"
    EDGES = "edges"


_PLACEMENT_CODE = {Placement.VERTICES: 1, Placement.EDGES: 2}
BLOCK_BITS = 16
BLOCK_SIZE = 1 << BLOCK_BITS
RANK_BITS = 128


def stream_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Seed of replicate ``index``: a child of ``master_seed`` keyed by the index alone,
    so replicate sets extend without touching earlier replicates."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))


def seed_word(master_seed: int, index: int) -> int:
    """First 64-bit state word of ``stream_seed(master_seed, index)``; names the stream in CSV output."""
    return int(stream_seed(master_seed, index).generate_state(1, np.uint64)[0])


@lru_cache(maxsize=512)
def _omega_block(
    spec: DisorderSpec, master_seed: int, stream: int, placement: int, generation: int, block: int, length: int
) -> np.ndarray:
    words = tuple((block >> (32 * t)) & 0xFFFFFFFF for t in range(4))
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(stream, placement, generation) + words)
    rng = np.random.Generator(np.random.Philox(seq))
    values = spec.from_uniform(open_uniforms(rng, length))
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class DisorderField:
    """Deterministic ω on the vertices (or edges) of D_n keyed by (master_seed, stream, address).

    Values are generated in blocks of ``BLOCK_SIZE`` consecutive ranks of one
    generation; each block has its own counter-based Philox stream derived
    from a ``SeedSequence`` whose spawn key is the injective tuple
    (stream, placement, generation, block as four 32-bit words).
    Edges use generation 0.
    """

    params: LatticeParams
    n: int
    master_seed: int
    spec: DisorderSpec = DisorderSpec()
    placement: Placement = Placement.VERTICES
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "placement", Placement(self.placement))
        if self.n < 0:
            raise AddressMismatch(f"depth must be >= 0, got {self.n}")
        if not 0 <= self.master_seed < 1 << 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if not 0 <= self.stream < 1 << 32:
            raise ValueError("stream must fit in 32 bits")
        if count_edges(self.params, self.n) > 1 << RANK_BITS:
            raise AddressOverflow(f"(bs)^n exceeds 2^{RANK_BITS} at b={self.params.b}, s={self.params.s}, n={self.n}")

    def with_stream(self, stream: int) -> "DisorderField":
        return DisorderField(self.params, self.n, self.master_seed, self.spec, self.placement, stream)

    def count(self, generation: int) -> int:
        if self.placement is Placement.EDGES:
            if generation != 0:
                raise AddressMismatch("edge fields only have generation 0")
            return count_edges(self.params, self.n)
        if not 1 <= generation <= self.n:
            raise AddressMismatch(f"generation {generation} outside 1..{self.n}")
        return count_generation_vertices(self.params, generation)

    def values(self, generation: int, start: int = 0, stop: int = None) -> np.ndarray:
        """ω for ranks [start, stop) of one generation (generation 0 = edges)."""
        total = self.count(generation)
        stop = total if stop is None else stop
        if not 0 <= start <= stop <= total:
            raise AddressMismatch(f"rank range [{start}, {stop}) outside generation of size {total}")
        if start == stop:
            return np.empty(0)
        code = _PLACEMENT_CODE[self.placement]
        pieces = []
        first, last = start >> BLOCK_BITS, (stop - 1) >> BLOCK_BITS
        for block in range(first, last + 1):
            length = min(BLOCK_SIZE, total - (block << BLOCK_BITS))
            chunk = _omega_block(self.spec, self.master_seed, self.stream, code, generation, block, length)
            lo = max(start - (block << BLOCK_BITS), 0)
            hi = min(stop - (block << BLOCK_BITS), length)
            pieces.append(chunk[lo:hi])
        return pieces[0].copy() if len(pieces) == 1 else np.concatenate(pieces)

    def value(self, address: Union[VertexAddress, EdgeAddress]) -> float:
        if isinstance(address, VertexAddress):
            if self.placement is not Placement.VERTICES:
                raise AddressMismatch("vertex address queried on an edge field")
            if address.parent.params != self.params or address.parent.n != self.n:
                raise AddressMismatch("vertex address belongs to a different lattice")
            generation, rank = address.key
        elif isinstance(address, EdgeAddress):
            if self.placement is not Placement.EDGES:
                raise AddressMismatch("edge address queried on a vertex field")
            if address.params != self.params or address.n != self.n:
                raise AddressMismatch("edge address belongs to a different lattice")
            generation, rank = 0, address.rank
        else:
            raise AddressMismatch(f"unsupported address type {type(address).__name__}")
        return float(self.values(generation, rank, rank + 1)[0])


def field_value(field: DisorderField, address: Union[VertexAddress, EdgeAddress]) -> float:
    return field.value(address)

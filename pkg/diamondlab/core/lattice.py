import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, Iterator, List, Sequence, Tuple, Union

from .exceptions import AddressMismatch, CapExceeded, InvalidLattice

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]
Word = Tuple[Pair, ...]
VertexKey = Tuple[int, int]  # (generation, rank within generation)

DEFAULT_ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class LatticeParams:
    """Branching number b and segment number s of the diamond lattice."""

    b: int
    s: int

    def __post_init__(self):
        if isinstance(self.b, bool) or not isinstance(self.b, int) or self.b < 2:
            raise InvalidLattice(f"b must be an integer >= 2, got {self.b!r}")
        if isinstance(self.s, bool) or not isinstance(self.s, int) or self.s < 1:
            raise InvalidLattice(f"s must be an integer >= 1, got {self.s!r}")

    @property
    def bs(self) -> int:
        return self.b * self.s

    @property
    def vertices_per_copy(self) -> int:
        """Interior vertices of one copy of D_1."""
        return self.b * (self.s - 1)

    @property
    def regime(self) -> str:
        if self.b < self.s:
            return "b<s"
        if self.b == self.s:
            return "b=s"
        return "b>s"

    @property
    def ratio(self) -> Fraction:
        """b/s as an exact rational."""
        return Fraction(self.b, self.s)


def _check_pair(params: LatticeParams, pair: Pair) -> Pair:
    i, j = pair
    if not (1 <= i <= params.b and 1 <= j <= params.s):
        raise AddressMismatch(f"pair {pair} outside {{1..{params.b}}}x{{1..{params.s}}}")
    return int(i), int(j)


def encode_word(params: LatticeParams, word: Sequence[Pair]) -> int:
    """Positional radix-(bs) rank of a word; the first pair is the most significant digit."""
    rank = 0
    for pair in word:
        i, j = _check_pair(params, pair)
        rank = rank * params.bs + (i - 1) * params.s + (j - 1)
    return rank


def decode_word(params: LatticeParams, rank: int, length: int) -> Word:
    if length < 0 or not 0 <= rank < params.bs ** length:
        raise AddressMismatch(f"rank {rank} out of range for word length {length}")
    digits = []
    for _ in range(length):
        rank, digit = divmod(rank, params.bs)
        digits.append((digit // params.s + 1, digit % params.s + 1))
    return tuple(reversed(digits))


@dataclass(frozen=True)
class SubgraphAddress:
    """A copy g of D_k inside D_n, named by the word of length n - k leading to it."""

    params: LatticeParams
    n: int
    word: Word = ()

    def __post_init__(self):
        if self.n < 0:
            raise AddressMismatch(f"depth must be >= 0, got {self.n}")
        word = tuple(_check_pair(self.params, p) for p in self.word)
        if len(word) > self.n:
            raise AddressMismatch(f"word of length {len(word)} does not fit depth {self.n}")
        object.__setattr__(self, "word", word)

    @classmethod
    def root(cls, params: LatticeParams, n: int) -> "SubgraphAddress":
        return cls(params, n, ())

    @classmethod
    def from_rank(cls, params: LatticeParams, n: int, length: int, rank: int) -> "SubgraphAddress":
        return cls(params, n, decode_word(params, rank, length))

    @property
    def depth(self) -> int:
        """k such that g is a copy of D_k."""
        return self.n - len(self.word)

    @property
    def rank(self) -> int:
        return encode_word(self.params, self.word)

    def child(self, i: int, j: int) -> "SubgraphAddress":
        return SubgraphAddress(self.params, self.n, self.word + ((i, j),))


@dataclass(frozen=True)
class EdgeAddress(SubgraphAddress):
    """An edge of D_n: a subgraph address whose word has full length n."""

    def __post_init__(self):
        super().__post_init__()
        if len(self.word) != self.n:
            raise AddressMismatch(f"edge words have length {self.n}, got {len(self.word)}")

    @classmethod
    def from_rank(cls, params: LatticeParams, n: int, rank: int) -> "EdgeAddress":  # type: ignore[override]
        return cls(params, n, decode_word(params, rank, n))


@dataclass(frozen=True)
class VertexAddress:
    """Vertex g⋄(i, j): the j-th interior vertex on branch i of the copy g."""

    parent: SubgraphAddress
    branch: int
    slot: int

    def __post_init__(self):
        params = self.parent.params
        if self.parent.depth < 1:
            raise AddressMismatch("a leaf subgraph has no interior vertices")
        if not (1 <= self.branch <= params.b and 1 <= self.slot <= params.s - 1):
            raise AddressMismatch(
                f"vertex ({self.branch}, {self.slot}) outside {{1..{params.b}}}x{{1..{params.s - 1}}}"
            )

    @property
    def generation(self) -> int:
        return len(self.parent.word) + 1

    @property
    def rank(self) -> int:
        s1 = self.parent.params.s - 1
        return (self.parent.rank * self.parent.params.b + self.branch - 1) * s1 + self.slot - 1

    @property
    def key(self) -> VertexKey:
        return self.generation, self.rank

    @classmethod
    def from_key(cls, params: LatticeParams, n: int, key: VertexKey) -> "VertexAddress":
        generation, rank = key
        if not 1 <= generation <= n:
            raise AddressMismatch(f"generation {generation} outside 1..{n}")
        s1 = params.s - 1
        if s1 == 0:
            raise AddressMismatch("s = 1 lattices have no vertices")
        parent_rank, rest = divmod(rank, params.b * s1)
        branch, slot = divmod(rest, s1)
        parent = SubgraphAddress.from_rank(params, n, generation - 1, parent_rank)
        return cls(parent, branch + 1, slot + 1)


@dataclass(frozen=True)
class PathAddress:
    """Branch choice at the root copy of D_1 and one sub-path per segment.

    The depth-0 path (a single edge) has ``branch == 0`` and no segments.
    """

    branch: int = 0
    segments: Tuple["PathAddress", ...] = ()

    @property
    def depth(self) -> int:
        return 0 if not self.segments else 1 + self.segments[0].depth


EDGE_PATH = PathAddress()


@dataclass(frozen=True)
class EnumeratedPath:
    path: PathAddress
    vertices: FrozenSet[VertexKey]
    edges: Tuple[int, ...] = field(default=())


# ---------------------------
# Counting
# ---------------------------

def count_paths(params: LatticeParams, n: int) -> int:
    """|Γ_n| = b^{(s^n - 1)/(s - 1)}, with exponent n when s = 1."""
    if n < 0:
        raise ValueError("n must be >= 0")
    exponent = sum(params.s**k for k in range(n))
    return params.b**exponent


def count_generation_vertices(params: LatticeParams, k: int) -> int:
    if k < 1:
        raise ValueError("generation k must be >= 1")
    return params.b**k * params.s ** (k - 1) * (params.s - 1)


def count_edges(params: LatticeParams, n: int) -> int:
    return params.bs**n


def count_subgraphs(params: LatticeParams, k: int, n: int) -> int:
    """|G_{k,n}| = (bs)^{n-k}."""
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    return params.bs ** (n - k)


def count_vertices(params: LatticeParams, n: int) -> int:
    return sum(count_generation_vertices(params, k) for k in range(1, n + 1))


def path_vertex_count(params: LatticeParams, n: int) -> int:
    """Interior vertices visited by any path of Γ_n."""
    return params.s**n - 1


# ---------------------------
# Address arithmetic
# ---------------------------

def children(g: SubgraphAddress) -> List[SubgraphAddress]:
    if g.depth == 0:
        return []
    return [g.child(i, j) for i in range(1, g.params.b + 1) for j in range(1, g.params.s + 1)]


def interior_vertices(g: SubgraphAddress) -> List[VertexAddress]:
    if g.depth == 0:
        return []
    return [
        VertexAddress(g, i, j)
        for i in range(1, g.params.b + 1)
        for j in range(1, g.params.s)
    ]


def subgraph_vertex_keys(g: SubgraphAddress) -> Iterator[VertexKey]:
    """Every vertex inside g, i.e. generations len(word)+1 .. n of its rank block."""
    params = g.params
    base = g.rank
    length = len(g.word)
    for t in range(g.depth):
        generation = length + t + 1
        per_parent = params.vertices_per_copy
        first_parent = base * params.bs**t
        start = first_parent * per_parent
        stop = (first_parent + params.bs**t) * per_parent
        for rank in range(start, stop):
            yield generation, rank


def iter_subgraphs(params: LatticeParams, k: int, n: int) -> Iterator[SubgraphAddress]:
    length = n - k
    for rank in range(count_subgraphs(params, k, n)):
        yield SubgraphAddress.from_rank(params, n, length, rank)


# ---------------------------
# Path measure and overlaps
# ---------------------------

def vertex_on_path_probability(
    params: LatticeParams, a: VertexAddress, exact: bool = False
) -> Union[float, Fraction]:
    """P(a) = b^{-generation(a)} under the uniform path measure."""
    p = Fraction(1, params.b**a.generation)
    return p if exact else float(p)


def pair_on_path_probability(
    params: LatticeParams, a1: VertexAddress, a2: VertexAddress, exact: bool = False
) -> Union[float, Fraction]:
    """P(a1, a2): both vertices on a uniformly chosen path."""
    if a1.generation > a2.generation:
        a1, a2 = a2, a1
    if a1 == a2:
        return vertex_on_path_probability(params, a1, exact)
    # branch decisions at copies both vertices pass through must agree
    w1, w2 = a1.parent.word, a2.parent.word
    common = 0
    while common < min(len(w1), len(w2)) and w1[common] == w2[common]:
        common += 1
    if common < len(w1):
        # words split inside one copy of D_1: compatible only on a common branch
        if common < len(w2) and w1[common][0] == w2[common][0]:
            p = Fraction(1, params.b ** (a1.generation + a2.generation - common - 1))
            return p if exact else float(p)
        return Fraction(0) if exact else 0.0
    # a1's copy contains a2's copy (or is the same copy)
    if len(w2) == len(w1):
        if a1.branch != a2.branch:
            return Fraction(0) if exact else 0.0
        p = Fraction(1, params.b**a1.generation)
        return p if exact else float(p)
    if w2[len(w1)][0] != a1.branch:
        return Fraction(0) if exact else 0.0
    p = Fraction(1, params.b**a2.generation)
    return p if exact else float(p)


def first_order_overlap_sum(params: LatticeParams, n: int, exact: bool = False) -> Union[float, Fraction]:
    """Σ_a P(a)² = Σ_{k=1}^n ((s-1)/s)(s/b)^k."""
    total = sum(
        (Fraction(params.s - 1, params.s) * Fraction(params.s, params.b) ** k for k in range(1, n + 1)),
        Fraction(0),
    )
    return total if exact else float(total)


def second_order_overlap_sum(params: LatticeParams, n: int, exact: bool = False) -> Union[float, Fraction]:
    """Σ over unordered vertex pairs {a1 ≠ a2} of P(a1, a2)².

    Built from the top copy of D_1: pairs of generation-1 vertices on one
    branch, generation-1 vertex with a vertex in a sub-copy of its branch,
    pairs inside one sub-copy, and pairs in two sub-copies of one branch.
    """
    b, s = params.b, params.s
    first = Fraction(0)
    second = Fraction(0)
    for _ in range(n):
        second = (
            Fraction((s - 1) * (s - 2), 2 * b)
            + Fraction(s * (s - 1), b) * first
            + Fraction(s * (s - 1), 2 * b) * first**2
            + Fraction(s, b) * second
        )
        first = Fraction(s - 1, b) + Fraction(s, b) * first
    return second if exact else float(second)


def expected_shared_edges(params: LatticeParams, n: int) -> float:
    """Mean number of edges two independent uniform paths share, (s/b)^n."""
    return float(Fraction(params.s, params.b) ** n)


def overlap_growth(params: LatticeParams, n_grid: Sequence[int]) -> List[Dict[str, float]]:
    rows = []
    for n in n_grid:
        rows.append(
            {
                "n": n,
                "first_order": first_order_overlap_sum(params, n),
                "second_order": second_order_overlap_sum(params, n),
                "shared_edges": expected_shared_edges(params, n),
            }
        )
    return rows


# ---------------------------
# Enumeration (small-n oracle)
# ---------------------------

def _paths_of(g_params: LatticeParams, n: int, length: int, rank: int) -> List[EnumeratedPath]:
    if length == n:
        return [EnumeratedPath(EDGE_PATH, frozenset(), (rank,))]
    b, s = g_params.b, g_params.s
    out: List[EnumeratedPath] = []
    for i in range(b):
        own = frozenset(
            (length + 1, (rank * b + i) * (s - 1) + j) for j in range(s - 1)
        )
        subs = [_paths_of(g_params, n, length + 1, rank * g_params.bs + i * s + j) for j in range(s)]
        for combo in itertools.product(*subs):
            vertices = own.union(*(c.vertices for c in combo))
            edges = tuple(itertools.chain.from_iterable(c.edges for c in combo))
            path = PathAddress(i + 1, tuple(c.path for c in combo))
            out.append(EnumeratedPath(path, vertices, edges))
    return out


def enumerate_paths(
    params: LatticeParams, n: int, cap: int = DEFAULT_ENUMERATION_CAP
) -> List[EnumeratedPath]:
    """All paths of D_n with their interior vertex keys and edge ranks."""
    total = count_paths(params, n)
    if total > cap:
        raise CapExceeded(f"|Γ_{n}| = {total} exceeds the enumeration cap {cap}")
    logger.debug("Enumerating %d paths for b=%d s=%d n=%d", total, params.b, params.s, n)
    return _paths_of(params, n, 0, 0)


def path_vertices(params: LatticeParams, n: int, path: PathAddress) -> FrozenSet[VertexKey]:
    keys = set()

    def walk(p: PathAddress, length: int, rank: int):
        if length == n:
            return
        i = p.branch - 1
        for j in range(params.s - 1):
            keys.add((length + 1, (rank * params.b + i) * (params.s - 1) + j))
        for j, seg in enumerate(p.segments):
            walk(seg, length + 1, rank * params.bs + i * params.s + j)

    walk(path, 0, 0)
    return frozenset(keys)


def coarse_key(path_vertex_keys: FrozenSet[VertexKey], k: int) -> FrozenSet[VertexKey]:
    """Vertices of generation <= k on a path; identifies the coarse path in Γ_k."""
    return frozenset(v for v in path_vertex_keys if v[0] <= k)


def lattice_info(params: LatticeParams, n: int) -> Dict[str, object]:
    return {
        "b": params.b,
        "s": params.s,
        "n": n,
        "regime": params.regime,
        "edges": count_edges(params, n),
        "paths": count_paths(params, n),
        "vertices": count_vertices(params, n),
        "vertices_per_generation": {k: count_generation_vertices(params, k) for k in range(1, n + 1)},
        "subgraphs": {k: count_subgraphs(params, k, n) for k in range(0, n + 1)},
        "vertices_per_path": path_vertex_count(params, n),
        "first_order_overlap": first_order_overlap_sum(params, n),
        "second_order_overlap": second_order_overlap_sum(params, n),
    }

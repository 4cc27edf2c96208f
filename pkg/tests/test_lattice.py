import itertools
from collections import Counter
from fractions import Fraction

import pytest

from diamondlab.core.exceptions import AddressMismatch, CapExceeded, InvalidLattice
from diamondlab.core.lattice import (
    EdgeAddress,
    LatticeParams,
    SubgraphAddress,
    VertexAddress,
    children,
    count_edges,
    count_generation_vertices,
    count_paths,
    count_subgraphs,
    count_vertices,
    decode_word,
    encode_word,
    enumerate_paths,
    expected_shared_edges,
    first_order_overlap_sum,
    interior_vertices,
    iter_subgraphs,
    lattice_info,
    overlap_growth,
    pair_on_path_probability,
    path_vertices,
    second_order_overlap_sum,
    subgraph_vertex_keys,
)


def _vertex_frequencies(params, n):
    paths = enumerate_paths(params, n)
    counts = Counter(v for p in paths for v in p.vertices)
    return paths, {v: Fraction(c, len(paths)) for v, c in counts.items()}


@pytest.mark.parametrize("b,s,n,expected", [(2, 2, 2, 8), (2, 3, 2, 16), (3, 2, 2, 27), (2, 2, 0, 1), (3, 1, 4, 81)])
def test_count_paths(b, s, n, expected):
    assert count_paths(LatticeParams(b, s), n) == expected


@pytest.mark.parametrize("b,s,n", [(2, 2, 3), (2, 3, 2), (3, 2, 2)])
def test_enumeration_matches_counts(b, s, n):
    params = LatticeParams(b, s)
    paths = enumerate_paths(params, n)
    assert len(paths) == count_paths(params, n)
    assert len({p.path for p in paths}) == len(paths)
    for p in paths:
        assert len(p.vertices) == s**n - 1
        assert len(p.edges) == s**n
        assert path_vertices(params, n, p.path) == p.vertices


def test_counts(thin):
    assert count_edges(thin, 3) == 6**3
    assert count_generation_vertices(thin, 1) == 4
    assert count_generation_vertices(thin, 2) == 4 * 3 * 2
    assert count_vertices(thin, 2) == 28
    assert count_subgraphs(thin, 1, 3) == 36
    assert len(list(iter_subgraphs(thin, 1, 3))) == 36


def test_invalid_lattice():
    with pytest.raises(InvalidLattice):
        LatticeParams(1, 2)
    with pytest.raises(InvalidLattice):
        LatticeParams(2, 0)


def test_enumeration_cap(diamond):
    with pytest.raises(CapExceeded):
        enumerate_paths(diamond, 5, cap=1000)


def test_word_rank_is_bijective(thin):
    for rank in range(6**2):
        word = decode_word(thin, rank, 2)
        assert encode_word(thin, word) == rank
    assert encode_word(thin, ((1, 1), (1, 1))) == 0
    assert encode_word(thin, ((2, 3),)) == 5
    with pytest.raises(AddressMismatch):
        encode_word(thin, ((3, 1),))


def test_children_are_consecutive_ranks(thin):
    g = SubgraphAddress(thin, 3, ((2, 1),))
    ranks = [h.rank for h in children(g)]
    assert ranks == list(range(g.rank * 6, g.rank * 6 + 6))
    assert all(h.depth == 1 for h in children(g))
    assert children(SubgraphAddress(thin, 1, ((1, 1),))) == []


def test_vertex_keys_round_trip(thin):
    n = 3
    for generation in range(1, n + 1):
        for rank in range(0, count_generation_vertices(thin, generation), 7):
            a = VertexAddress.from_key(thin, n, (generation, rank))
            assert a.key == (generation, rank)


def test_subgraph_vertex_keys_cover_interiors(thin):
    n = 2
    root = SubgraphAddress.root(thin, n)
    keys = list(subgraph_vertex_keys(root))
    assert len(keys) == count_vertices(thin, n)
    assert len(set(keys)) == len(keys)
    own = {v.key for v in interior_vertices(root)}
    assert own <= set(keys)


def test_edge_address_needs_full_word(thin):
    with pytest.raises(AddressMismatch):
        EdgeAddress(thin, 2, ((1, 1),))
    e = EdgeAddress.from_rank(thin, 2, 17)
    assert e.rank == 17


def test_pair_probabilities_match_enumeration(thin):
    n = 2
    paths, freq = _vertex_frequencies(thin, n)
    keys = sorted(freq)
    both = Counter()
    for p in paths:
        for a1, a2 in itertools.combinations(sorted(p.vertices), 2):
            both[(a1, a2)] += 1
    for a1, a2 in itertools.combinations(keys, 2):
        va = VertexAddress.from_key(thin, n, a1)
        vb = VertexAddress.from_key(thin, n, a2)
        expected = Fraction(both[(a1, a2)], len(paths))
        assert pair_on_path_probability(thin, va, vb, exact=True) == expected


@pytest.mark.parametrize("b,s,n", [(2, 3, 2), (3, 2, 2), (2, 2, 3), (2, 4, 2)])
def test_overlap_sums_match_enumeration(b, s, n):
    params = LatticeParams(b, s)
    paths, freq = _vertex_frequencies(params, n)
    assert first_order_overlap_sum(params, n, exact=True) == sum(p**2 for p in freq.values())

    both = Counter()
    for p in paths:
        for pair in itertools.combinations(sorted(p.vertices), 2):
            both[pair] += 1
    expected = sum(Fraction(c, len(paths)) ** 2 for c in both.values())
    assert second_order_overlap_sum(params, n, exact=True) == expected


def test_first_order_overlap_regimes():
    # bounded for b > s, linear for b = s, geometric for b < s
    assert first_order_overlap_sum(LatticeParams(3, 2), 200) == pytest.approx(1.0, rel=1e-9)
    assert first_order_overlap_sum(LatticeParams(2, 2), 10) == pytest.approx(5.0)
    assert first_order_overlap_sum(LatticeParams(2, 3), 10) > 10


def test_lattice_info(diamond):
    info = lattice_info(diamond, 3)
    assert info["paths"] == 128
    assert info["edges"] == 64
    assert info["regime"] == "b=s"
    assert info["vertices_per_path"] == 7
    assert info["subgraphs"][0] == 64
    assert info["first_order_overlap"] == pytest.approx(1.5)


def test_overlap_growth_orders(diamond, thin):
    rows = overlap_growth(diamond, [3, 1000])
    assert rows[0]["second_order"] == pytest.approx(2.125)
    assert rows[1]["first_order"] == pytest.approx(500.0)
    # second-order sum grows like n^3 / 24 on the b = s lattice
    assert rows[1]["second_order"] / 1000**3 == pytest.approx(1 / 24, rel=0.01)
    assert all(r["shared_edges"] == 1.0 for r in rows)
    assert expected_shared_edges(thin, 2) == pytest.approx(2.25)

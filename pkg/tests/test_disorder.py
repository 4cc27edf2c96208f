import json
import math

import numpy as np
import pytest

from diamondlab.core.disorder import (
    BLOCK_SIZE,
    DisorderField,
    DisorderFamily,
    DisorderSpec,
    Placement,
    field_value,
)
from diamondlab.core.exceptions import AddressMismatch, DisorderSpecError, OutOfRange
from diamondlab.core.lattice import EdgeAddress, SubgraphAddress, VertexAddress

SKEWED = DisorderSpec.discrete([-2.0, 0.5], [0.2, 0.8])


def test_skewed_law_is_standardised():
    assert SKEWED.family is DisorderFamily.DISCRETE


@pytest.mark.parametrize(
    "spec,beta,expected",
    [
        (DisorderSpec.gaussian(), 0.7, 0.245),
        (DisorderSpec.rademacher(), 0.7, math.log(math.cosh(0.7))),
        (DisorderSpec.uniform(), 0.4, math.log(math.sinh(math.sqrt(3) * 0.4) / (math.sqrt(3) * 0.4))),
        (SKEWED, 0.3, math.log(0.2 * math.exp(-0.6) + 0.8 * math.exp(0.15))),
    ],
)
def test_cgf(spec, beta, expected):
    assert spec.cgf(beta) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("spec", [DisorderSpec.gaussian(), DisorderSpec.rademacher(), DisorderSpec.uniform(), SKEWED])
@pytest.mark.parametrize("beta", [1e-6, 1e-4, 0.05, 0.8])
def test_lambda_gap_matches_definition(spec, beta):
    direct = spec.cgf(2 * beta) - 2 * spec.cgf(beta)
    gap = spec.lambda_gap(beta)
    assert gap == pytest.approx(direct, rel=1e-5, abs=1e-13)


def test_lambda_gap_small_beta_keeps_precision():
    # direct subtraction loses every digit here
    assert DisorderSpec.rademacher().lambda_gap(1e-9) == pytest.approx(1e-18, rel=1e-9)
    assert SKEWED.lambda_gap(1e-9) == pytest.approx(1e-18, rel=1e-6)


def test_weights_have_mean_one():
    for beta in (0.1, 1.0, 2.5):
        w = SKEWED.weight(beta, np.array(SKEWED.values))
        assert float(np.dot(w, SKEWED.probs)) == pytest.approx(1.0, rel=1e-12)


def test_invalid_discrete_laws():
    with pytest.raises(DisorderSpecError):
        DisorderSpec.discrete([0.0, 1.0], [0.5, 0.5])
    with pytest.raises(DisorderSpecError):
        DisorderSpec.discrete([-1.0, 1.0], [0.4, 0.4])
    with pytest.raises(DisorderSpecError):
        DisorderSpec("cauchy")
    with pytest.raises(DisorderSpecError):
        DisorderSpec(DisorderFamily.GAUSSIAN, (1.0,), (1.0,))


def test_cgf_rejects_non_finite_beta():
    with pytest.raises(OutOfRange):
        DisorderSpec.gaussian().cgf(float("inf"))


def test_from_uniform_quantiles():
    u = (np.arange(200_000) + 0.5) / 200_000
    for spec in (DisorderSpec.gaussian(), DisorderSpec.uniform(), DisorderSpec.rademacher(), SKEWED):
        x = spec.from_uniform(u)
        assert x.mean() == pytest.approx(0.0, abs=1e-3)
        assert x.var() == pytest.approx(1.0, rel=1e-2)


def test_spec_json_round_trip(tmp_path):
    path = tmp_path / "law.json"
    path.write_text(json.dumps(SKEWED.to_dict()), encoding="utf-8")
    assert DisorderSpec.from_json(str(path)) == SKEWED
    assert DisorderSpec.from_json({"family": "rademacher"}) == DisorderSpec.rademacher()
    with pytest.raises(DisorderSpecError):
        DisorderSpec.from_json(str(tmp_path / "missing.json"))


def test_field_is_deterministic(diamond):
    a = DisorderField(diamond, 4, master_seed=7)
    b = DisorderField(diamond, 4, master_seed=7)
    assert np.array_equal(a.values(3), b.values(3))
    assert not np.array_equal(a.values(3), a.with_stream(1).values(3))
    assert not np.array_equal(a.values(3), DisorderField(diamond, 4, master_seed=8).values(3))


def test_field_values_do_not_depend_on_depth(diamond):
    # ω of generation k is keyed by its address, not by n
    assert np.array_equal(DisorderField(diamond, 3, 1).values(2), DisorderField(diamond, 5, 1).values(2))


def test_field_slices_across_blocks(diamond):
    f = DisorderField(diamond, 9, master_seed=3)
    full = f.values(9)
    assert full.size == 2**17
    lo, hi = BLOCK_SIZE - 5, BLOCK_SIZE + 5
    assert np.array_equal(f.values(9, lo, hi), full[lo:hi])
    assert f.values(9, 10, 10).size == 0
    with pytest.raises(AddressMismatch):
        f.values(9, 0, full.size + 1)


def test_field_value_by_address(thin):
    f = DisorderField(thin, 3, master_seed=11)
    g = SubgraphAddress(thin, 3, ((2, 3),))
    v = VertexAddress(g, 2, 1)
    assert field_value(f, v) == f.values(2)[v.rank]
    with pytest.raises(AddressMismatch):
        f.value(EdgeAddress.from_rank(thin, 3, 0))
    with pytest.raises(AddressMismatch):
        f.values(4)


def test_edge_field(thin):
    f = DisorderField(thin, 2, master_seed=5, placement=Placement.EDGES)
    assert f.count(0) == 36
    e = EdgeAddress.from_rank(thin, 2, 20)
    assert f.value(e) == f.values(0)[20]
    with pytest.raises(AddressMismatch):
        f.values(1)


def test_field_law(diamond):
    values = DisorderField(diamond, 8, master_seed=2024, spec=DisorderSpec.uniform()).values(8)
    assert abs(values.mean()) < 5 / math.sqrt(values.size)
    assert values.var() == pytest.approx(1.0, rel=0.02)
    assert np.all(np.abs(values) <= math.sqrt(3))

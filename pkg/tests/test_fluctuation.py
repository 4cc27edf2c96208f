import math

import numpy as np
import pytest

from diamondlab.core.disorder import DisorderField
from diamondlab.core.exceptions import OutOfRange, RegimeError, VariantMismatch
from diamondlab.core.fluctuation import (
    FieldVariant,
    FluctuationField,
    averaged_field,
    bgs_limit_experiment,
    choose_engine,
    clt_experiment_beq,
    combine,
    critical_experiment,
    evaluate_field,
    evaluate_levels,
    grid_steps,
    moment_flow_check,
    moment_ratio_check,
    noise_sum,
    population_fields,
    process_experiment,
    process_trace,
    sample_fields,
    sample_w_any,
)
from diamondlab.core.lattice import LatticeParams, SubgraphAddress
from diamondlab.core.polymer import w_recursive
from diamondlab.core.rgflow import BeqVariant, noise_sum_variance, variance_flow_beq

from .conftest import ZeroField


def test_full_field_is_rescaled_partition_function(diamond, gaussian):
    n, beta_hat = 4, 1.3
    disorder = DisorderField(diamond, n, master_seed=10)
    ff = FluctuationField(FieldVariant.FULL, disorder, beta_hat)
    expected = math.sqrt(n) * (w_recursive(disorder, gaussian, beta_hat / n) - 1.0)
    assert evaluate_field(ff) == pytest.approx(expected, rel=1e-12)


def test_full_recursion_step_matches_lattice(diamond, gaussian):
    # one combine step applied to the children reproduces the parent level
    n, beta_hat = 3, 0.9
    disorder = DisorderField(diamond, n, master_seed=12)
    levels = FluctuationField(FieldVariant.FULL, disorder, beta_hat).levels()
    omega = disorder.values(1).reshape(1, 2, 1)
    child = levels[1].reshape(1, 2, 2)
    root = combine(FieldVariant.FULL, diamond, gaussian, beta_hat, n, child, omega)
    assert root[0] == pytest.approx(levels[0][0], rel=1e-12)


def test_bgs_fields(wide, gaussian):
    n, beta_n = 3, 0.2
    disorder = DisorderField(wide, n, master_seed=2)
    linear = FluctuationField(FieldVariant.BGS_LINEAR, disorder, beta_n)
    assert evaluate_field(linear) == pytest.approx(noise_sum(disorder), rel=1e-12)
    full = FluctuationField(FieldVariant.BGS_FULL, disorder, beta_n)
    expected = (w_recursive(disorder, gaussian, beta_n) - 1.0) / beta_n
    assert evaluate_field(full) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("variant", [FieldVariant.QUADRATIC, FieldVariant.CUBIC])
def test_first_level_is_linear_in_disorder(diamond, variant):
    beta_hat = 1.7
    disorder = DisorderField(diamond, 1, master_seed=3)
    omega = disorder.values(1)
    value = evaluate_field(FluctuationField(variant, disorder, beta_hat))
    assert value == pytest.approx(beta_hat / 2 * (omega[0] + omega[1]), rel=1e-12)


@pytest.mark.parametrize(
    "variant,params",
    [
        (FieldVariant.QUADRATIC, LatticeParams(2, 2)),
        (FieldVariant.CUBIC, LatticeParams(3, 3)),
        (FieldVariant.BGS_LINEAR, LatticeParams(3, 2)),
    ],
)
def test_zero_disorder_is_a_fixed_point(variant, params):
    ff = FluctuationField(variant, ZeroField(params, 3, master_seed=0), 1.0)
    for level in ff.levels().values():
        assert np.all(level == 0.0)


def test_variants_check_the_regime(thin, wide, diamond):
    with pytest.raises(VariantMismatch):
        FluctuationField(FieldVariant.QUADRATIC, DisorderField(wide, 2, 0), 1.0)
    with pytest.raises(VariantMismatch):
        FluctuationField(FieldVariant.BGS_LINEAR, DisorderField(diamond, 2, 0), 1.0)
    with pytest.raises(VariantMismatch):
        FluctuationField(FieldVariant.FULL, DisorderField(thin, 2, 0), 1.0)
    with pytest.raises(ValueError):
        FluctuationField(FieldVariant.BGS_FULL, DisorderField(wide, 2, 0), 0.0)


def test_subtree_evaluation(diamond):
    disorder = DisorderField(diamond, 4, master_seed=5)
    ff = FluctuationField(FieldVariant.CUBIC, disorder, 1.0)
    levels = evaluate_levels(ff)
    g = SubgraphAddress(diamond, 4, ((1, 2), (2, 1)))
    assert evaluate_field(ff, g) == pytest.approx(levels[2][g.rank], rel=1e-12)


def test_averaged_field(diamond):
    n = 4
    ff = FluctuationField(FieldVariant.QUADRATIC, DisorderField(diamond, n, master_seed=6), 1.0)
    levels = ff.levels()
    assert averaged_field(ff, n, levels) == pytest.approx(levels[0][0])
    assert averaged_field(ff, 0, levels) == 0.0
    assert averaged_field(ff, 2) == pytest.approx(levels[2].sum() / 4)
    with pytest.raises(OutOfRange):
        averaged_field(ff, n + 1, levels)


def test_process_trace(diamond):
    n = 4
    ff = FluctuationField(FieldVariant.QUADRATIC, DisorderField(diamond, n, master_seed=8), 1.5)
    trace = process_trace(ff, [0.0, 0.5, 1.0])
    assert trace.values[0] == 0.0
    assert trace.values[-1] == pytest.approx(evaluate_field(ff))
    assert trace.increments().sum() == pytest.approx(trace.values[-1])
    assert grid_steps(10, [0.25, 0.5, 1.0]) == [2, 5, 10]
    with pytest.raises(OutOfRange):
        grid_steps(10, [1.5])


def test_choose_engine(diamond):
    assert choose_engine(diamond, 5, "auto", max_sites=4**5) == "lattice"
    assert choose_engine(diamond, 6, "auto", max_sites=4**5) == "population"
    assert choose_engine(diamond, 20, "lattice") == "lattice"
    with pytest.raises(ValueError):
        choose_engine(diamond, 3, "gpu")


def test_lattice_samples_are_coupled(diamond, gaussian):
    samples = sample_fields(
        diamond, gaussian, (FieldVariant.FULL, FieldVariant.QUADRATIC), 1.0, 4, 20, master_seed=1, engine="lattice", grid_ks=(2,)
    )
    assert samples.engine == "lattice"
    full = samples.values[FieldVariant.FULL]
    quad = samples.values[FieldVariant.QUADRATIC]
    assert full.shape == quad.shape == (20,)
    assert np.corrcoef(full, quad)[0, 1] > 0.8
    assert samples.level_moments[0][2] == 4**4 * 20
    assert samples.averaged[2].shape == (20,)


def test_population_pools(diamond, gaussian, rng):
    run = population_fields(diamond, gaussian, (FieldVariant.QUADRATIC, FieldVariant.CUBIC), 1.0, 16, 2000, rng, grid_ks=(8, 16))
    assert run.engine == "population"
    assert abs(run.primary.mean()) < 1e-12
    assert np.allclose(run.averaged[16], run.primary)
    assert set(run.level_moments) == set(range(17))


def test_moment_checks():
    moments = {0: (0.0, 0.0, 10), 1: (1.0, 3.0, 10), 2: (2.0, 12.0, 10)}
    ratios = moment_ratio_check(moments)
    assert ratios["constant"] == pytest.approx(3.0)
    assert ratios["bounded"]
    rows = moment_flow_check(moments, np.array([0.0, 1.0, 2.0]), [0, 1, 2])
    assert all(r["within_4se"] for r in rows)


@pytest.mark.slow
def test_clt_on_the_lattice(diamond, gaussian):
    report = clt_experiment_beq(diamond, gaussian, 1.0, 5, 3000, master_seed=4, engine="lattice")
    assert report["engine"] == "lattice"
    assert report["variance_within_4se"]
    assert report["coupling_gap"] < 0.25 * report["flow_target"]
    assert report["limit"] == pytest.approx(math.tan(0.5))
    assert "ks_limit" in report and report["values"].size == 3000


@pytest.mark.slow
def test_clt_on_the_population_engine(diamond, gaussian):
    report = clt_experiment_beq(diamond, gaussian, 1.0, 64, 20_000, master_seed=4, engine="population", pool_size=20_000)
    assert report["engine"] == "population"
    assert report["summary"]["variance"] == pytest.approx(report["flow_target"], rel=0.1)


def test_clt_without_disorder_strength(diamond, gaussian):
    report = clt_experiment_beq(diamond, gaussian, 0.0, 3, 10, master_seed=0, engine="lattice")
    assert report["limit"] == 0.0
    assert "ks_limit" not in report
    with pytest.raises(RegimeError):
        clt_experiment_beq(LatticeParams(2, 3), gaussian, 1.0, 3, 10, master_seed=0)


@pytest.mark.slow
def test_process_experiment(diamond, gaussian):
    report = process_experiment(
        diamond, gaussian, 1.0, 32, [0.5, 0.25, 1.0], 20_000, master_seed=3, engine="population", pool_size=20_000
    )
    assert [r["r"] for r in report["rows"]] == [0.25, 0.5, 1.0]
    flow = variance_flow_beq(diamond, gaussian, 1.0, 32, BeqVariant.QUADRATIC).values
    for row in report["rows"]:
        assert row["finite_n_target"] == pytest.approx(float(flow[row["k"]]))
        assert row["variance"] == pytest.approx(row["finite_n_target"], rel=0.1)
    assert len(report["increment_correlations"]) == 3
    assert report["moment_ratios"]["bounded"]


@pytest.mark.slow
def test_critical_experiment(diamond, gaussian):
    report = critical_experiment(
        diamond, gaussian, [16, 32], 2000, master_seed=1, analog_beta_hat=4.0, engine="population", pool_size=5000
    )
    assert [r["n"] for r in report["rows"]] == [16, 32]
    assert report["target"] == pytest.approx(2.0)
    assert report["analog"]["rows"][0]["depth"] == int(16 * math.pi / 4.0)
    with pytest.raises(OutOfRange):
        critical_experiment(diamond, gaussian, [16], 10, master_seed=1, analog_beta_hat=1.0, engine="population", pool_size=100)


@pytest.mark.slow
def test_bgs_limit_experiment(wide, gaussian):
    n = 4
    report = bgs_limit_experiment(wide, gaussian, 0.02, n, 1000, master_seed=9, engine="lattice")
    assert report["coupled"]
    assert report["noise_variance_exact"] == pytest.approx(noise_sum_variance(wide, n))
    assert report["noise_variance"] == pytest.approx(report["noise_variance_exact"], rel=0.15)
    assert report["limit_variance"] == pytest.approx(1.0)


def test_sample_w_any_switches_engine(diamond, gaussian):
    lattice = sample_w_any(diamond, gaussian, 0.1, 3, 5, master_seed=2, max_sites_per_replicate=4**3)
    assert lattice.metadata["engine"] == "lattice"
    pool = sample_w_any(diamond, gaussian, 0.1, 8, 5, master_seed=2, pool_size=200, max_sites_per_replicate=4**3)
    assert pool.metadata["engine"] == "population"
    assert pool.size == 5

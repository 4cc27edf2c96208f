import asyncio
import math
import os

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from diamondlab.api.experiments import aggregate, execute, merged_moments, run, run_experiment, stream_seed
from diamondlab.api.summary import summarize
from diamondlab.core.disorder import DisorderSpec, seed_word
from diamondlab.core.lattice import LatticeParams
from diamondlab.core.rgflow import sigma_recursion, upsilon
from diamondlab.models.schemas import BetaSchedule, ExperimentConfig, FlowRequest, ResultRecord
from diamondlab.utils.utils import load_config, load_records, record_frame, record_paths


def sample_w_config(**overrides):
    body = {
        "experiment": "sample-w",
        "lattice": {"b": 2, "s": 2, "n": 3},
        "schedule": {"kind": "fixed", "beta": 0.3},
        "replicates": 40,
        "master_seed": 11,
    }
    body.update(overrides)
    return ExperimentConfig.parse_obj(body)


def test_stream_seed_is_keyed_by_index():
    a = stream_seed(5, 3).generate_state(2)
    assert np.array_equal(a, stream_seed(5, 3).generate_state(2))
    assert not np.array_equal(a, stream_seed(5, 4).generate_state(2))


def test_aggregate_merges_to_the_whole(rng):
    values = rng.normal(size=1001)
    merged = merged_moments(values, 7)
    assert merged.count == 1001
    assert merged.mean == pytest.approx(values.mean(), rel=1e-12)
    assert merged.variance == pytest.approx(values.var(ddof=1), rel=1e-12)
    assert aggregate(values, 3)["variance"] == pytest.approx(values.var(ddof=1), rel=1e-12)
    assert aggregate(np.empty(0)) == {"count": 0}


def test_sample_w_record(settings):
    record = execute(sample_w_config(), settings)
    assert len(record.values) == 40
    row = record.rows[0]
    assert row["n"] == 3 and row["engine"] == "lattice"
    target = sigma_recursion(LatticeParams(2, 2), DisorderSpec.gaussian(), 0.3, 3).final
    assert row["flow_variance"] == pytest.approx(target)
    assert record.statistics["count"] == 40
    assert record.provenance["master_seed"] == 11
    assert record.provenance["bit_generator"] == "Philox"


def test_records_are_reproducible(settings):
    first = execute(sample_w_config(), settings)
    second = execute(sample_w_config(workers=2), settings)
    assert first.values == second.values


def test_zero_replicates(settings):
    config = ExperimentConfig.parse_obj({
        "experiment": "clt",
        "lattice": {"b": 2, "s": 2, "n": 4},
        "schedule": {"kind": "beq", "beta_hat": 1.0},
        "replicates": 0,
    })
    record = execute(config, settings)
    assert record.values == []
    assert record.statistics == {"count": 0}


def test_variance_flow_record(settings):
    config = ExperimentConfig.parse_obj({
        "experiment": "variance-flow",
        "lattice": {"b": 2, "s": 2, "n": 5000},
        "schedule": {"kind": "beq", "beta_hat": 1.0},
    })
    record = execute(config, settings)
    assert record.values is None
    assert len(record.rows) == 5001
    assert record.report["target"] == pytest.approx(upsilon(2, 1.0))
    assert record.report["final"] == pytest.approx(upsilon(2, 1.0), rel=0.02)
    assert record.report["nondecreasing"]


def test_limit_law_record(settings):
    config = ExperimentConfig.parse_obj({
        "experiment": "limit-law",
        "lattice": {"b": 2, "s": 3},
        "r": 0.3,
        "depth": 2,
        "replicates": 25,
        "master_seed": 3,
    })
    record = execute(config, settings)
    assert len(record.values) == 25
    assert record.report["depth"] == 2
    assert record.report["leaf_variance"] == "matched"


def test_config_validation():
    with pytest.raises(ValidationError):
        ExperimentConfig.parse_obj({"experiment": "clt", "lattice": {"b": 2, "s": 3, "n": 4}, "schedule": {"kind": "beq", "beta_hat": 1.0}})
    with pytest.raises(ValidationError):
        ExperimentConfig.parse_obj({"experiment": "clt", "lattice": {"b": 2, "s": 2, "n": 4}, "schedule": {"kind": "beq", "beta_hat": 4.0}})
    with pytest.raises(ValidationError):
        ExperimentConfig.parse_obj({"experiment": "sample-w", "lattice": {"b": 2, "s": 2, "n": 4}})
    with pytest.raises(ValidationError):
        ExperimentConfig.parse_obj({"experiment": "limit-law", "lattice": {"b": 2, "s": 3}})
    with pytest.raises(ValidationError):
        ExperimentConfig.parse_obj({
            "experiment": "sample-w", "lattice": {"b": 2, "s": 2, "n": 2},
            "schedule": {"kind": "fixed", "beta": 0.1},
            "disorder": {"family": "discrete", "values": [0.0, 1.0], "probs": [0.5, 0.5]},
        })


def test_run_persists_and_summarizes(settings):
    record = run(sample_w_config(), settings)
    csv_path, json_path = record_paths(record, settings.results_dir)
    assert os.path.exists(csv_path) and os.path.exists(json_path)
    frame = pd.read_csv(csv_path)
    assert list(frame.columns) == ["n", "replicate", "seed", "W", "logW"]
    assert np.array_equal(frame["W"].to_numpy(), np.array(record.values))
    assert np.allclose(frame["logW"], np.log(frame["W"]))
    assert frame["seed"].tolist() == [seed_word(11, i) for i in range(40)]

    loaded = load_records(settings.results_dir)
    assert len(loaded) == 1
    assert loaded[0].values == record.values
    rows = summarize(loaded)
    assert rows[0].quantity == "variance"
    assert rows[0].target_name == "sigma_n"


def test_run_without_persisting(settings):
    run(sample_w_config(), settings, persist=False)
    assert load_records(settings.results_dir) == []


def test_async_run_saves_the_record(settings):
    record = asyncio.run(run_experiment(sample_w_config(output={"prefix": "async"}), settings))
    _, json_path = record_paths(record, settings.results_dir)
    assert json_path.endswith("async.json")
    assert os.path.exists(json_path)


def test_load_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(sample_w_config().json(), encoding="utf-8")
    assert load_config(str(path)) == sample_w_config()
    path.write_text('{"experiment": "sample-w"}', encoding="utf-8")
    with pytest.raises(ValidationError):
        load_config(str(path))


CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "data", "configs")


@pytest.mark.parametrize("name", sorted(os.listdir(CONFIG_DIR)))
def test_example_configs_are_valid(name):
    config = load_config(os.path.join(CONFIG_DIR, name))
    assert config.lattice.depths() or config.r is not None


def test_example_disorder_law():
    path = os.path.join(CONFIG_DIR, os.pardir, "disorder", "skewed.json")
    spec = DisorderSpec.from_json(path)
    assert spec.probs == pytest.approx((0.2, 0.8))


def test_summarize_targets():
    assert summarize([]) == []
    config = ExperimentConfig.parse_obj({
        "experiment": "clt",
        "lattice": {"b": 2, "s": 2, "n": 512},
        "schedule": {"kind": "beq", "beta_hat": 2.0},
    })
    record = ResultRecord(
        config=config,
        statistics={"variance": 3.0, "variance_se": 0.05},
        report={"beta_hat": 2.0, "flow_target": 3.05},
        wall_time=0.0,
        version="test",
    )
    rows = summarize([record])
    limit = next(r for r in rows if r.target_name == "upsilon_b(beta_hat)")
    assert limit.target == pytest.approx(2 * math.tan(1.0))
    assert not rows[0].flagged
    far = record.copy(update={"statistics": {"variance": 4.0, "variance_se": 0.05}})
    assert summarize([far])[0].flagged


@pytest.mark.parametrize("n", [1, 7, 100, 4096])
def test_beta_schedules(n):
    thin, diamond = LatticeParams(2, 3), LatticeParams(2, 2)
    assert BetaSchedule(kind="fixed", beta=0.3).value(diamond, n) == 0.3
    assert BetaSchedule(kind="bls", beta_hat=0.8).value(thin, n) == pytest.approx(0.8 * (2 / 3) ** (n / 2), rel=1e-15)
    assert BetaSchedule(kind="beq", beta_hat=2.0).value(diamond, n) == pytest.approx(2.0 / n, rel=1e-15)
    assert BetaSchedule(kind="edge", beta_hat=2.0).value(diamond, n) == pytest.approx(2.0 / math.sqrt(n), rel=1e-15)
    assert BetaSchedule(kind="critical").value(diamond, n) == pytest.approx(math.pi / n, rel=1e-15)
    table = BetaSchedule(kind="table", table={n: 0.125})
    assert table.value(diamond, n) == 0.125
    with pytest.raises(ValueError):
        table.value(diamond, n + 1)


def test_depth_sweep_keeps_every_depth(settings):
    record = execute(sample_w_config(lattice={"b": 2, "s": 2, "n_grid": [1, 2]}, replicates=5), settings)
    assert record.report["values_n"] == 2
    by_depth = record.report["values_by_depth"]
    assert sorted(by_depth) == ["1", "2"]
    assert record.values == by_depth["2"]
    frame = record_frame(record)
    assert len(frame) == 10
    assert frame.loc[frame["n"] == 1, "W"].tolist() == by_depth["1"]


def test_single_depth_has_no_sweep_values(settings):
    record = execute(sample_w_config(replicates=5), settings)
    assert record.report["values_n"] == 3
    assert "values_by_depth" not in record.report


def test_limit_law_frame_names_the_streams(settings):
    config = ExperimentConfig.parse_obj({
        "experiment": "limit-law", "lattice": {"b": 2, "s": 3}, "r": 0.2, "depth": 1, "replicates": 4, "master_seed": 6,
    })
    frame = record_frame(execute(config, settings))
    assert list(frame.columns) == ["replicate", "seed", "value"]
    assert frame["seed"].tolist() == [seed_word(6, i) for i in range(4)]


def test_single_segment_lattices_are_valid():
    config = ExperimentConfig.parse_obj({
        "experiment": "sample-w",
        "lattice": {"b": 3, "s": 1, "n": 2},
        "schedule": {"kind": "fixed", "beta": 0.5},
        "edge": True,
    })
    assert config.lattice.params() == LatticeParams(3, 1)
    assert config.lattice.regime == "b>s"
    assert FlowRequest(b=3, s=1, kind="sigma").s == 1
    with pytest.raises(ValidationError):
        ExperimentConfig.parse_obj({"experiment": "sample-w", "lattice": {"b": 3, "s": 0, "n": 2}, "schedule": {"kind": "fixed", "beta": 0.5}})


def test_fixed_point_config_defaults_to_permutations():
    config = ExperimentConfig.parse_obj({"experiment": "fixed-point", "lattice": {"b": 2, "s": 3}, "r": 0.5})
    assert config.n_permutations == 200
    assert config.leaf_variance == "matched"

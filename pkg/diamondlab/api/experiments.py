import asyncio
import logging
import time
from functools import reduce
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .. import __version__
from ..config import Settings
from ..core.disorder import DisorderSpec, stream_seed
from ..core.fluctuation import (
    bgs_limit_experiment,
    choose_engine,
    clt_experiment_beq,
    critical_experiment,
    process_experiment,
)
from ..core.lattice import LatticeParams
from ..core.limitlaw import (
    LeafMode,
    LeafVariance,
    LimitLawSampler,
    fixed_point_test,
    fold_variance_check,
    measure_consistency_test,
    small_r_normality,
    strong_disorder_decay,
    universality_test,
)
from ..core.polymer import DEFAULT_MAX_SITES, population_w, sample_w
from ..core.rgflow import (
    BeqVariant,
    bls_flow,
    bls_target,
    critical_table,
    critical_target,
    edge_critical_point,
    edge_second_moment_flow,
    edge_variance_flow,
    edge_variance_limit,
    explosion_regression,
    kappa,
    limiting_variance,
    sigma_recursion,
    upsilon,
    variance_flow_beq,
    variance_flow_bgs,
)
from ..core.stats import RunningMoments, SampleSet, within_se
from ..models.schemas import ExperimentConfig, ExperimentKind, ResultRecord, ScheduleKind
from ..utils.utils import jsonable, save_record, write_record

logger = logging.getLogger(__name__)

Outcome = Tuple[Optional[np.ndarray], Dict[str, Any], List[Dict[str, Any]]]

def merged_moments(values: np.ndarray, parts: int) -> RunningMoments:
    """Moments of ``values`` merged from ``parts`` independent pieces."""
    pieces = np.array_split(np.asarray(values, dtype=float), max(1, parts))
    return reduce(RunningMoments.merge, (RunningMoments.of(p) for p in pieces), RunningMoments())

def aggregate(values: np.ndarray, parts: int = 1) -> Dict[str, Any]:
    if values.size == 0:
        return {"count": 0}
    moments = merged_moments(values, parts)
    summary = SampleSet("values", values).summary()
    summary.update(count=moments.count, mean=moments.mean, variance=moments.variance)
    return summary

# ---------------------------
# Handlers
# ---------------------------

class _Context:
    def __init__(self, config: ExperimentConfig, settings: Settings):
        self.config = config
        self.settings = settings
        self.params: LatticeParams = config.lattice.params()
        self.spec: DisorderSpec = config.disorder.to_spec()
        self.workers = config.workers or settings.workers
        self.sampling = {
            "pool_size": settings.pool_size,
            "max_sites_per_replicate": settings.max_sites_per_replicate,
            "workers": self.workers,
        }

    @property
    def n(self) -> int:
        return self.config.lattice.depths()[-1]

    def beta(self, n: int) -> float:
        return self.config.schedule.value(self.params, n)

    def beta_hat(self) -> float:
        return self.config.schedule.rescaled(self.params)

def _sample_w(ctx: _Context) -> Outcome:
    config, params, spec = ctx.config, ctx.params, ctx.spec
    rows = []
    by_depth: Dict[int, np.ndarray] = {}
    for n in config.lattice.depths():
        beta = ctx.beta(n)
        engine = choose_engine(params, n, config.engine, ctx.settings.max_sites_per_replicate)
        if engine == "lattice":
            values = sample_w(
                params, spec, beta, n, config.replicates, config.master_seed, edge=config.edge,
                workers=ctx.workers, max_sites=max(DEFAULT_MAX_SITES, params.bs**n),
            ).values
        else:
            rng = np.random.default_rng(stream_seed(config.master_seed, n))
            pool = population_w(params, spec, beta, n, max(ctx.settings.pool_size, config.replicates), rng, edge=config.edge)
            values = pool[rng.permutation(pool.size)[: config.replicates]]
        by_depth[n] = values
        if config.edge:
            target = edge_second_moment_flow(params, spec, beta, n, ctx.settings.blow_up_threshold).final - 1.0
        else:
            target = sigma_recursion(params, spec, beta, n, ctx.settings.extended).final
        s = SampleSet("W", values)
        rows.append({
            "n": n,
            "beta": beta,
            "engine": engine,
            "mean": s.mean(),
            "mean_se": s.mean_se(),
            "variance": s.variance(),
            "variance_se": s.variance_se(),
            "flow_variance": target,
            "within_4se": within_se(s.variance(), target, s.variance_se()) if s.size > 3 else None,
        })
    last = rows[-1]["n"]
    # record.values holds the last depth; a sweep keeps every depth here
    report: Dict[str, Any] = {"rows_by_depth": len(rows), "values_n": last}
    if len(by_depth) > 1:
        report["values_by_depth"] = by_depth
    return by_depth[last], report, rows

def _variance_flow(ctx: _Context) -> Outcome:
    config, params, spec = ctx.config, ctx.params, ctx.spec
    schedule, n = config.schedule, ctx.n
    extended = ctx.settings.extended
    threshold = ctx.settings.blow_up_threshold
    report: Dict[str, Any] = {"schedule": schedule.kind.value, "n": n}
    if schedule.kind is ScheduleKind.EDGE:
        trace = edge_variance_flow(params, spec, schedule.beta_hat, n, threshold)
        if params.regime == "b=s" and schedule.beta_hat < edge_critical_point(params.b):
            report["target"] = edge_variance_limit(params.b, schedule.beta_hat)
    elif schedule.kind is ScheduleKind.BLS:
        trace = bls_flow(params, spec, schedule.beta_hat, n, extended)
        report["target"] = bls_target(params, schedule.beta_hat)
    elif schedule.kind in (ScheduleKind.BEQ, ScheduleKind.CRITICAL):
        beta_hat = ctx.beta_hat()
        trace = variance_flow_beq(params, spec, beta_hat, n, BeqVariant(config.flow_variant), extended=extended, threshold=threshold)
        report["kappa"] = kappa(params.b)
        if beta_hat < kappa(params.b):
            report["target"] = upsilon(params.b, beta_hat)
    elif params.regime == "b>s":
        flows = variance_flow_bgs(params, spec, ctx.beta(n), n, extended)
        trace = flows.exact
        report.update(affine_final=flows.affine.final, gap=flows.gap, target=flows.fixed_point)
    else:
        trace = sigma_recursion(params, spec, ctx.beta(n), n, extended)
    report.update(final=trace.final, blow_up_index=trace.blow_up_index, nondecreasing=trace.is_nondecreasing())
    return None, report, trace.rows()

def _critical_table(ctx: _Context) -> Outcome:
    rows = critical_table(ctx.params, ctx.spec, ctx.config.lattice.depths(), BeqVariant(ctx.config.flow_variant))
    return None, {"target": critical_target(ctx.params.b)}, rows

def _explosion(ctx: _Context) -> Outcome:
    out = explosion_regression(
        ctx.params, ctx.spec, ctx.beta_hat(), ctx.config.lattice.depths(), threshold=ctx.settings.blow_up_threshold
    )
    rows = out.pop("rows")
    for row in rows:
        row["ratio"] = row["blow_up_index"] / row["n"]
    out["ratio_target"] = kappa(ctx.params.b) / ctx.beta_hat()
    return None, out, rows

def _limit_sampler(ctx: _Context) -> LimitLawSampler:
    config = ctx.config
    return LimitLawSampler(
        ctx.params,
        config.r,
        config.depth,
        LeafMode(config.leaf_mode) if config.leaf_mode else None,
        LeafVariance(config.leaf_variance),
        ctx.settings.max_leaves_per_draw,
    )

def _limit_law(ctx: _Context) -> Outcome:
    config = ctx.config
    sampler = _limit_sampler(ctx)
    values = np.array([
        sampler.sample(np.random.default_rng(stream_seed(config.master_seed, i)), 1)[0] for i in range(config.replicates)
    ])
    target = limiting_variance(ctx.params, config.r) if config.r > 0 else 0.0
    s = SampleSet("L", values)
    report = {
        "depth": sampler.depth,
        "mode": sampler.mode.value,
        "leaf_variance": sampler.leaf_variance.value,
        "truncation_increment": sampler.truncation_increment(),
        "target_variance": target,
        "within_4se": within_se(s.variance(), target, s.variance_se()) if s.size > 3 else None,
    }
    return values, report, []

def _fixed_point(ctx: _Context) -> Outcome:
    c = ctx.config
    report = fixed_point_test(
        ctx.params, c.r, c.depth, c.replicates, c.master_seed, LeafVariance(c.leaf_variance),
        c.n_permutations, ctx.settings.ks_alpha, ctx.settings.max_leaves_per_draw,
    )
    return None, report.to_dict(), []

def _small_r(ctx: _Context) -> Outcome:
    c = ctx.config
    return None, small_r_normality(ctx.params, c.r, c.depth, c.replicates, c.master_seed, ctx.settings.ks_alpha), []

def _strong_disorder(ctx: _Context) -> Outcome:
    c = ctx.config
    rows = strong_disorder_decay(ctx.params, c.r_grid, c.depth, c.replicates, c.master_seed, ctx.settings.max_leaves_per_draw)
    return None, {"all_within_bound": all(r["within_bound"] for r in rows)}, rows

def _universality(ctx: _Context) -> Outcome:
    c = ctx.config
    mode = LeafMode(c.leaf_mode) if c.leaf_mode else LeafMode.RADEMACHER
    report = universality_test(
        ctx.params, c.r, c.depth, c.replicates, c.master_seed, mode, ctx.settings.ks_alpha, ctx.settings.max_leaves_per_draw
    )
    return None, {"leaf_mode": mode.value, **report.to_dict()}, []

def _fold_variance(ctx: _Context) -> Outcome:
    c = ctx.config
    return None, fold_variance_check(ctx.params, c.r, c.k, c.replicates, c.master_seed), []

def _measure_consistency(ctx: _Context) -> Outcome:
    c = ctx.config
    report = measure_consistency_test(
        ctx.params, c.r, c.k, c.lattice.n, c.replicates, c.master_seed, c.depth or 3,
        min(ctx.settings.enumeration_cap, 10**4), ctx.settings.ks_alpha, ctx.settings.max_leaves_per_draw,
    )
    return None, report, report.pop("marginals")

def _clt(ctx: _Context) -> Outcome:
    c = ctx.config
    report = clt_experiment_beq(
        ctx.params, ctx.spec, ctx.beta_hat(), ctx.n, c.replicates, c.master_seed, c.engine, ctx.settings.ks_alpha, **ctx.sampling
    )
    return report.pop("values"), report, []

def _critical(ctx: _Context) -> Outcome:
    c = ctx.config
    report = critical_experiment(
        ctx.params, ctx.spec, c.lattice.depths(), c.replicates, c.master_seed, c.analog_beta_hat, c.engine, **ctx.sampling
    )
    return None, report, report.pop("rows")

def _process(ctx: _Context) -> Outcome:
    c = ctx.config
    report = process_experiment(ctx.params, ctx.spec, ctx.beta_hat(), ctx.n, c.r_grid, c.replicates, c.master_seed, c.engine, **ctx.sampling)
    return None, report, report.pop("rows")

def _bgs_limit(ctx: _Context) -> Outcome:
    c = ctx.config
    n = ctx.n
    report = bgs_limit_experiment(ctx.params, ctx.spec, ctx.beta(n), n, c.replicates, c.master_seed, c.engine, **ctx.sampling)
    return report.pop("values"), report, []

HANDLERS: Dict[ExperimentKind, Callable[[_Context], Outcome]] = {
    ExperimentKind.SAMPLE_W: _sample_w,
    ExperimentKind.VARIANCE_FLOW: _variance_flow,
    ExperimentKind.CRITICAL_TABLE: _critical_table,
    ExperimentKind.EXPLOSION: _explosion,
    ExperimentKind.LIMIT_LAW: _limit_law,
    ExperimentKind.FIXED_POINT: _fixed_point,
    ExperimentKind.SMALL_R: _small_r,
    ExperimentKind.STRONG_DISORDER: _strong_disorder,
    ExperimentKind.UNIVERSALITY: _universality,
    ExperimentKind.FOLD_VARIANCE: _fold_variance,
    ExperimentKind.MEASURE_CONSISTENCY: _measure_consistency,
    ExperimentKind.CLT: _clt,
    ExperimentKind.CRITICAL: _critical,
    ExperimentKind.PROCESS: _process,
    ExperimentKind.BGS_LIMIT: _bgs_limit,
}

_NEEDS_SAMPLES = {
    ExperimentKind.SAMPLE_W, ExperimentKind.LIMIT_LAW, ExperimentKind.CLT, ExperimentKind.BGS_LIMIT,
    ExperimentKind.CRITICAL, ExperimentKind.PROCESS, ExperimentKind.FIXED_POINT, ExperimentKind.SMALL_R,
    ExperimentKind.STRONG_DISORDER, ExperimentKind.UNIVERSALITY, ExperimentKind.FOLD_VARIANCE,
    ExperimentKind.MEASURE_CONSISTENCY,
}

def execute(config: ExperimentConfig, settings: Settings) -> ResultRecord:
    """Runs one experiment synchronously and returns its record (nothing is written)."""
    ctx = _Context(config, settings)
    logger.info(
        "Running %s on (b=%d, s=%d) with %d replicates, seed %d",
        config.experiment.value, ctx.params.b, ctx.params.s, config.replicates, config.master_seed,
    )
    start = time.perf_counter()
    if config.replicates == 0 and config.experiment in _NEEDS_SAMPLES:
        values, report, rows = np.empty(0), {}, []
    else:
        values, report, rows = HANDLERS[config.experiment](ctx)
    wall_time = time.perf_counter() - start
    statistics = aggregate(values, ctx.workers) if values is not None else {}
    provenance = {
        "master_seed": config.master_seed,
        "bit_generator": "Philox",
        "streams": [0, config.replicates] if values is not None else None,
        "first_replicate": 0,
        "workers": ctx.workers,
        "numpy": np.__version__,
        "engine": report.get("engine", config.engine),
    }
    logger.info("Finished %s in %.2fs", config.experiment.value, wall_time)
    return ResultRecord(
        config=config,
        values=None if values is None else [float(v) for v in values],
        statistics=jsonable(statistics),
        report=jsonable(report),
        rows=jsonable(rows),
        wall_time=wall_time,
        version=__version__,
        provenance=jsonable(provenance),
    )

def run(config: ExperimentConfig, settings: Settings, persist: bool = True) -> ResultRecord:
    record = execute(config, settings)
    if persist:
        write_record(record, settings.results_dir)
    return record

async def run_experiment(config: ExperimentConfig, settings: Settings) -> ResultRecord:
    """
    Runs the experiment in a worker thread so the event loop stays responsive,
    then persists the record asynchronously.
    """
    loop = asyncio.get_event_loop()
    record = await loop.run_in_executor(None, execute, config, settings)
    await save_record(record, settings.results_dir)
    return record

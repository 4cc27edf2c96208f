import logging
import math
from typing import Any, Callable, Dict, List, Optional

from ..core.exceptions import DiamondLabError
from ..core.rgflow import affine_fixed_point, critical_target, kappa, limiting_variance, tau, upsilon
from ..models.schemas import ExperimentKind, ResultRecord, SummaryRow

logger = logging.getLogger(__name__)

# relative tolerance of an MC estimate against a closed-form n → ∞ target
LIMIT_TOLERANCE = 0.05

def _finite(x: Any) -> Optional[float]:
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None

def _row(
    record: ResultRecord, quantity: str, estimate, target, target_name: str, se=None, tolerance=None, n=None, check: bool = True
) -> SummaryRow:
    """One comparison; flagged when |estimate - target| exceeds the tolerance (4·se when an se is known).

    ``check=False`` rows only report the distance to a trend target.
    """
    config = record.config
    estimate, target, se = _finite(estimate), _finite(target), _finite(se)
    deviation = abs(estimate - target) if estimate is not None and target is not None else None
    if not check:
        tolerance = None
    elif tolerance is None:
        tolerance = 4 * se if se is not None else (LIMIT_TOLERANCE * abs(target) if target else None)
    flagged = deviation is not None and tolerance is not None and deviation > tolerance
    if flagged:
        logger.warning("%s %s deviates from %s by %.4g (tolerance %.4g)", config.experiment.value, quantity, target_name, deviation, tolerance)
    return SummaryRow(
        experiment=config.experiment.value,
        b=config.lattice.b,
        s=config.lattice.s,
        n=n if n is not None else config.lattice.n,
        quantity=quantity,
        estimate=estimate,
        se=se,
        target=target,
        target_name=target_name,
        deviation=deviation,
        tolerance=tolerance,
        flagged=flagged,
    )

def _clt(record: ResultRecord) -> List[SummaryRow]:
    rep, stats, b = record.report, record.statistics, record.config.lattice.b
    beta_hat = rep["beta_hat"]
    var, se = stats.get("variance"), stats.get("variance_se")
    return [
        _row(record, "variance", var, rep["flow_target"], "M_n^n(0)", se=se),
        _row(record, "variance", var, upsilon(b, beta_hat), "upsilon_b(beta_hat)", tolerance=LIMIT_TOLERANCE * upsilon(b, beta_hat) + 4 * (se or 0)),
        _row(record, "ks_limit", rep.get("ks_limit", {}).get("statistic"), 0.0, "0", tolerance=rep.get("ks_limit", {}).get("threshold")),
    ]

def _critical(record: ResultRecord) -> List[SummaryRow]:
    b = record.config.lattice.b
    rows = [_row(record, "kappa", record.report.get("kappa"), kappa(b), "kappa_b", tolerance=1e-12)]
    for r in record.rows:
        rows.append(_row(record, "variance", r["variance"], r["reference"], "log(n)/n*M_n^n(0)", se=r["variance_se"], n=r["n"]))
        rows.append(_row(record, "variance", r["variance"], critical_target(b), "6/(b+1)", check=False, n=r["n"]))
    return rows

def _critical_table(record: ResultRecord) -> List[SummaryRow]:
    b = record.config.lattice.b
    return [
        _row(record, "critical_scaling", r["value"], critical_target(b), "6/(b+1)", check=False, n=r["n"])
        for r in record.rows
    ]

def _process(record: ResultRecord) -> List[SummaryRow]:
    b, beta_hat = record.config.lattice.b, record.report["beta_hat"]
    rows = []
    for r in record.rows:
        rows.append(_row(record, f"variance(r={r['r']})", r["variance"], r["finite_n_target"], "Mhat_n^k(0)", se=r["variance_se"]))
        rows.append(_row(record, f"variance(r={r['r']})", r["variance"], tau(b, beta_hat, r["r"]), "tau_r", tolerance=LIMIT_TOLERANCE * max(r["finite_n_target"], 1e-12) + 4 * (r["variance_se"] or 0)))
    return rows

def _bgs(record: ResultRecord) -> List[SummaryRow]:
    rep = record.report
    params = record.config.lattice.params()
    return [
        _row(record, "noise_variance", rep["noise_variance"], rep["noise_variance_exact"], "sum b^-2m |V_m|"),
        _row(record, "noise_variance", rep["noise_variance"], affine_fixed_point(params), "(s-1)/(b-s)"),
        _row(record, "mean_square_difference", rep["mean_square_difference"], 0.0, "0", tolerance=LIMIT_TOLERANCE * rep["noise_variance"]),
    ]

def _limit_law(record: ResultRecord) -> List[SummaryRow]:
    config = record.config
    target = limiting_variance(config.lattice.params(), config.r) if config.r else 0.0
    return [_row(record, "variance", record.statistics.get("variance"), target, "v(r)", se=record.statistics.get("variance_se"))]

def _fixed_point(record: ResultRecord) -> List[SummaryRow]:
    rep = record.report
    return [
        _row(record, "ks", rep["ks"], 0.0, "0", tolerance=rep["threshold"]),
        _row(record, "folded_variance", rep["folded_variance"], rep["target_variance"], "v((s/b)r)"),
    ]

def _variance_flow(record: ResultRecord) -> List[SummaryRow]:
    rep = record.report
    if "target" not in rep:
        return [_row(record, "final", rep.get("final"), None, "none")]
    return [_row(record, "final", rep.get("final"), rep["target"], "closed-form limit")]

def _explosion(record: ResultRecord) -> List[SummaryRow]:
    target = record.report["ratio_target"]
    return [_row(record, "blow_up_index/n", r["ratio"], target, "kappa_b/beta_hat", tolerance=0.02 * target, n=r["n"]) for r in record.rows]

def _sample_w(record: ResultRecord) -> List[SummaryRow]:
    return [_row(record, "variance", r["variance"], r["flow_variance"], "sigma_n", se=r["variance_se"], n=r["n"]) for r in record.rows]

def _ks_only(record: ResultRecord) -> List[SummaryRow]:
    rep = record.report
    ks = rep.get("ks", rep)
    if isinstance(ks, dict) and "statistic" in ks:
        return [_row(record, "ks", ks["statistic"], 0.0, "0", tolerance=ks["threshold"])]
    return []

_SUMMARIZERS: Dict[ExperimentKind, Callable[[ResultRecord], List[SummaryRow]]] = {
    ExperimentKind.CLT: _clt,
    ExperimentKind.CRITICAL: _critical,
    ExperimentKind.CRITICAL_TABLE: _critical_table,
    ExperimentKind.PROCESS: _process,
    ExperimentKind.BGS_LIMIT: _bgs,
    ExperimentKind.LIMIT_LAW: _limit_law,
    ExperimentKind.FIXED_POINT: _fixed_point,
    ExperimentKind.VARIANCE_FLOW: _variance_flow,
    ExperimentKind.EXPLOSION: _explosion,
    ExperimentKind.SAMPLE_W: _sample_w,
    ExperimentKind.SMALL_R: _ks_only,
    ExperimentKind.UNIVERSALITY: _ks_only,
}

def summarize(records: List[ResultRecord]) -> List[SummaryRow]:
    """Comparison table of every record against its closed-form targets."""
    table: List[SummaryRow] = []
    for record in records:
        summarizer = _SUMMARIZERS.get(record.config.experiment)
        if summarizer is None:
            logger.info("No closed-form targets for %s records", record.config.experiment.value)
            continue
        try:
            table.extend(summarizer(record))
        except (KeyError, DiamondLabError) as exc:
            logger.warning("Cannot summarize %s record: %s", record.config.experiment.value, exc)
    return table

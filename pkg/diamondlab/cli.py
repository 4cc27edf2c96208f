"""Command line for diamondlab.

  diamondlab lattice info --b 2 --s 3 --n 4
  diamondlab mc sample-w --b 2 --s 2 --n 6 --beta-schedule beq --beta-hat 1 --out results.csv
  diamondlab moments iterate --b 2 --s 2 --map Mn_beq --beta-hat 1 --n 1000 --emit trace.csv
  diamondlab moments critical --b 2 --n-grid 1000,10000
  diamondlab limits sample-L --b 2 --s 3 --r 0.5 --samples 10000
  diamondlab limits fixed-point --b 2 --s 3 --r 0.5
  diamondlab fluct clt --b 2 --s 2 --beta-hat 1 --n 512 --replicates 10000
  diamondlab fluct process --b 2 --s 2 --beta-hat 2 --n 256 --grid 0.25,0.5,0.75,1.0
  diamondlab experiment run config.json
  diamondlab experiment summarize 'data/results/*.json'
"""
import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .api.experiments import run
from .api.summary import summarize
from .config import Settings, get_settings
from .core.disorder import DisorderSpec
from .core.exceptions import DiamondLabError
from .core.lattice import LatticeParams, lattice_info
from .core.limitlaw import DEFAULT_PERMUTATIONS
from .core.rgflow import BeqVariant, FlowKind, FlowMap, critical_table, iterate
from .models.schemas import ExperimentConfig
from .utils.utils import dump_json, frame_to_csv, jsonable, load_config, load_disorder, load_records, record_frame, write_csv

logger = logging.getLogger(__name__)

def _ints(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x.strip()]

def _floats(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]

def _emit(data: Any, out: Optional[str]):
    if out:
        dump_json(data, out)
        logger.info("Wrote %s", out)
    else:
        print(json.dumps(jsonable(data), indent=2))

def _disorder(args) -> Dict[str, Any]:
    if getattr(args, "disorder", None):
        return load_disorder(args.disorder).to_dict()
    return {"family": args.family}

def _config(args, experiment: str, **fields) -> ExperimentConfig:
    body = {
        "experiment": experiment,
        "disorder": _disorder(args),
        "master_seed": args.seed,
        "workers": args.workers,
        **fields,
    }
    if getattr(args, "prefix", None):
        body["output"] = {"prefix": args.prefix}
    return ExperimentConfig.parse_obj(body)

def _run(config: ExperimentConfig, settings: Settings, args) -> int:
    record = run(config, settings, persist=not args.no_save)
    if args.out and args.out.endswith(".csv"):
        write_csv(record_frame(record), args.out)
        logger.info("Wrote %s", args.out)
        return 0
    _emit({"statistics": record.statistics, "report": record.report, "rows": record.rows, "wall_time": record.wall_time}, args.out)
    return 0

# ---------------------------
# Subcommands
# ---------------------------

def cmd_lattice_info(args, settings: Settings) -> int:
    _emit(lattice_info(LatticeParams(args.b, args.s), args.n), args.out)
    return 0

def _schedule(args) -> Dict[str, Any]:
    kind = args.schedule or ("fixed" if args.beta is not None else "beq")
    schedule: Dict[str, Any] = {"kind": kind}
    if args.beta is not None:
        schedule["beta"] = args.beta
    if args.beta_hat is not None:
        schedule["beta_hat"] = args.beta_hat
    return schedule

def cmd_sample_w(args, settings: Settings) -> int:
    config = _config(
        args, "sample-w",
        lattice={"b": args.b, "s": args.s, "n": args.n},
        schedule=_schedule(args),
        replicates=args.replicates,
        edge=args.edge,
        engine=args.engine,
    )
    return _run(config, settings, args)

def cmd_moments_iterate(args, settings: Settings) -> int:
    params = LatticeParams(args.b, args.s)
    spec = DisorderSpec.from_json(_disorder(args))
    extended = args.extended or settings.extended
    dtype = np.longdouble if extended else float
    flow = FlowMap(FlowKind(args.kind), params, spec, args.beta, args.n, dtype)
    steps = args.n if args.steps is None else args.steps
    trace = iterate(flow, args.x0, steps, threshold=settings.blow_up_threshold, dtype=dtype)
    if args.emit:
        write_csv(pd.DataFrame(trace.rows()), args.emit)
        logger.info("Wrote %s", args.emit)
        return 0
    if args.csv:
        sys.stdout.write(frame_to_csv(pd.DataFrame(trace.rows())))
        return 0
    _emit({"kind": flow.kind.value, "final": trace.final, "blow_up_index": trace.blow_up_index, "rows": trace.rows()}, args.out)
    return 0

def cmd_moments_critical(args, settings: Settings) -> int:
    params = LatticeParams(args.b, args.b)
    spec = DisorderSpec.from_json(_disorder(args))
    _emit(critical_table(params, spec, _ints(args.n_grid), BeqVariant(args.variant)), args.out)
    return 0

def cmd_limits_sample(args, settings: Settings) -> int:
    config = _config(
        args, "limit-law",
        lattice={"b": args.b, "s": args.s},
        r=args.r,
        depth=args.depth,
        leaf_mode=args.leaf_mode,
        leaf_variance=args.leaf_variance,
        replicates=args.samples,
    )
    return _run(config, settings, args)

def cmd_limits_fixed_point(args, settings: Settings) -> int:
    config = _config(
        args, "fixed-point",
        lattice={"b": args.b, "s": args.s},
        r=args.r,
        depth=args.depth,
        leaf_variance=args.leaf_variance,
        replicates=args.samples,
        n_permutations=args.permutations,
    )
    return _run(config, settings, args)

def cmd_fluct_clt(args, settings: Settings) -> int:
    config = _config(
        args, "clt",
        lattice={"b": args.b, "s": args.s, "n": args.n},
        schedule={"kind": "beq", "beta_hat": args.beta_hat},
        replicates=args.replicates,
        engine=args.engine,
    )
    return _run(config, settings, args)

def cmd_fluct_process(args, settings: Settings) -> int:
    config = _config(
        args, "process",
        lattice={"b": args.b, "s": args.s, "n": args.n},
        schedule={"kind": "beq", "beta_hat": args.beta_hat},
        r_grid=_floats(args.grid),
        replicates=args.replicates,
        engine=args.engine,
    )
    return _run(config, settings, args)

def cmd_fluct_critical(args, settings: Settings) -> int:
    config = _config(
        args, "critical",
        lattice={"b": args.b, "s": args.b, "n_grid": _ints(args.n_grid)},
        replicates=args.replicates,
        analog_beta_hat=args.analog_beta_hat,
        engine=args.engine,
    )
    return _run(config, settings, args)

def cmd_fluct_bgs(args, settings: Settings) -> int:
    config = _config(
        args, "bgs-limit",
        lattice={"b": args.b, "s": args.s, "n": args.n},
        schedule={"kind": "fixed", "beta": args.beta_n if args.beta_n is not None else 1.0 / args.n},
        replicates=args.replicates,
        engine=args.engine,
    )
    return _run(config, settings, args)

def cmd_experiment_run(args, settings: Settings) -> int:
    config = load_config(args.config)
    if args.workers:
        config = config.copy(update={"workers": args.workers})
    return _run(config, settings, args)

def cmd_experiment_summarize(args, settings: Settings) -> int:
    rows = [row.dict() for row in summarize(load_records(args.pattern))]
    if args.csv:
        sys.stdout.write(frame_to_csv(pd.DataFrame(rows)))
        return 0
    _emit(rows, args.out)
    return 0

# ---------------------------
# Parser
# ---------------------------

def _common(p: argparse.ArgumentParser, lattice: bool = True, seed: bool = True):
    if lattice:
        p.add_argument("--b", type=int, required=True, help="branches")
        p.add_argument("--s", type=int, required=True, help="segments per branch")
    p.add_argument("--family", default="standard-gaussian",
                   choices=["standard-gaussian", "rademacher", "uniform-scaled"], help="disorder law")
    p.add_argument("--disorder", default=None, help="JSON file with a discrete disorder law")
    p.add_argument("--out", default=None, help="write the result here instead of stdout; a .csv path gets the per-replicate table")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--workers", type=int, default=None, help="worker processes (default: DIAMONDLAB_WORKERS)")
        p.add_argument("--prefix", default=None, help="file prefix of the saved record")
        p.add_argument("--no-save", action="store_true", help="do not write the record under results_dir")

def _engine(p: argparse.ArgumentParser):
    p.add_argument("--engine", default="auto", choices=["auto", "lattice", "population"])

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diamondlab", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--log-level", default=None, help="overrides LOG_LEVEL")
    groups = parser.add_subparsers(dest="group", required=True)

    lattice = groups.add_parser("lattice", help="lattice counts").add_subparsers(dest="command", required=True)
    p = lattice.add_parser("info", help="counts and overlap sums of D_n")
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_lattice_info)

    mc = groups.add_parser("mc", help="Monte Carlo of the partition function").add_subparsers(dest="command", required=True)
    p = mc.add_parser("sample-w", help="replicates of W_n(β)")
    _common(p)
    _engine(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--beta", type=float, default=None, help="fixed β")
    p.add_argument("--beta-hat", type=float, default=None)
    p.add_argument("--beta-schedule", "--schedule", dest="schedule", default=None,
                   choices=["fixed", "bls", "beq", "edge", "critical"], help="β schedule (default: fixed with --beta, else beq)")
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--edge", action="store_true", help="edge disorder")
    p.set_defaults(func=cmd_sample_w)

    moments = groups.add_parser("moments", help="deterministic variance flows").add_subparsers(dest="command", required=True)
    p = moments.add_parser("iterate", help="iterate one flow map")
    _common(p, seed=False)
    p.add_argument("--map", "--kind", dest="kind", required=True, choices=[k.value for k in FlowKind])
    p.add_argument("--beta", "--beta-hat", dest="beta", type=float, default=0.0, help="β, β̂ or βₙ depending on the map")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--x0", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--extended", action="store_true", help="numpy.longdouble")
    p.add_argument("--csv", action="store_true", help="print the trace as CSV")
    p.add_argument("--emit", default=None, help="write the trace (k, value) to this CSV file")
    p.set_defaults(func=cmd_moments_iterate)
    p = moments.add_parser("critical", help="(log n / n)·M^n(0) at β̂ = κ_b")
    _common(p, lattice=False, seed=False)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--n-grid", required=True, help="comma-separated n values")
    p.add_argument("--variant", default="cubic", choices=[v.value for v in BeqVariant])
    p.set_defaults(func=cmd_moments_critical)

    limits = groups.add_parser("limits", help="the b<s limit laws").add_subparsers(dest="command", required=True)
    p = limits.add_parser("sample-L", help="samples of L_r")
    _common(p)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--leaf-mode", default=None, choices=["gaussian-leaf", "exp-gaussian-leaf", "rademacher-leaf", "gamma-leaf"])
    p.add_argument("--leaf-variance", default="matched", choices=["linear", "matched"])
    p.add_argument("--samples", type=int, default=10_000)
    p.set_defaults(func=cmd_limits_sample)
    p = limits.add_parser("fixed-point", help="two-sample KS of the distributional fixed point")
    _common(p)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--leaf-variance", default="matched", choices=["linear", "matched"])
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--permutations", type=int, default=DEFAULT_PERMUTATIONS)
    p.set_defaults(func=cmd_limits_fixed_point)

    fluct = groups.add_parser("fluct", help="fluctuation experiments").add_subparsers(dest="command", required=True)
    p = fluct.add_parser("clt", help="√n(W_n(β̂/n) - 1) for b = s")
    _common(p)
    _engine(p)
    p.add_argument("--beta-hat", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--replicates", type=int, default=10_000)
    p.set_defaults(func=cmd_fluct_clt)
    p = fluct.add_parser("process", help="the averaged process Y_r for b = s")
    _common(p)
    _engine(p)
    p.add_argument("--beta-hat", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--grid", default="0.25,0.5,0.75,1.0")
    p.add_argument("--replicates", type=int, default=10_000)
    p.set_defaults(func=cmd_fluct_process)
    p = fluct.add_parser("critical", help="√(log n)(W_n(κ_b/n) - 1) across n")
    _common(p, lattice=False)
    _engine(p)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--n-grid", required=True)
    p.add_argument("--replicates", type=int, default=10_000)
    p.add_argument("--analog-beta-hat", type=float, default=None)
    p.set_defaults(func=cmd_fluct_critical)
    p = fluct.add_parser("bgs", help="(W_n(βₙ) - 1)/βₙ against the noise sum for b > s")
    _common(p)
    _engine(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--beta-n", type=float, default=None, help="defaults to 1/n")
    p.add_argument("--replicates", type=int, default=1000)
    p.set_defaults(func=cmd_fluct_bgs)

    experiment = groups.add_parser("experiment", help="config-driven runs").add_subparsers(dest="command", required=True)
    p = experiment.add_parser("run", help="run an experiment config (JSON)")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--no-save", action="store_true")
    p.set_defaults(func=cmd_experiment_run)
    p = experiment.add_parser("summarize", help="compare saved records with closed-form targets")
    p.add_argument("pattern", help="glob of record JSON files, or a results directory")
    p.add_argument("--csv", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_experiment_summarize)
    return parser

def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    logging.basicConfig(
        level=args.log_level or settings.log_level,
        format="%(asctime)s [%(levelname)s] %(name)s - %(message)s",
    )
    try:
        return args.func(args, settings)
    except ValidationError as exc:
        print(f"invalid configuration:\n{exc}", file=sys.stderr)
        return 2
    except (DiamondLabError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

if __name__ == "__main__":
    sys.exit(main())

import csv
import glob
import json
import logging
import math
import os
from enum import Enum
from typing import Any, Dict, List, Tuple

import aiofiles
import numpy as np
import pandas as pd
from pydantic import ValidationError

from ..core.disorder import DisorderSpec, seed_word
from ..models.schemas import ExperimentConfig, ExperimentKind, ResultRecord

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

def jsonable(obj: Any, strict: bool = False) -> Any:
    """Recursively turn numpy scalars/arrays, tuples and enums into JSON-friendly builtins.

    ``strict`` also maps NaN and infinities to None for encoders that reject them.
    """
    if isinstance(obj, dict):
        return {str(k.value if isinstance(k, Enum) else k): jsonable(v, strict) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v, strict) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v, strict) for v in obj.tolist()]
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return None if strict and not math.isfinite(value) else value
    return obj

def record_stem(record: ResultRecord) -> str:
    config = record.config
    return config.output.prefix or f"{config.experiment.value}-b{config.lattice.b}-s{config.lattice.s}-seed{config.master_seed}"

def record_paths(record: ResultRecord, results_dir: str) -> Tuple[str, str]:
    stem = os.path.join(results_dir, record_stem(record))
    return f"{stem}.csv", f"{stem}.json"

def _replicate_seeds(record: ResultRecord, n: int, count: int) -> np.ndarray:
    """Stream word of each replicate; a population run draws every replicate from one pool stream per depth."""
    config = record.config
    first = record.provenance.get("first_replicate", 0)
    engine = next((row.get("engine") for row in record.rows if row.get("n") == n), "lattice")
    if engine == "population":
        return np.full(count, seed_word(config.master_seed, n), dtype=np.uint64)
    return np.array([seed_word(config.master_seed, first + i) for i in range(count)], dtype=np.uint64)

def _w_frame(record: ResultRecord, n: int, values: List[float]) -> pd.DataFrame:
    w = np.asarray(values, dtype=float)
    first = record.provenance.get("first_replicate", 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_w = np.log(w)
    return pd.DataFrame({
        "n": n,
        "replicate": np.arange(first, first + w.size),
        "seed": _replicate_seeds(record, n, w.size),
        "W": w,
        "logW": log_w,
    })

def record_frame(record: ResultRecord) -> pd.DataFrame:
    """Per-replicate values when the experiment has them, otherwise its tabular rows.

    sample-w records give one row per replicate and depth with columns n, replicate, seed, W, logW.
    """
    config = record.config
    if record.values is not None and config.experiment is ExperimentKind.SAMPLE_W and "values_n" in record.report:
        blocks = record.report.get("values_by_depth") or {record.report["values_n"]: record.values}
        return pd.concat([_w_frame(record, int(n), w) for n, w in blocks.items()], ignore_index=True)
    if record.values is not None:
        first = record.provenance.get("first_replicate", 0)
        frame = pd.DataFrame({
            "replicate": np.arange(first, first + len(record.values)),
            "value": np.asarray(record.values, dtype=float),
        })
        if config.experiment is ExperimentKind.LIMIT_LAW:
            frame.insert(1, "seed", np.array([seed_word(config.master_seed, int(i)) for i in frame["replicate"]], dtype=np.uint64))
        return frame
    flat = [{k: (json.dumps(v) if isinstance(v, (dict, list)) else v) for k, v in row.items()} for row in record.rows]
    return pd.DataFrame(flat)

def frame_to_csv(frame: pd.DataFrame) -> str:
    # UTF-8, header row, '.' decimal separator, RFC-4180 quoting
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, quoting=csv.QUOTE_MINIMAL)

def write_csv(frame: pd.DataFrame, path: str):
    with open(path, "w", encoding="utf-8", newline="") as out_file:
        out_file.write(frame_to_csv(frame))

def write_record(record: ResultRecord, results_dir: str) -> Tuple[str, str]:
    """Writes the CSV and the JSON sidecar synchronously (CLI path)."""
    os.makedirs(results_dir, exist_ok=True)
    csv_path, json_path = record_paths(record, results_dir)
    if record.config.output.write_csv:
        write_csv(record_frame(record), csv_path)
    with open(json_path, "w", encoding="utf-8") as out_file:
        out_file.write(record.json(indent=2))
    logger.info("Wrote %s and %s", csv_path, json_path)
    return csv_path, json_path

async def save_record(record: ResultRecord, results_dir: str) -> Tuple[str, str]:
    """
    Save a result record asynchronously (HTTP path).
    Returns the CSV and JSON paths.
    """
    os.makedirs(results_dir, exist_ok=True)
    csv_path, json_path = record_paths(record, results_dir)
    try:
        if record.config.output.write_csv:
            async with aiofiles.open(csv_path, "w", encoding="utf-8", newline="") as out_file:
                await out_file.write(frame_to_csv(record_frame(record)))
        async with aiofiles.open(json_path, "w", encoding="utf-8") as out_file:
            await out_file.write(record.json(indent=2))
    except OSError as exc:
        logger.error("Failed to save record %s: %s", json_path, exc)
        raise
    return csv_path, json_path

def load_config(path: str) -> ExperimentConfig:
    """
    Read and validate an experiment configuration JSON file.
    Raises pydantic.ValidationError with field-level messages on invalid content.
    """
    try:
        return ExperimentConfig.parse_file(path)
    except ValidationError:
        logger.error("Invalid experiment config %s", path)
        raise

def load_disorder(path: str) -> DisorderSpec:
    return DisorderSpec.from_json(path)

def load_records(pattern: str) -> List[ResultRecord]:
    """All JSON records matching a glob pattern (a directory means '<dir>/*.json')."""
    if os.path.isdir(pattern):
        pattern = os.path.join(pattern, "*.json")
    records = []
    for path in sorted(glob.glob(pattern)):
        try:
            records.append(ResultRecord.parse_file(path))
        except (ValidationError, json.JSONDecodeError) as exc:
            logger.warning("Skipping %s: not a result record (%s)", path, exc)
    return records

def dump_json(data: Dict[str, Any], path: str):
    with open(path, "w", encoding="utf-8") as out_file:
        json.dump(jsonable(data), out_file, indent=2)

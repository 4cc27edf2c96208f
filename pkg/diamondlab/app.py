import logging
import os
from typing import List

import numpy as np
from fastapi import Depends, FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import __version__
from .api.experiments import run_experiment
from .api.summary import summarize
from .config import Settings, get_settings
from .core.exceptions import DiamondLabError
from .core.lattice import LatticeParams, lattice_info
from .core.rgflow import BeqVariant, FlowMap, critical_table, iterate
from .models.schemas import (
    CriticalRequest,
    CriticalRow,
    ExperimentConfig,
    FlowRequest,
    FlowResponse,
    SummarizeRequest,
    SummaryRow,
)
from .utils.utils import jsonable, load_records

logger = logging.getLogger(__name__)
logging.basicConfig(
    level=get_settings().log_level,
    format="%(asctime)s [%(levelname)s] %(name)s - %(message)s",
)

app = FastAPI(
    title="diamondlab",
    description=(
        "Numerical toolkit for directed polymers on hierarchical diamond lattices: "
        "exact partition functions, variance flows, limit laws and fluctuation experiments."
    ),
    version=__version__,
)

# ---------------------------
# CORS & Middleware
# ---------------------------
origins = get_settings().allowed_origins
if origins == "*":
    allowed_origins = ["*"]
else:
    allowed_origins = [o.strip() for o in origins.split(",") if o.strip()]

app.add_middleware(
    CORSMiddleware,
    allow_origins=allowed_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

@app.middleware("http")
async def add_global_exception_handling(request, call_next):
    """
    Global safety net so unexpected exceptions always return a structured JSON error.
    Logs the full traceback.
    """
    try:
        return await call_next(request)
    except HTTPException:
        raise
    except Exception as exc:
        logger.exception("Unhandled server error: %s", exc)
        return JSONResponse(
            status_code=500,
            content={"detail": f"Internal server error. Please check logs for details. Exception: {exc}"},
        )

def _bad_request(exc: Exception) -> HTTPException:
    logger.warning("Rejected request: %s", exc)
    return HTTPException(status_code=400, detail=str(exc))

# ---------------------------
# Health & Utility Endpoints
# ---------------------------

@app.get("/health", tags=["system"])
async def health_check():
    logger.debug("Health check called.")
    return {"status": "ok", "version": __version__}

@app.get("/lattice/info", tags=["lattice"])
async def get_lattice_info(
    b: int = Query(..., ge=2),
    s: int = Query(..., ge=1),
    n: int = Query(..., ge=0),
):
    try:
        return jsonable(lattice_info(LatticeParams(b, s), n), strict=True)
    except DiamondLabError as exc:
        raise _bad_request(exc)

# ---------------------------
# Variance flows
# ---------------------------

@app.post("/moments/iterate", response_model=FlowResponse, tags=["moments"])
async def iterate_flow(payload: FlowRequest, settings: Settings = Depends(get_settings)):
    logger.info("Iterating %s for b=%d, s=%d, n=%d", payload.kind.value, payload.b, payload.s, payload.n)
    extended = settings.extended if payload.extended is None else payload.extended
    dtype = np.longdouble if extended else float
    try:
        flow = FlowMap(payload.kind, LatticeParams(payload.b, payload.s), payload.disorder.to_spec(), payload.beta, payload.n, dtype)
        steps = payload.n if payload.steps is None else payload.steps
        trace = iterate(flow, payload.x0, steps, threshold=settings.blow_up_threshold, dtype=dtype)
    except (DiamondLabError, ValueError) as exc:
        raise _bad_request(exc)
    values = jsonable(trace.values.astype(float), strict=True)
    return FlowResponse(kind=payload.kind.value, values=values, blow_up_index=trace.blow_up_index, converged=trace.converged)

@app.post("/moments/critical", response_model=List[CriticalRow], tags=["moments"])
async def critical_scaling_table(payload: CriticalRequest):
    try:
        rows = critical_table(
            LatticeParams(payload.b, payload.b), payload.disorder.to_spec(), payload.n_grid, BeqVariant(payload.variant)
        )
    except DiamondLabError as exc:
        raise _bad_request(exc)
    return rows

# ---------------------------
# Experiments
# ---------------------------

@app.post("/experiments/run", tags=["experiments"])
async def run_experiment_endpoint(payload: ExperimentConfig, settings: Settings = Depends(get_settings)):
    logger.info("Experiment %s requested with %d replicates", payload.experiment.value, payload.replicates)
    try:
        record = await run_experiment(payload, settings)
    except (DiamondLabError, ValueError) as exc:
        raise _bad_request(exc)
    except OSError as exc:
        logger.exception("Failed to save record: %s", exc)
        raise HTTPException(status_code=500, detail=f"Failed to save record. Exception: {exc}")
    # NaN and inf are not valid JSON
    return JSONResponse(content=jsonable(record.dict(), strict=True))

@app.post("/experiments/summarize", response_model=List[SummaryRow], tags=["experiments"])
async def summarize_endpoint(payload: SummarizeRequest, settings: Settings = Depends(get_settings)):
    if payload.records is not None:
        records = payload.records
    else:
        if os.path.isabs(payload.pattern) or ".." in payload.pattern.split("/"):
            raise HTTPException(status_code=400, detail="pattern must be relative to results_dir")
        records = load_records(os.path.join(settings.results_dir, payload.pattern))
    if not records:
        raise HTTPException(status_code=404, detail="No result records found.")
    return JSONResponse(content=jsonable([row.dict() for row in summarize(records)], strict=True))

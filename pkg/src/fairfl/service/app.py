"""HTTP front end over the experiment workflows.

Run with ``uvicorn fairfl.service.app:app``. Config problems come back as 422
with the offending field named; failures during a run come back as 500.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, workflows
from ..config import parse_config
from ..data import format_csv, parse_csv_text
from ..errors import ConfigError, DataError, FairFLError
from .schemas import (
    GenDataRequest,
    GenDataResponse,
    HealthResponse,
    RunRequest,
    RunResponse,
    StatsRequest,
    StatsResponse,
    SweepEntry,
    SweepRequest,
    SweepResponse,
)

app = FastAPI(title="fairfl", version=__version__)


@app.exception_handler(ConfigError)
async def _config_error(request: Request, exc: ConfigError):
    return JSONResponse(status_code=422, content={"kind": "config", "field": exc.field, "message": str(exc)})


@app.exception_handler(DataError)
async def _data_error(request: Request, exc: DataError):
    return JSONResponse(status_code=422, content={"kind": "config", "field": "csv", "message": str(exc)})


@app.exception_handler(FairFLError)
async def _runtime_error(request: Request, exc: FairFLError):
    return JSONResponse(status_code=500, content={"kind": "runtime", "field": None, "message": str(exc)})


def _config(req: RunRequest):
    return workflows.with_overrides(parse_config(req.config), seed=req.seed, threads=req.threads)


@app.get("/health", response_model=HealthResponse)
def health():
    return HealthResponse(status="ok", version=__version__)


@app.post("/runs", response_model=RunResponse)
def run(req: RunRequest):
    lines = workflows.run_config(_config(req))
    return RunResponse(summary=lines[-1], lines=lines)


@app.post("/sweeps", response_model=SweepResponse)
def sweep(req: SweepRequest):
    items = workflows.run_sweep(_config(req), req.param, req.values)
    results = [
        SweepEntry(
            value=it.value,
            key=it.key,
            ok=it.ok,
            error=it.error,
            summary=it.lines[-1] if it.lines else None,
            lines=it.lines,
        )
        for it in items
    ]
    return SweepResponse(param=req.param, results=results)


@app.post("/datasets/synthetic", response_model=GenDataResponse)
def gen_data(req: GenDataRequest):
    data = workflows.generate_from_config(_config(req))
    return GenDataResponse(n_samples=len(data), csv=format_csv(data))


@app.post("/datasets/stats", response_model=StatsResponse)
def stats(req: StatsRequest):
    return workflows.dataset_stats(parse_csv_text(req.csv, source="request body"))

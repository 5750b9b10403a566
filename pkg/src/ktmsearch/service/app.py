"""FastAPI application wrapping the core package.

Quick operations (benchmark generation, reporting) answer synchronously;
campaigns (calibrate, search, evaluate, compare) run as background jobs
polled via /jobs.  Paths in requests refer to the service host's filesystem;
the CLI's embedded mode shares the local filesystem by construction.
"""
from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..errors import KtmSearchError, UsageError
from . import ops, schemas
from .jobs import JobManager


def _job_status(record) -> schemas.JobStatus:
    return schemas.JobStatus(
        id=record.id, kind=record.kind, state=record.state,
        error=record.error, result=record.result,
    )


def create_app(max_workers: int = 2) -> FastAPI:
    app = FastAPI(title="ktmsearch", version=__version__)
    jobs = JobManager(max_workers=max_workers)
    app.state.jobs = jobs

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/benchmarks/generate", response_model=schemas.BenchmarkSummary)
    def generate_benchmark(req: schemas.GenerateBenchmarkRequest):
        return _run_sync(lambda: ops.op_generate_benchmark(req))

    @app.post("/reports", response_model=schemas.ReportResult)
    def report(req: schemas.ReportRequest):
        return _run_sync(lambda: ops.op_report(req))

    @app.post("/jobs/calibrate", response_model=schemas.JobStatus)
    def submit_calibrate(req: schemas.CalibrateRequest):
        return _job_status(jobs.submit("calibrate", lambda: ops.op_calibrate(req).model_dump()))

    @app.post("/jobs/search", response_model=schemas.JobStatus)
    def submit_search(req: schemas.SearchRequest):
        return _job_status(jobs.submit("search", lambda: ops.op_search(req).model_dump()))

    @app.post("/jobs/evaluate", response_model=schemas.JobStatus)
    def submit_evaluate(req: schemas.EvaluateRequest):
        return _job_status(jobs.submit("evaluate", lambda: ops.op_evaluate(req).model_dump()))

    @app.post("/jobs/compare", response_model=schemas.JobStatus)
    def submit_compare(req: schemas.CompareRequest):
        return _job_status(jobs.submit("compare", lambda: ops.op_compare(req).model_dump()))

    @app.get("/jobs", response_model=list[schemas.JobStatus])
    def list_jobs():
        return [_job_status(r) for r in jobs.list()]

    @app.get("/jobs/{job_id}", response_model=schemas.JobStatus)
    def get_job(job_id: str):
        record = jobs.get(job_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"no such job {job_id!r}")
        return _job_status(record)

    return app


def _run_sync(fn):
    try:
        return fn()
    except UsageError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    except KtmSearchError as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    except FileNotFoundError as exc:
        raise HTTPException(status_code=400, detail=str(exc))

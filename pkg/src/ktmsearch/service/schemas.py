"""Request/response models for the service API."""
from __future__ import annotations

from pydantic import BaseModel, Field


class GenerateBenchmarkRequest(BaseModel):
    preset: str | None = None
    pset: list[int] | None = None
    numt: int | None = None
    dim: int | None = None
    seed: int = 0
    instance_id: str | None = None
    out_path: str


class BenchmarkSummary(BaseModel):
    id: str
    numt: int
    dim: int
    seed: int
    pset: list[int]
    path: str
    manifest_path: str


class EngineParams(BaseModel):
    pop_size: int = 100
    generations: int = 100
    transfer_interval: int = 10
    nt: int = 10
    time_model: str = "wall"


class CalibrateRequest(BaseModel):
    benchmark_path: str
    seeds: list[int] = Field(min_length=1)
    engine: EngineParams = EngineParams()
    out_path: str


class CalibrateResult(BaseModel):
    benchmark_id: str
    f_min: list[float]
    seeds: list[int]
    path: str
    manifest_path: str


class SandboxParams(BaseModel):
    runner: str = "live"  # live | replay | custom
    runner_cmd: list[str] | None = None
    timeout_ms: int = 10_000
    grace_kill_ms: int = 1_000
    max_response_bytes: int = 64 * 1024 * 1024


class BackendParams(BaseModel):
    backend: str = "scripted"  # remote | scripted | generator
    playlist_dir: str | None = None
    generator_seed: int = 0
    model: str = ""
    endpoint: str = ""
    temperature: float = 0.5
    max_tokens: int = 4000
    retries: int = 3
    api_key_env: str = "KTMSEARCH_API_KEY"


class SearchRequest(BaseModel):
    benchmark_path: str
    calibration_path: str
    out_dir: str
    resume: bool = False
    n_ktm: int = 10
    g_ktm: int = 10
    master_seed: int = 0
    eval_seed: int = 1
    dominance: str = "strict"
    stop_after_generation: int | None = None
    evaluator: str = "emto"  # emto | synthetic
    engine: EngineParams = EngineParams()
    sandbox: SandboxParams = SandboxParams()
    llm: BackendParams = BackendParams()


class CandidateSummary(BaseModel):
    uid: str
    content_id: str
    s: float
    t: float
    operator: str
    annotation: str = ""


class SearchResult(BaseModel):
    out_dir: str
    generation: int
    front1: list[CandidateSummary]
    headline: CandidateSummary | None
    events_path: str
    checkpoint_path: str
    manifest_path: str


class EvaluateRequest(BaseModel):
    benchmark_path: str
    calibration_path: str
    method: str  # registered baseline name or path to a snippet file
    seeds: list[int] = Field(min_length=1)
    engine: EngineParams = EngineParams()
    sandbox: SandboxParams = SandboxParams()
    out_dir: str


class EvaluateResult(BaseModel):
    method: str
    runs: list[dict]
    mean_s: float
    mean_t: float
    manifest_path: str


class CompareRequest(BaseModel):
    benchmark_path: str
    calibration_path: str
    methods: list[str] = Field(min_length=1)
    seeds: list[int] = Field(min_length=1)
    engine: EngineParams = EngineParams()
    sandbox: SandboxParams = SandboxParams()
    max_workers: int = 1
    out_dir: str


class CompareResult(BaseModel):
    benchmark_id: str
    methods: list[str]
    cells: dict[str, dict]
    csv_path: str
    text_path: str
    text: str
    manifest_path: str


class ReportRequest(BaseModel):
    log_paths: list[str] = Field(min_length=1)
    out_dir: str


class ReportResult(BaseModel):
    out_dir: str
    runs: list[str]
    report_path: str


class JobStatus(BaseModel):
    id: str
    kind: str
    state: str  # queued | running | succeeded | failed
    error: str | None = None
    result: dict | None = None


class HealthResponse(BaseModel):
    status: str
    version: str

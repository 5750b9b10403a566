"""Operation implementations behind the service endpoints.

Each op consumes a request schema, drives the core package, writes artifacts
plus a manifest into the requested output location, and returns a response
schema.  The service runs the long ones as background jobs; the CLI reaches
them through the HTTP surface either way.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from ..benchmarks import (
    BaseFunction,
    PRESETS,
    generate_benchmark,
    generate_preset,
    load_benchmark,
    save_benchmark,
)
from ..engine import EmtoConfig, calibrate_fmin, load_calibration, save_calibration
from ..errors import UsageError
from ..gateway import LlmConfig, make_backend
from ..reporting import (
    comparison_to_csv,
    comparison_to_text,
    evaluate_method,
    run_comparison,
    write_manifest,
    write_report,
)
from ..sandbox import SandboxConfig
from ..search import (
    EmtoCandidateEvaluator,
    SearchConfig,
    SyntheticEvaluator,
    resume_search,
    run_search,
)
from ..testing import replay_runner_cmd
from . import schemas


def _engine_config(params: schemas.EngineParams) -> EmtoConfig:
    return EmtoConfig(
        pop_size=params.pop_size,
        generations=params.generations,
        transfer_interval=params.transfer_interval,
        nt=params.nt,
        time_model=params.time_model,
    )


def _sandbox_config(params: schemas.SandboxParams) -> SandboxConfig:
    if params.runner == "replay":
        cmd = replay_runner_cmd()
    elif params.runner == "live":
        cmd = (sys.executable, "-m", "ktm_runner")
    elif params.runner == "custom":
        if not params.runner_cmd:
            raise UsageError("runner 'custom' needs runner_cmd")
        cmd = tuple(params.runner_cmd)
    else:
        raise UsageError(f"unknown runner {params.runner!r} (live, replay, or custom)")
    return SandboxConfig(
        runner_cmd=cmd,
        timeout_ms=params.timeout_ms,
        grace_kill_ms=params.grace_kill_ms,
        max_response_bytes=params.max_response_bytes,
    )


def op_generate_benchmark(req: schemas.GenerateBenchmarkRequest) -> schemas.BenchmarkSummary:
    if req.preset:
        if req.preset not in PRESETS:
            raise UsageError(
                f"unknown preset {req.preset!r}; known: {', '.join(sorted(PRESETS))}"
            )
        instance = generate_preset(req.preset, seed=req.seed)
    else:
        if not (req.pset and req.numt and req.dim):
            raise UsageError("either a preset or explicit pset/numt/dim is required")
        instance = generate_benchmark(
            [BaseFunction(p) for p in req.pset],
            req.numt,
            req.dim,
            seed=req.seed,
            instance_id=req.instance_id,
        )
    out_path = Path(req.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_benchmark(instance, out_path)
    manifest = write_manifest(
        out_path.parent,
        command="generate-benchmark",
        config=req.model_dump(),
        inputs={},
        outputs=[str(out_path)],
        seeds=[req.seed],
    )
    return schemas.BenchmarkSummary(
        id=instance.id,
        numt=instance.numt,
        dim=instance.dim,
        seed=instance.seed,
        pset=[int(p) for p in instance.pset],
        path=str(out_path),
        manifest_path=str(manifest),
    )


def op_calibrate(req: schemas.CalibrateRequest) -> schemas.CalibrateResult:
    benchmark = load_benchmark(req.benchmark_path)
    table = calibrate_fmin(benchmark, _engine_config(req.engine), req.seeds)
    out_path = Path(req.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_calibration(table, out_path)
    manifest = write_manifest(
        out_path.parent,
        command="calibrate",
        config=req.model_dump(),
        inputs={"benchmark": req.benchmark_path},
        outputs=[str(out_path)],
        seeds=list(req.seeds),
    )
    return schemas.CalibrateResult(
        benchmark_id=table.benchmark_id,
        f_min=table.f_min.tolist(),
        seeds=list(table.seeds),
        path=str(out_path),
        manifest_path=str(manifest),
    )


def _candidate_summary(candidate) -> schemas.CandidateSummary:
    return schemas.CandidateSummary(
        uid=candidate.uid,
        content_id=candidate.content_id,
        s=candidate.s,
        t=candidate.t,
        operator=candidate.operator,
        annotation=candidate.snippet.annotation,
    )


def _make_llm_backend(params: schemas.BackendParams):
    cfg = LlmConfig(
        backend=params.backend,
        model=params.model,
        endpoint=params.endpoint,
        temperature=params.temperature,
        max_tokens=params.max_tokens,
        retries=params.retries,
        api_key_env=params.api_key_env,
        playlist_dir=params.playlist_dir or "",
        generator_seed=params.generator_seed,
    )
    return make_backend(cfg)


def op_search(req: schemas.SearchRequest) -> schemas.SearchResult:
    benchmark = load_benchmark(req.benchmark_path)
    calibration = load_calibration(req.calibration_path)
    backend = _make_llm_backend(req.llm)
    if req.evaluator == "synthetic":
        evaluator = SyntheticEvaluator()
    elif req.evaluator == "emto":
        evaluator = EmtoCandidateEvaluator(
            benchmark=benchmark,
            emto_config=_engine_config(req.engine),
            calibration=calibration,
            sandbox_cfg=_sandbox_config(req.sandbox),
            eval_seed=req.eval_seed,
        )
    else:
        raise UsageError(f"unknown evaluator {req.evaluator!r} (emto or synthetic)")

    out_dir = Path(req.out_dir)
    if req.resume:
        state = resume_search(
            out_dir, backend, evaluator, stop_after_generation=req.stop_after_generation
        )
    else:
        config = SearchConfig(
            n_ktm=req.n_ktm,
            g_ktm=req.g_ktm,
            master_seed=req.master_seed,
            dominance=req.dominance,
        )
        state = run_search(
            config, backend, evaluator, out_dir, stop_after_generation=req.stop_after_generation
        )
    manifest = write_manifest(
        out_dir,
        command="search",
        config=req.model_dump(),
        inputs={"benchmark": req.benchmark_path, "calibration": req.calibration_path},
        outputs=[str(out_dir / "events.jsonl"), str(out_dir / "checkpoint.json")],
        seeds=[req.master_seed, req.eval_seed],
    )
    headline = state.headline()
    return schemas.SearchResult(
        out_dir=str(out_dir),
        generation=state.generation,
        front1=[_candidate_summary(c) for c in state.front1()],
        headline=_candidate_summary(headline) if headline else None,
        events_path=str(out_dir / "events.jsonl"),
        checkpoint_path=str(out_dir / "checkpoint.json"),
        manifest_path=str(manifest),
    )


def op_evaluate(req: schemas.EvaluateRequest) -> schemas.EvaluateResult:
    benchmark = load_benchmark(req.benchmark_path)
    calibration = load_calibration(req.calibration_path)
    engine_cfg = _engine_config(req.engine)
    sandbox_cfg = _sandbox_config(req.sandbox)
    out_dir = Path(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = []
    for seed in req.seeds:
        result = evaluate_method(benchmark, calibration, engine_cfg, req.method, seed, sandbox_cfg)
        path = out_dir / f"run-seed{seed}.json"
        path.write_text(json.dumps(result.to_json_dict(), indent=1))
        runs.append({"seed": seed, "s": result.s, "t": result.t, "path": str(path)})
    manifest = write_manifest(
        out_dir,
        command="evaluate",
        config=req.model_dump(),
        inputs={"benchmark": req.benchmark_path, "calibration": req.calibration_path},
        outputs=[r["path"] for r in runs],
        seeds=list(req.seeds),
    )
    return schemas.EvaluateResult(
        method=req.method,
        runs=runs,
        mean_s=float(np.mean([r["s"] for r in runs])),
        mean_t=float(np.mean([r["t"] for r in runs])),
        manifest_path=str(manifest),
    )


def op_compare(req: schemas.CompareRequest) -> schemas.CompareResult:
    benchmark = load_benchmark(req.benchmark_path)
    calibration = load_calibration(req.calibration_path)
    row = run_comparison(
        benchmark,
        calibration,
        _engine_config(req.engine),
        req.methods,
        req.seeds,
        sandbox_cfg=_sandbox_config(req.sandbox),
        max_workers=req.max_workers,
    )
    out_dir = Path(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "comparison.csv"
    text_path = out_dir / "comparison.txt"
    comparison_to_csv([row], csv_path)
    text = comparison_to_text([row])
    text_path.write_text(text)
    manifest = write_manifest(
        out_dir,
        command="compare",
        config=req.model_dump(),
        inputs={"benchmark": req.benchmark_path, "calibration": req.calibration_path},
        outputs=[str(csv_path), str(text_path)],
        seeds=list(req.seeds),
    )
    return schemas.CompareResult(
        benchmark_id=row.benchmark_id,
        methods=req.methods,
        cells={m: vars(c) for m, c in row.cells.items()},
        csv_path=str(csv_path),
        text_path=str(text_path),
        text=text,
        manifest_path=str(manifest),
    )


def op_report(req: schemas.ReportRequest) -> schemas.ReportResult:
    report = write_report(req.log_paths, req.out_dir)
    manifest = write_manifest(
        Path(req.out_dir),
        command="report",
        config=req.model_dump(),
        inputs={f"log{i}": p for i, p in enumerate(req.log_paths)},
        outputs=[str(Path(req.out_dir) / "report.json")],
        seeds=[],
    )
    return schemas.ReportResult(
        out_dir=req.out_dir,
        runs=sorted(report["runs"]),
        report_path=str(Path(req.out_dir) / "report.json"),
    )

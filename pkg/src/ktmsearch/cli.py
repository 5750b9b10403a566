"""Command-line client for the service.

By default every verb talks to an embedded in-process service instance, so
the tool works standalone with full determinism; pass --server (or set
KTMSEARCH_SERVER) to target a running remote instance instead.  Exit codes:
0 success, 1 runtime failure, 64 usage error.
"""
from __future__ import annotations

import json
import logging
import sys
import time
from pathlib import Path

import click
import httpx

from .errors import KtmSearchError, UsageError

_LOG = logging.getLogger("ktmsearch")


class ServiceClient:
    """Minimal HTTP client over either a remote server or the embedded app."""

    def __init__(self, server: str | None = None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=600.0)
            self.poll_interval = 1.0
        else:
            from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())
            self.poll_interval = 0.05

    def get(self, path: str) -> dict:
        return self._handle(self._client.get(path))

    def post(self, path: str, payload: dict) -> dict:
        return self._handle(self._client.post(path, json=payload))

    def run_job(self, path: str, payload: dict) -> dict:
        job = self.post(path, payload)
        job_id = job["id"]
        while True:
            job = self.get(f"/jobs/{job_id}")
            if job["state"] == "succeeded":
                return job["result"]
            if job["state"] == "failed":
                error = job.get("error") or "job failed"
                if error.startswith("UsageError"):
                    raise UsageError(error)
                raise KtmSearchError(error)
            time.sleep(self.poll_interval)

    @staticmethod
    def _handle(response) -> dict:
        if response.status_code == 422:
            raise UsageError(str(response.json().get("detail")))
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail")
            except ValueError:
                detail = response.text
            raise KtmSearchError(str(detail))
        return response.json()


def _client(ctx) -> ServiceClient:
    return ServiceClient(server=ctx.obj.get("server"))


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.replace(" ", "").split(",") if part]
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}")


def _fallback(value, ctx, key):
    return value if value is not None else ctx.obj.get(key)


def _require(value, name: str):
    if value is None:
        raise UsageError(f"missing required option {name}")
    return value


def _engine_payload(pop_size, generations, transfer_interval, nt, time_model) -> dict:
    return {
        "pop_size": pop_size,
        "generations": generations,
        "transfer_interval": transfer_interval,
        "nt": nt,
        "time_model": time_model,
    }


def _sandbox_payload(runner, runner_cmd, timeout_ms) -> dict:
    payload = {"runner": runner, "timeout_ms": timeout_ms}
    if runner_cmd:
        payload["runner"] = "custom"
        payload["runner_cmd"] = runner_cmd.split()
    return payload


_engine_options = [
    click.option("--pop-size", default=100, show_default=True, help="GA population per task."),
    click.option("--generations", default=100, show_default=True, help="GA generations per task."),
    click.option("--transfer-interval", default=10, show_default=True,
                 help="Generations between transfer events."),
    click.option("--nt", default=10, show_default=True, help="Transfer solutions per task."),
    click.option("--time-model", default="wall", show_default=True,
                 type=click.Choice(["wall", "deterministic"]),
                 help="Deterministic time uses a reproducible cost proxy."),
]

_sandbox_options = [
    click.option("--runner", default="live", show_default=True,
                 type=click.Choice(["live", "replay"]), help="Snippet runner flavour."),
    click.option("--runner-cmd", default=None, help="Custom runner command (overrides --runner)."),
    click.option("--timeout-ms", default=10_000, show_default=True,
                 help="Sandbox timeout per transfer invocation."),
]


def _apply(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn

    return wrap


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON file with per-command option defaults.")
@click.option("--server", envvar="KTMSEARCH_SERVER", default=None,
              help="Remote service URL; omitted = embedded in-process service.")
@click.option("--seed", type=int, default=None, help="Default seed for subcommands.")
@click.option("--out", default=None, help="Default output path for subcommands.")
@click.option("--log-level", envvar="KTMSEARCH_LOG_LEVEL", default="warning",
              type=click.Choice(["debug", "info", "warning", "error"]))
@click.pass_context
def cli(ctx, config_path, server, seed, out, log_level):
    """Search, evaluate, and report on knowledge-transfer models."""
    logging.basicConfig(level=getattr(logging, log_level.upper()))
    file_defaults = {}
    if config_path:
        file_defaults = json.loads(Path(config_path).read_text())
        # Flags and environment beat the config file.
        ctx.default_map = {k: v for k, v in file_defaults.items() if isinstance(v, dict)}
    ctx.obj = {
        "server": server or file_defaults.get("server"),
        "seed": seed if seed is not None else file_defaults.get("seed"),
        "out": out or file_defaults.get("out"),
    }


@cli.command("generate-benchmark")
@click.option("--preset", default=None, help="Named preset (B1..B10 or *-mini).")
@click.option("--pset", default=None, help="Comma-separated base-function codes 1..7.")
@click.option("--numt", type=int, default=None, help="Number of tasks.")
@click.option("--dim", type=int, default=None, help="Decision variables per task.")
@click.option("--seed", type=int, default=None)
@click.option("-o", "--out", default=None, help="Output benchmark file.")
@click.pass_context
def cmd_generate_benchmark(ctx, preset, pset, numt, dim, seed, out):
    """Write a benchmark instance file."""
    out = _require(_fallback(out, ctx, "out"), "-o/--out")
    seed = _fallback(seed, ctx, "seed") or 0
    payload = {
        "preset": preset,
        "pset": _int_list(pset) if pset else None,
        "numt": numt,
        "dim": dim,
        "seed": seed,
        "out_path": out,
    }
    summary = _client(ctx).post("/benchmarks/generate", payload)
    click.echo(json.dumps(summary, indent=1))


@cli.command("calibrate")
@click.option("--benchmark", required=True, help="Benchmark file to calibrate.")
@click.option("--seeds", required=True, help="Comma-separated seeds, e.g. 0,1,2.")
@_apply(_engine_options)
@click.option("-o", "--out", default=None, help="Output calibration file.")
@click.pass_context
def cmd_calibrate(ctx, benchmark, seeds, pop_size, generations, transfer_interval, nt,
                  time_model, out):
    """Run the solo optimizer per task and record mean best fitness."""
    out = _require(_fallback(out, ctx, "out"), "-o/--out")
    payload = {
        "benchmark_path": benchmark,
        "seeds": _int_list(seeds),
        "engine": _engine_payload(pop_size, generations, transfer_interval, nt, time_model),
        "out_path": out,
    }
    result = _client(ctx).run_job("/jobs/calibrate", payload)
    click.echo(json.dumps(result, indent=1))


@cli.command("search")
@click.option("--benchmark", required=True)
@click.option("--calibration", required=True)
@click.option("--backend", default="scripted", show_default=True,
              type=click.Choice(["scripted", "generator", "remote"]))
@click.option("--playlist", default=None, help="Response directory for the scripted backend.")
@click.option("--generator-seed", type=int, default=0, show_default=True)
@click.option("--model", default="", help="Remote model identifier.")
@click.option("--endpoint", default="", help="Remote chat-completion URL.")
@click.option("--temperature", type=float, default=0.5, show_default=True)
@click.option("--max-tokens", type=int, default=4000, show_default=True)
@click.option("--n-ktm", type=int, default=10, show_default=True)
@click.option("--g-ktm", type=int, default=10, show_default=True)
@click.option("--seed", "master_seed", type=int, default=None, help="Master search seed.")
@click.option("--eval-seed", type=int, default=1, show_default=True)
@click.option("--dominance", default="strict", type=click.Choice(["strict", "weak"]),
              show_default=True)
@click.option("--evaluator", default="emto", type=click.Choice(["emto", "synthetic"]),
              show_default=True)
@_apply(_engine_options)
@_apply(_sandbox_options)
@click.option("--stop-after", type=int, default=None,
              help="Stop after this search generation (checkpointed; resume later).")
@click.option("--resume", "resume_dir", default=None,
              help="Resume the run checkpointed in this directory.")
@click.option("-o", "--out", default=None, help="Run directory.")
@click.pass_context
def cmd_search(ctx, benchmark, calibration, backend, playlist, generator_seed, model,
               endpoint, temperature, max_tokens, n_ktm, g_ktm, master_seed, eval_seed,
               dominance, evaluator, pop_size, generations, transfer_interval, nt,
               time_model, runner, runner_cmd, timeout_ms, stop_after, resume_dir, out):
    """Run the transfer-model search campaign."""
    out_dir = resume_dir or _require(_fallback(out, ctx, "out"), "-o/--out")
    master_seed = _fallback(master_seed, ctx, "seed") or 0
    payload = {
        "benchmark_path": benchmark,
        "calibration_path": calibration,
        "out_dir": out_dir,
        "resume": resume_dir is not None,
        "n_ktm": n_ktm,
        "g_ktm": g_ktm,
        "master_seed": master_seed,
        "eval_seed": eval_seed,
        "dominance": dominance,
        "stop_after_generation": stop_after,
        "evaluator": evaluator,
        "engine": _engine_payload(pop_size, generations, transfer_interval, nt, time_model),
        "sandbox": _sandbox_payload(runner, runner_cmd, timeout_ms),
        "llm": {
            "backend": backend,
            "playlist_dir": playlist,
            "generator_seed": generator_seed,
            "model": model,
            "endpoint": endpoint,
            "temperature": temperature,
            "max_tokens": max_tokens,
        },
    }
    result = _client(ctx).run_job("/jobs/search", payload)
    click.echo(json.dumps(result, indent=1))


@cli.command("evaluate")
@click.option("--benchmark", required=True)
@click.option("--calibration", required=True)
@click.option("--method", required=True,
              help="Registered transfer model (noop, vcm, smm) or a snippet file path.")
@click.option("--seeds", required=True, help="Comma-separated seeds.")
@_apply(_engine_options)
@_apply(_sandbox_options)
@click.option("-o", "--out", default=None, help="Output directory.")
@click.pass_context
def cmd_evaluate(ctx, benchmark, calibration, method, seeds, pop_size, generations,
                 transfer_interval, nt, time_model, runner, runner_cmd, timeout_ms, out):
    """Score one transfer model over one or more seeds."""
    out = _require(_fallback(out, ctx, "out"), "-o/--out")
    payload = {
        "benchmark_path": benchmark,
        "calibration_path": calibration,
        "method": method,
        "seeds": _int_list(seeds),
        "engine": _engine_payload(pop_size, generations, transfer_interval, nt, time_model),
        "sandbox": _sandbox_payload(runner, runner_cmd, timeout_ms),
        "out_dir": out,
    }
    result = _client(ctx).run_job("/jobs/evaluate", payload)
    click.echo(json.dumps(result, indent=1))


@cli.command("compare")
@click.option("--benchmark", required=True)
@click.option("--calibration", required=True)
@click.option("--methods", required=True, help="Comma-separated methods/snippet paths.")
@click.option("--seeds", required=True, help="Comma-separated seeds.")
@_apply(_engine_options)
@_apply(_sandbox_options)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("-o", "--out", default=None, help="Output directory.")
@click.pass_context
def cmd_compare(ctx, benchmark, calibration, methods, seeds, pop_size, generations,
                transfer_interval, nt, time_model, runner, runner_cmd, timeout_ms,
                workers, out):
    """Compare several transfer models; prints the winners table."""
    out = _require(_fallback(out, ctx, "out"), "-o/--out")
    payload = {
        "benchmark_path": benchmark,
        "calibration_path": calibration,
        "methods": [m for m in methods.split(",") if m],
        "seeds": _int_list(seeds),
        "engine": _engine_payload(pop_size, generations, transfer_interval, nt, time_model),
        "sandbox": _sandbox_payload(runner, runner_cmd, timeout_ms),
        "max_workers": workers,
        "out_dir": out,
    }
    result = _client(ctx).run_job("/jobs/compare", payload)
    click.echo(result["text"], nl=False)
    click.echo(f"table: {result['csv_path']}")


@cli.command("report")
@click.option("--log", "logs", multiple=True, required=True,
              help="Event log path; repeatable.")
@click.option("-o", "--out", default=None, help="Report directory.")
@click.pass_context
def cmd_report(ctx, logs, out):
    """Produce plot-ready convergence/Pareto/term-frequency data files."""
    out = _require(_fallback(out, ctx, "out"), "-o/--out")
    result = _client(ctx).post("/reports", {"log_paths": list(logs), "out_dir": out})
    click.echo(json.dumps(result, indent=1))


@cli.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
@click.option("--workers", type=int, default=2, show_default=True,
              help="Background job worker threads.")
def cmd_serve(host, port, workers):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(max_workers=workers), host=host, port=port)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 64
    except UsageError as exc:
        click.echo(f"usage error: {exc}", err=True)
        return 64
    except click.Abort:
        return 1
    except (KtmSearchError, httpx.HTTPError, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())

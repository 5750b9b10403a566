"""Report generation from search event logs, and method comparison tables.

All report outputs are plot-ready data files (CSV plus a JSON sidecar); no
images are rendered.  Reports derive solely from event logs, so deleting
every non-log artifact and re-running reproduces identical files.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import re
import string
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BASELINES, get_baseline
from .benchmarks import BenchmarkInstance
from .engine import CalibrationTable, EmtoConfig, EmtoRunResult, run_emto
from .errors import ReportError, TransferFailedError, UsageError
from .sandbox import SandboxConfig, SnippetSpec, SnippetTransferModel, penalty_objectives

# Fifty-word core English stop list used for annotation term frequencies.
STOPWORDS = frozenset(
    """a about after all an and any are as at be been before being between
    both but by can did do does for from had has have how if in into is it
    its of on or our over so such that the their then there these this to
    with""".split()
)


def read_events(path: str | Path) -> list[dict]:
    """Parse one JSONL event log; a corrupt line aborts with its line number."""
    events = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ReportError(f"{path}: corrupt event at line {lineno}: {exc.msg}")
    return events


def tokenize_annotation(text: str) -> list[str]:
    """Lowercased, punctuation-stripped, stop-word-filtered tokens."""
    text = text.lower()
    text = text.translate(str.maketrans(string.punctuation, " " * len(string.punctuation)))
    return [tok for tok in text.split() if tok and tok not in STOPWORDS]


def _population_snapshots(events: list[dict]) -> list[dict]:
    return [e for e in events if e["type"] == "generation_end"]


def _annotations_by_uid(events: list[dict]) -> dict[str, str]:
    return {
        e["data"]["uid"]: e["data"].get("annotation", "")
        for e in events
        if e["type"] == "insert"
    }


@dataclass
class GenerationStats:
    generation: int
    count: int
    penalized: int
    minimum: float | None
    q1: float | None
    median: float | None
    q3: float | None
    maximum: float | None
    mean: float | None
    best: float | None  # population minimum; non-increasing across generations


def _stats_for(values: list[float], generation: int, penalized: int) -> GenerationStats:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return GenerationStats(generation, 0, penalized, None, None, None, None, None, None, None)
    arr = np.array(finite)
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    return GenerationStats(
        generation=generation,
        count=len(finite),
        penalized=penalized,
        minimum=float(arr.min()),
        q1=float(q1),
        median=float(med),
        q3=float(q3),
        maximum=float(arr.max()),
        mean=float(arr.mean()),
        best=float(arr.min()),
    )


def convergence_stats(events: list[dict], objective: str) -> list[GenerationStats]:
    """Per-generation box-plot quantiles of one objective over the population."""
    if objective not in ("s", "t"):
        raise ValueError("objective must be 's' or 't'")
    rows = []
    for snap in _population_snapshots(events):
        members = snap["data"]["population"]
        values = [m[objective] for m in members]
        penalized = sum(1 for m in members if not math.isfinite(m["s"]))
        rows.append(_stats_for(values, snap["gen"], penalized))
    return rows


def final_pareto_front(events: list[dict]) -> list[dict]:
    """(s, t) pairs of the final non-dominated set recorded in the log."""
    for event in reversed(events):
        if event["type"] == "run_end":
            return event["data"]["front1"]
    # Interrupted run: derive from the last population snapshot.
    snaps = _population_snapshots(events)
    if not snaps:
        return []
    members = [m for m in snaps[-1]["data"]["population"] if math.isfinite(m["s"])]
    front = []
    for m in members:
        if not any(o["s"] < m["s"] and o["t"] < m["t"] for o in members):
            front.append({"uid": m["uid"], "content_id": m["content_id"], "s": m["s"], "t": m["t"]})
    return front


def annotation_frequencies(events: list[dict]) -> list[dict]:
    """Per-generation term counts over the population's annotations."""
    annotations = _annotations_by_uid(events)
    rows = []
    for snap in _population_snapshots(events):
        counter: Counter = Counter()
        for member in snap["data"]["population"]:
            counter.update(tokenize_annotation(annotations.get(member["uid"], "")))
        rows.append({"generation": snap["gen"], "counts": dict(sorted(counter.items()))})
    return rows


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_report(log_paths: list[str | Path], out_dir: str | Path) -> dict:
    """Produce convergence, Pareto, and term-frequency files for one or more logs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {"version": __version__, "runs": {}}
    for log_path in log_paths:
        label = Path(log_path).parent.name or "run"
        events = read_events(log_path)
        if not events:
            warnings.warn(f"{log_path}: empty event log; emitting empty report")
        entry = {
            "convergence_s": [vars(r) for r in convergence_stats(events, "s")],
            "convergence_t": [vars(r) for r in convergence_stats(events, "t")],
            "pareto_front": final_pareto_front(events),
            "annotation_frequencies": annotation_frequencies(events),
        }
        report["runs"][label] = entry

        stat_header = ["generation", "count", "penalized", "min", "q1", "median", "q3", "max", "mean", "best"]
        for objective in ("s", "t"):
            rows = [
                [r["generation"], r["count"], r["penalized"], r["minimum"], r["q1"],
                 r["median"], r["q3"], r["maximum"], r["mean"], r["best"]]
                for r in entry[f"convergence_{objective}"]
            ]
            _write_csv(out_dir / f"{label}_convergence_{objective}.csv", stat_header, rows)
        _write_csv(
            out_dir / f"{label}_pareto.csv",
            ["uid", "content_id", "s", "t"],
            [[m["uid"], m["content_id"], m["s"], m["t"]] for m in entry["pareto_front"]],
        )
        _write_csv(
            out_dir / f"{label}_terms.csv",
            ["generation", "term", "count"],
            [
                [row["generation"], term, count]
                for row in entry["annotation_frequencies"]
                for term, count in row["counts"].items()
            ],
        )
    (out_dir / "report.json").write_text(json.dumps(report, indent=1))
    return report


@dataclass
class ComparisonCell:
    mean_s: float
    mean_t: float
    best_s: bool = False
    best_t: bool = False


@dataclass
class ComparisonRow:
    benchmark_id: str
    seeds: tuple[int, ...]
    cells: dict[str, ComparisonCell]


def _method_factory(spec: str, sandbox_cfg: SandboxConfig | None):
    if spec in BASELINES:
        return lambda: get_baseline(spec)
    path = Path(spec)
    if path.suffix == ".py" and path.exists():
        if sandbox_cfg is None:
            raise UsageError("evaluating a snippet file needs a sandbox configuration")
        snippet = SnippetSpec.from_source(path.read_text())
        return lambda: SnippetTransferModel(snippet, sandbox_cfg)
    raise UsageError(
        f"unknown method {spec!r}; use a registered name ({', '.join(sorted(BASELINES))}) "
        "or a path to a snippet file"
    )


def evaluate_method(
    benchmark: BenchmarkInstance,
    calibration: CalibrationTable,
    emto_config: EmtoConfig,
    method: str,
    seed: int,
    sandbox_cfg: SandboxConfig | None = None,
) -> EmtoRunResult:
    """One full run of one named method (or snippet file) on one seed."""
    factory = _method_factory(method, sandbox_cfg)
    return run_emto(benchmark, emto_config, factory(), calibration, seed)


def run_comparison(
    benchmark: BenchmarkInstance,
    calibration: CalibrationTable,
    emto_config: EmtoConfig,
    methods: list[str],
    seeds: list[int],
    sandbox_cfg: SandboxConfig | None = None,
    max_workers: int = 1,
) -> ComparisonRow:
    """Mean (s, t) per method over the given seeds, with per-column winners."""
    if not seeds:
        raise UsageError("comparison needs at least one seed")
    if not methods:
        raise UsageError("comparison needs at least one method")

    jobs = [(method, seed) for method in methods for seed in seeds]

    def one(job):
        method, seed = job
        try:
            result = evaluate_method(benchmark, calibration, emto_config, method, seed, sandbox_cfg)
            return method, seed, result.s, result.t
        except TransferFailedError:
            s, t = penalty_objectives()
            return method, seed, s, t

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(one, jobs))
    else:
        outcomes = [one(job) for job in jobs]

    cells = {}
    for method in methods:
        ss = [s for m, _, s, _ in outcomes if m == method]
        ts = [t for m, _, _, t in outcomes if m == method]
        cells[method] = ComparisonCell(mean_s=float(np.mean(ss)), mean_t=float(np.mean(ts)))
    best_s = min(c.mean_s for c in cells.values())
    best_t = min(c.mean_t for c in cells.values())
    for cell in cells.values():
        cell.best_s = cell.mean_s == best_s
        cell.best_t = cell.mean_t == best_t
    return ComparisonRow(benchmark_id=benchmark.id, seeds=tuple(seeds), cells=cells)


def comparison_to_csv(rows: list[ComparisonRow], path: str | Path) -> None:
    methods = list(rows[0].cells) if rows else []
    header = ["benchmark"]
    for m in methods:
        header += [f"{m}_nor_v", f"{m}_time", f"{m}_best_nor_v", f"{m}_best_time"]
    body = []
    for row in rows:
        line = [row.benchmark_id]
        for m in methods:
            cell = row.cells[m]
            line += [f"{cell.mean_s:.6g}", f"{cell.mean_t:.6g}", int(cell.best_s), int(cell.best_t)]
        body.append(line)
    _write_csv(Path(path), header, body)


def comparison_to_text(rows: list[ComparisonRow]) -> str:
    """Aligned text table; per-column winners are wrapped in asterisks."""
    if not rows:
        return "(no comparison rows)\n"
    methods = list(rows[0].cells)
    headers = ["Benchmark"]
    for m in methods:
        headers += [f"{m} Nor.V", f"{m} Time"]
    table = [headers]
    for row in rows:
        line = [row.benchmark_id]
        for m in methods:
            cell = row.cells[m]
            s_txt = f"{cell.mean_s:.4f}"
            t_txt = f"{cell.mean_t:.4f}"
            line.append(f"*{s_txt}*" if cell.best_s else s_txt)
            line.append(f"*{t_txt}*" if cell.best_t else t_txt)
        table.append(line)
    widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
    out = []
    for r in table:
        out.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
    return "\n".join(out) + "\n"


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: str | Path, command: str, config: dict,
                   inputs: dict[str, str], outputs: list[str], seeds: list[int]) -> Path:
    """Record everything needed to re-execute a run from a fresh checkout."""
    import time as _time

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "code_version": __version__,
        "config": config,
        "inputs": {name: {"path": p, "sha256": file_sha256(p)} for name, p in inputs.items() if p},
        "outputs": outputs,
        "seeds": seeds,
        "created_unix_time": _time.time(),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path

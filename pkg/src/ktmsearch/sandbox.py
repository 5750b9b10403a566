"""Isolated execution of candidate transfer-model code.

Each invocation spawns one runner child process, writes a single framed
request on its stdin, reads a single framed response from its stdout, and
classifies whatever happens into exactly one verdict.  Nothing a snippet
does (hang, crash, flood, garbage, giant output) can corrupt the host.

Wire framing: a decimal byte length on its own line, then that many bytes of
UTF-8 JSON, then a newline.  Request:
``{"protocol_version": 1, "nt": int, "seed": int, "tasks": [{"population":
[[f]], "fitness": [f], "lower": [f], "upper": [f]}]}``.  Response:
``{"transfers": [[[f]]]}`` with an optional numeric ``work_units`` field.
Errors are reported on stderr as one JSON line ``{"code": str, "message":
str}``; exit codes: 0 ok, 2 snippet compile failure, 3 snippet runtime
failure, 4 malformed request.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import re
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import TransferResult, TransferSnapshot
from .errors import ConfigurationError, TransferFailedError

PROTOCOL_VERSION = 1

_STDERR_CAP = 256 * 1024

DENY_TOKENS = (
    "subprocess",
    "os.system",
    "os.popen",
    "os.exec",
    "os.fork",
    "os.spawn",
    "os.remove",
    "os.unlink",
    "os.rmdir",
    "os.rename",
    "shutil",
    "socket",
    "urllib",
    "requests",
    "httpx",
    "http.client",
    "ftplib",
    "smtplib",
    "open(",
    "io.open",
    "pathlib",
    "__import__",
    "importlib",
    "exec(",
    "eval(",
    "compile(",
    "ctypes",
    "multiprocessing",
    "pty",
    "signal",
)

_DEF_RE = re.compile(r"^\s*def\s+LLMTransfer\s*\(", re.MULTILINE)


def extract_annotation(source: str) -> str:
    """Pull the text of the leading 'Design Thought' annotation, if any.

    Supports a comment block (``# Design Thought: ...`` with continuation
    comment lines) and a function docstring opening with the same title.
    """
    marker = re.compile(r"Design\s+Thought\s*[:\-]?\s*(.*)", re.IGNORECASE)
    lines = source.splitlines()
    collected: list[str] = []
    in_block = False
    for line in lines:
        stripped = line.strip()
        if in_block:
            if stripped.startswith("#"):
                collected.append(stripped.lstrip("#").strip())
                continue
            break
        if stripped.startswith("#"):
            m = marker.search(stripped)
            if m:
                collected.append(m.group(1).strip())
                in_block = True
        elif stripped.startswith("def "):
            break
    if collected:
        return " ".join(part for part in collected if part).strip()
    doc = re.search(r'("""|\'\'\')(.*?)\1', source, re.DOTALL)
    if doc:
        m = marker.search(doc.group(2))
        if m:
            tail = doc.group(2)[m.start(1) :]
            return " ".join(tail.split()).strip()
    return ""


@dataclass(frozen=True)
class SnippetSpec:
    """A candidate transfer-model snippet and its extracted annotation."""

    source: str
    annotation: str
    language: str = "python"
    id: str = ""

    def __post_init__(self):
        if not self.source.strip():
            raise ValueError("snippet source is empty")
        if len(_DEF_RE.findall(self.source)) != 1:
            raise ValueError("snippet must define LLMTransfer exactly once")
        if not self.id:
            object.__setattr__(self, "id", content_hash(self.source))

    @classmethod
    def from_source(cls, source: str, language: str = "python") -> "SnippetSpec":
        return cls(source=source, annotation=extract_annotation(source), language=language)

    @property
    def has_annotation(self) -> bool:
        return bool(self.annotation)


def content_hash(source: str) -> str:
    return hashlib.sha256(source.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ScreenResult:
    passed: bool
    reason: str | None = None


def static_screen(source: str) -> ScreenResult:
    """Conservative token screen run before any execution; false rejects allowed."""
    if not source.strip():
        return ScreenResult(False, "no function: empty source")
    if len(_DEF_RE.findall(source)) == 0:
        return ScreenResult(False, "no function: missing a def LLMTransfer")
    if len(_DEF_RE.findall(source)) > 1:
        return ScreenResult(False, "multiple LLMTransfer definitions")
    for token in DENY_TOKENS:
        if token in source:
            return ScreenResult(False, f"deny-listed capability: {token!r}")
    return ScreenResult(True)


@dataclass(frozen=True)
class SandboxConfig:
    """How to launch and police the runner child process."""

    runner_cmd: tuple[str, ...]
    timeout_ms: int = 10_000
    grace_kill_ms: int = 1_000
    max_response_bytes: int = 64 * 1024 * 1024
    env_allowlist: tuple[str, ...] = ("PATH", "HOME", "LANG", "LC_ALL", "PYTHONPATH", "TMPDIR")

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ConfigurationError("timeout must be positive")
        if not self.runner_cmd:
            raise ConfigurationError("runner command is empty")
        object.__setattr__(self, "runner_cmd", tuple(self.runner_cmd))


@dataclass
class SandboxVerdict:
    """Exactly one classification per snippet execution."""

    kind: str  # ok | compile_error | runtime_error | timeout | protocol_error | shape_error
    message: str = ""
    result: TransferResult | None = None
    elapsed_ms: float = 0.0
    clip_count: int = 0
    work_units: float | None = None

    @property
    def is_ok(self) -> bool:
        return self.kind == "ok"

    def summary(self) -> dict:
        return {"kind": self.kind, "message": self.message[:500], "clip_count": self.clip_count}


def penalty_objectives() -> tuple[float, float]:
    """Objectives assigned to candidates whose evaluation failed."""
    return (math.inf, math.inf)


def _frame(payload: bytes) -> bytes:
    return str(len(payload)).encode("ascii") + b"\n" + payload + b"\n"


def _parse_frame(buf: bytes) -> bytes:
    newline = buf.find(b"\n")
    if newline < 0:
        raise ValueError("missing length header")
    try:
        length = int(buf[:newline])
    except ValueError:
        raise ValueError("length header is not a decimal integer") from None
    body = buf[newline + 1 : newline + 1 + length]
    if len(body) != length:
        raise ValueError(f"truncated frame: expected {length} bytes, got {len(body)}")
    return body


def build_request(snapshot: TransferSnapshot) -> dict:
    return {
        "protocol_version": PROTOCOL_VERSION,
        "nt": snapshot.nt,
        "seed": snapshot.seed,
        "tasks": [
            {
                "population": view.population.tolist(),
                "fitness": view.fitness.tolist(),
                "lower": view.lower.tolist(),
                "upper": view.upper.tolist(),
            }
            for view in snapshot.tasks
        ],
    }


class _NonFiniteToken(Exception):
    pass


def _reject_constants(token: str):
    raise _NonFiniteToken(token)


def _read_stderr_report(err: bytes) -> str:
    text = err.decode("utf-8", errors="replace")
    for line in reversed(text.strip().splitlines()):
        line = line.strip()
        if line.startswith("{"):
            try:
                doc = json.loads(line)
                return f"{doc.get('code', 'error')}: {doc.get('message', '')}"
            except json.JSONDecodeError:
                break
    return text[-500:].strip()


def _pump(stream, sink: bytearray, cap: int, overflow: threading.Event, drain: bool = False):
    """Read a pipe into sink up to cap bytes.

    With drain=True, keep reading past the cap and discard (a flooding child
    must not block on a full pipe); otherwise stop, flag overflow, and let
    the main thread kill the child.
    """
    try:
        while True:
            chunk = stream.read(65536)
            if not chunk:
                return
            remaining = cap - len(sink)
            if remaining <= 0 or len(chunk) > remaining:
                sink.extend(chunk[: max(0, remaining)])
                overflow.set()
                if not drain:
                    return
                continue
            sink.extend(chunk)
    except (OSError, ValueError):
        return


def execute_transfer(
    snippet: SnippetSpec,
    snapshot: TransferSnapshot,
    cfg: SandboxConfig,
) -> SandboxVerdict:
    """Run one transfer invocation of the snippet in a fresh child process."""
    payload = json.dumps(build_request(snapshot)).encode("utf-8")
    worst_case = snapshot.numt * snapshot.nt * snapshot.tasks[0].population.shape[1] * 32
    if cfg.max_response_bytes < worst_case:
        raise ConfigurationError(
            f"max_response_bytes {cfg.max_response_bytes} below worst-case payload {worst_case}"
        )
    env = {k: os.environ[k] for k in cfg.env_allowlist if k in os.environ}

    start = time.perf_counter()
    with tempfile.TemporaryDirectory(prefix="ktm-snippet-") as tmp:
        source_path = Path(tmp) / "snippet.py"
        source_path.write_text(snippet.source)
        try:
            proc = subprocess.Popen(
                list(cfg.runner_cmd) + [str(source_path)],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                env=env,
                cwd=tmp,
            )
        except FileNotFoundError as exc:
            raise ConfigurationError(f"runner command not found: {cfg.runner_cmd[0]}") from exc

        out_buf, err_buf = bytearray(), bytearray()
        out_overflow, err_overflow = threading.Event(), threading.Event()
        threads = [
            threading.Thread(
                target=_pump, args=(proc.stdout, out_buf, cfg.max_response_bytes, out_overflow)
            ),
            threading.Thread(
                target=_pump, args=(proc.stderr, err_buf, _STDERR_CAP, err_overflow, True)
            ),
        ]
        for th in threads:
            th.daemon = True
            th.start()

        def _writer():
            try:
                proc.stdin.write(_frame(payload))
                proc.stdin.close()
            except (BrokenPipeError, OSError):
                pass

        writer = threading.Thread(target=_writer, daemon=True)
        writer.start()

        deadline = start + cfg.timeout_ms / 1000.0
        timed_out = False
        oversized = False
        while True:
            try:
                proc.wait(timeout=0.02)
                break
            except subprocess.TimeoutExpired:
                if out_overflow.is_set():
                    oversized = True
                    _kill(proc, cfg.grace_kill_ms)
                    break
                if time.perf_counter() > deadline:
                    timed_out = True
                    _kill(proc, cfg.grace_kill_ms)
                    break
        for th in threads:
            th.join(timeout=2.0)
        writer.join(timeout=2.0)
        for stream in (proc.stdout, proc.stderr):
            try:
                stream.close()
            except OSError:
                pass
        proc.wait()
    elapsed_ms = (time.perf_counter() - start) * 1000.0

    if oversized or out_overflow.is_set():
        return SandboxVerdict(
            "protocol_error",
            f"response exceeded {cfg.max_response_bytes} bytes",
            elapsed_ms=elapsed_ms,
        )
    if timed_out:
        return SandboxVerdict("timeout", f"no response within {cfg.timeout_ms} ms", elapsed_ms=elapsed_ms)

    code = proc.returncode
    if code == 2:
        return SandboxVerdict("compile_error", _read_stderr_report(bytes(err_buf)), elapsed_ms=elapsed_ms)
    if code == 3:
        return SandboxVerdict("runtime_error", _read_stderr_report(bytes(err_buf)), elapsed_ms=elapsed_ms)
    if code == 4:
        return SandboxVerdict(
            "protocol_error", "runner rejected request: " + _read_stderr_report(bytes(err_buf)),
            elapsed_ms=elapsed_ms,
        )
    if code != 0:
        return SandboxVerdict(
            "runtime_error",
            f"runner exited with code {code}: {_read_stderr_report(bytes(err_buf))}",
            elapsed_ms=elapsed_ms,
        )
    return _classify_response(bytes(out_buf), snapshot, elapsed_ms)


def _kill(proc: subprocess.Popen, grace_ms: int):
    proc.terminate()
    try:
        proc.wait(timeout=grace_ms / 1000.0)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.wait()


def _classify_response(out: bytes, snapshot: TransferSnapshot, elapsed_ms: float) -> SandboxVerdict:
    try:
        body = _parse_frame(out)
    except ValueError as exc:
        return SandboxVerdict("protocol_error", f"bad response framing: {exc}", elapsed_ms=elapsed_ms)
    try:
        doc = json.loads(body.decode("utf-8"), parse_constant=_reject_constants)
    except _NonFiniteToken as exc:
        return SandboxVerdict(
            "protocol_error", f"non-finite value in response: {exc}", elapsed_ms=elapsed_ms
        )
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        return SandboxVerdict("protocol_error", f"response is not JSON: {exc}", elapsed_ms=elapsed_ms)
    if not isinstance(doc, dict) or "transfers" not in doc:
        return SandboxVerdict("protocol_error", "response lacks 'transfers'", elapsed_ms=elapsed_ms)

    transfers = doc["transfers"]
    numt = snapshot.numt
    dim = snapshot.tasks[0].population.shape[1]
    if not isinstance(transfers, list) or len(transfers) != numt:
        got = len(transfers) if isinstance(transfers, list) else type(transfers).__name__
        return SandboxVerdict(
            "shape_error", f"expected {numt} task groups, got {got}", elapsed_ms=elapsed_ms
        )
    solutions = []
    clip_count = 0
    for i, group in enumerate(transfers):
        try:
            arr = np.asarray(group, dtype=float)
        except (TypeError, ValueError):
            return SandboxVerdict(
                "protocol_error", f"task {i}: non-numeric transfer entries", elapsed_ms=elapsed_ms
            )
        if arr.shape != (snapshot.nt, dim):
            return SandboxVerdict(
                "shape_error",
                f"task {i}: expected shape ({snapshot.nt}, {dim}), got {arr.shape}",
                elapsed_ms=elapsed_ms,
            )
        if not np.all(np.isfinite(arr)):
            return SandboxVerdict(
                "protocol_error", f"task {i}: non-finite transfer values", elapsed_ms=elapsed_ms
            )
        view = snapshot.tasks[i]
        clipped = np.clip(arr, view.lower, view.upper)
        clip_count += int(np.sum(np.any(clipped != arr, axis=1)))
        solutions.append(clipped)

    work_units = doc.get("work_units")
    if work_units is not None and not isinstance(work_units, (int, float)):
        work_units = None
    result = TransferResult(solutions, work_units=float(work_units) if work_units is not None else None)
    return SandboxVerdict(
        "ok", result=result, elapsed_ms=elapsed_ms, clip_count=clip_count, work_units=result.work_units
    )


class SnippetTransferModel:
    """Adapter that lets the engine drive a sandboxed snippet as a transfer model."""

    def __init__(self, snippet: SnippetSpec, cfg: SandboxConfig):
        self.snippet = snippet
        self.cfg = cfg
        self.name = f"snippet:{snippet.id}"
        self.last_verdict: SandboxVerdict | None = None
        self.total_clip_count = 0

    def propose(self, snapshot: TransferSnapshot) -> TransferResult:
        verdict = execute_transfer(self.snippet, snapshot, self.cfg)
        self.last_verdict = verdict
        if not verdict.is_ok:
            raise TransferFailedError(
                f"snippet {self.snippet.id} failed: {verdict.kind}: {verdict.message}",
                verdict=verdict,
            )
        self.total_clip_count += verdict.clip_count
        return verdict.result

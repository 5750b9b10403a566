from __future__ import annotations

import contextlib
import json
import math
import random
import sys
import traceback
from pathlib import Path

import numpy as np

from . import EXIT_BAD_REQUEST, EXIT_COMPILE_ERROR, EXIT_OK, EXIT_RUNTIME_ERROR

FUNCTION_NAME = "LLMTransfer"


def _report(code: str, message: str) -> None:
    sys.stderr.write(json.dumps({"code": code, "message": message}) + "\n")
    sys.stderr.flush()


def _write_frame(doc: dict) -> None:
    payload = json.dumps(doc).encode("utf-8")
    out = sys.stdout.buffer
    out.write(str(len(payload)).encode("ascii") + b"\n")
    out.write(payload)
    out.write(b"\n")
    out.flush()


def _read_request() -> dict | None:
    stdin = sys.stdin.buffer
    header = stdin.readline()
    try:
        length = int(header)
    except ValueError:
        _report("bad-request", "missing or invalid length header")
        return None
    body = stdin.read(length)
    if len(body) != length:
        _report("bad-request", f"truncated request: expected {length} bytes, got {len(body)}")
        return None
    try:
        request = json.loads(body.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        _report("bad-request", f"request is not JSON: {exc}")
        return None
    if not isinstance(request, dict):
        _report("bad-request", "request is not a JSON object")
        return None
    for key in ("nt", "seed", "tasks"):
        if key not in request:
            _report("bad-request", f"request lacks {key!r}")
            return None
    if not isinstance(request["tasks"], list) or not request["tasks"]:
        _report("bad-request", "request carries no tasks")
        return None
    for i, task in enumerate(request["tasks"]):
        for key in ("population", "fitness", "lower", "upper"):
            if not isinstance(task, dict) or key not in task:
                _report("bad-request", f"task {i} lacks {key!r}")
                return None
    return request


def _load_function(source: str):
    """Compile the snippet and return its LLMTransfer, or (None, report tuple)."""
    namespace = {
        "__name__": "ktm_snippet",
        "np": np,
        "numpy": np,
        "math": math,
        "random": random,
    }
    try:
        code = compile(source, "<snippet>", "exec")
    except SyntaxError as exc:
        return None, ("compile-error", f"SyntaxError: {exc}")
    try:
        with contextlib.redirect_stdout(sys.stderr):
            exec(code, namespace)
    except Exception:
        return None, ("compile-error", f"module body raised: {traceback.format_exc(limit=5)}")
    fn = namespace.get(FUNCTION_NAME)
    if not callable(fn):
        return None, ("no-function", f"source does not define a callable {FUNCTION_NAME}")
    return fn, None


def _normalize(result, numt: int) -> list | None:
    try:
        groups = list(result)
    except TypeError:
        return None
    if len(groups) != numt:
        # Pass the wrong task count through; the host classifies the shape.
        pass
    normalized = []
    for group in groups:
        arr = np.asarray(group, dtype=float)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D group of solutions, got ndim {arr.ndim}")
        normalized.append(arr.tolist())
    return normalized


def main(argv: list[str]) -> int:
    if len(argv) != 2:
        _report("usage", "expected exactly one argument: the snippet source path")
        return EXIT_BAD_REQUEST
    try:
        source = Path(argv[1]).read_text()
    except OSError as exc:
        _report("usage", f"cannot read snippet source: {exc}")
        return EXIT_BAD_REQUEST

    request = _read_request()
    if request is None:
        return EXIT_BAD_REQUEST

    fn, failure = _load_function(source)
    if fn is None:
        _report(*failure)
        return EXIT_COMPILE_ERROR

    populations = [np.asarray(t["population"], dtype=float) for t in request["tasks"]]
    fitnesses = [np.asarray(t["fitness"], dtype=float) for t in request["tasks"]]
    lower_bounds = [np.asarray(t["lower"], dtype=float) for t in request["tasks"]]
    upper_bounds = [np.asarray(t["upper"], dtype=float) for t in request["tasks"]]
    nt = int(request["nt"])
    seed = int(request["seed"])

    try:
        with contextlib.redirect_stdout(sys.stderr):
            result = fn(populations, fitnesses, lower_bounds, upper_bounds, nt, seed)
        transfers = _normalize(result, len(populations))
        if transfers is None:
            raise TypeError(f"{FUNCTION_NAME} returned {type(result).__name__}, not per-task lists")
    except Exception:
        _report("snippet-runtime-error", traceback.format_exc(limit=10))
        return EXIT_RUNTIME_ERROR

    _write_frame({"transfers": transfers})
    return EXIT_OK


def entry() -> None:
    sys.exit(main(sys.argv))


if __name__ == "__main__":
    sys.exit(main(sys.argv))

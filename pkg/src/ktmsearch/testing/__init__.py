"""Fixture snippet corpus and the behavior-replay runner used by the test suite.

Each fixture is a real snippet source carrying a ``# sandbox-behavior:``
marker.  The replay runner acts the marked behavior out at the protocol
level without executing snippet code, so hostile fixtures (hangs, floods,
giant outputs) are exercised safely and deterministically.  The live
interpreter-side runner executes the very same sources and must be
classified identically; the expectations table below is the shared golden
reference for both.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass
from importlib import resources

from ..sandbox import SnippetSpec


@dataclass(frozen=True)
class Fixture:
    name: str
    filename: str
    expected_verdict: str  # sandbox verdict kind, or "screen-reject"
    screen_pass: bool = True
    replay_only: bool = False


FIXTURES: dict[str, Fixture] = {
    f.name: f
    for f in (
        Fixture("echo-best", "echo_best.py", "ok"),
        Fixture("elite-exchange", "elite_exchange.py", "ok"),
        Fixture("jitter", "jitter.py", "ok"),
        Fixture("stderr-flood", "stderr_flood.py", "ok"),
        Fixture("hang", "hang.py", "timeout"),
        Fixture("crash", "crash.py", "runtime_error"),
        Fixture("syntax-error", "syntax_error.py", "compile_error"),
        Fixture("nan-output", "nan_output.py", "protocol_error"),
        Fixture("wrong-shape", "wrong_shape.py", "shape_error"),
        Fixture("oversized", "oversized.py", "protocol_error"),
        Fixture("exit-nonzero", "exit_nonzero.py", "runtime_error"),
        Fixture("denylisted", "denylisted.py", "screen-reject", screen_pass=False),
        Fixture("garbage-stdout", "garbage_stdout.py", "protocol_error", replay_only=True),
    )
}

HOSTILE_FIXTURES = (
    "hang",
    "crash",
    "syntax-error",
    "nan-output",
    "wrong-shape",
    "oversized",
    "stderr-flood",
    "exit-nonzero",
    "denylisted",
    "garbage-stdout",
)


def fixture_source(name: str) -> str:
    fixture = FIXTURES[name]
    return (resources.files(__package__) / "snippets" / fixture.filename).read_text()


def load_fixture(name: str) -> SnippetSpec:
    return SnippetSpec.from_source(fixture_source(name))


def replay_runner_cmd() -> tuple[str, ...]:
    """Command prefix for the replay runner; the sandbox appends the source path."""
    return (sys.executable, "-m", "ktmsearch.testing.replay_runner")

from __future__ import annotations

import json
import math

import numpy as np
import psutil
import pytest

from ktmsearch.errors import ConfigurationError, TransferFailedError
from ktmsearch.sandbox import (
    SandboxConfig,
    SnippetSpec,
    SnippetTransferModel,
    build_request,
    execute_transfer,
    extract_annotation,
    penalty_objectives,
    static_screen,
    _classify_response,
)
from ktmsearch.testing import (
    FIXTURES,
    HOSTILE_FIXTURES,
    fixture_source,
    load_fixture,
    replay_runner_cmd,
)

from conftest import make_snapshot

VERDICT_KINDS = {"ok", "compile_error", "runtime_error", "timeout", "protocol_error", "shape_error"}


class TestSnippetSpec:
    def test_from_source_extracts_annotation(self):
        spec = load_fixture("echo-best")
        assert "elite" in spec.annotation
        assert spec.has_annotation

    def test_annotation_comment_block_continuation(self):
        source = (
            "# Design Thought: first line of the idea,\n"
            "# and a continuation line.\n"
            "def LLMTransfer(populations, fitnesses, lower_bounds, upper_bounds, nt, seed):\n"
            "    return []\n"
        )
        assert extract_annotation(source) == "first line of the idea, and a continuation line."

    def test_annotation_docstring_variant(self):
        source = (
            "def LLMTransfer(populations, fitnesses, lower_bounds, upper_bounds, nt, seed):\n"
            '    """Design Thought: docstring style annotation."""\n'
            "    return []\n"
        )
        assert "docstring style annotation" in extract_annotation(source)

    def test_missing_annotation_flagged(self):
        source = "def LLMTransfer(populations, fitnesses, lower_bounds, upper_bounds, nt, seed):\n    return []\n"
        spec = SnippetSpec.from_source(source)
        assert spec.annotation == "" and not spec.has_annotation

    def test_empty_source_rejected(self):
        with pytest.raises(ValueError):
            SnippetSpec.from_source("   \n")

    def test_two_definitions_rejected(self):
        source = (
            "def LLMTransfer(a, b, c, d, e, f):\n    return []\n"
            "def LLMTransfer(a, b, c, d, e, f):\n    return []\n"
        )
        with pytest.raises(ValueError):
            SnippetSpec.from_source(source)

    def test_content_hash_stability(self):
        a = load_fixture("echo-best")
        b = load_fixture("echo-best")
        assert a.id == b.id and len(a.id) == 16


class TestStaticScreen:
    def test_valid_fixture_passes(self):
        assert static_screen(fixture_source("echo-best")).passed

    def test_network_call_rejected(self):
        screen = static_screen(fixture_source("denylisted"))
        assert not screen.passed and "socket" in screen.reason

    def test_empty_source_rejected(self):
        screen = static_screen("")
        assert not screen.passed and "no function" in screen.reason

    def test_missing_function_rejected(self):
        screen = static_screen("x = 1\n")
        assert not screen.passed and "no function" in screen.reason

    @pytest.mark.parametrize("token", ["subprocess", "shutil", "open(", "__import__"])
    def test_capability_tokens_rejected(self, token):
        source = (
            f"# uses {token} somewhere\n"
            "def LLMTransfer(populations, fitnesses, lower_bounds, upper_bounds, nt, seed):\n"
            "    return []\n"
        )
        assert not static_screen(source).passed


class TestPenalty:
    def test_infinite_objectives(self):
        s, t = penalty_objectives()
        assert math.isinf(s) and math.isinf(t)


class TestFaultSuite:
    @pytest.mark.parametrize("name", sorted(FIXTURES))
    def test_every_fixture_gets_its_verdict(self, name, replay_sandbox):
        fixture = FIXTURES[name]
        source = fixture_source(name)
        screen = static_screen(source)
        if fixture.expected_verdict == "screen-reject":
            assert not screen.passed
            return
        assert screen.passed, screen.reason
        verdict = execute_transfer(load_fixture(name), make_snapshot(), replay_sandbox)
        assert verdict.kind == fixture.expected_verdict, verdict.message
        assert verdict.kind in VERDICT_KINDS

    def test_hostile_count(self):
        assert len(HOSTILE_FIXTURES) >= 8

    def test_ok_verdict_carries_result(self, replay_sandbox):
        snapshot = make_snapshot(numt=2, pop=6, dim=4, nt=3)
        verdict = execute_transfer(load_fixture("echo-best"), snapshot, replay_sandbox)
        assert verdict.is_ok
        assert len(verdict.result.solutions) == 2
        for view, sols in zip(snapshot.tasks, verdict.result.solutions):
            assert sols.shape == (3, 4)
            order = np.argsort(view.fitness, kind="stable")[:3]
            assert np.allclose(sols, view.population[order])

    def test_timeout_reaped_within_grace(self, replay_sandbox):
        import time

        start = time.perf_counter()
        verdict = execute_transfer(load_fixture("hang"), make_snapshot(), replay_sandbox)
        elapsed_ms = (time.perf_counter() - start) * 1000
        assert verdict.kind == "timeout"
        assert elapsed_ms < replay_sandbox.timeout_ms + replay_sandbox.grace_kill_ms + 2500

    def test_no_child_processes_survive(self, replay_sandbox):
        me = psutil.Process()
        for name in ("echo-best", "crash", "hang", "exit-nonzero", "garbage-stdout"):
            execute_transfer(load_fixture(name), make_snapshot(), replay_sandbox)
        children = [p for p in me.children(recursive=True) if p.is_running()]
        # Allow zombies already reaped to vanish; nothing should remain live.
        assert children == []

    def test_no_zombie_accumulation_over_many_executions(self, replay_sandbox):
        me = psutil.Process()
        snippet = load_fixture("echo-best")
        crash = load_fixture("crash")
        for i in range(50):
            execute_transfer(snippet if i % 2 else crash, make_snapshot(), replay_sandbox)
        zombies = [p for p in me.children(recursive=True)
                   if p.is_running() and p.status() == psutil.STATUS_ZOMBIE]
        assert zombies == []

    def test_runner_missing_is_configuration_error(self):
        cfg = SandboxConfig(runner_cmd=("/nonexistent/runner",), timeout_ms=500,
                            max_response_bytes=1 << 20)
        with pytest.raises(ConfigurationError):
            execute_transfer(load_fixture("echo-best"), make_snapshot(), cfg)

    def test_response_cap_must_cover_payload(self):
        cfg = SandboxConfig(runner_cmd=replay_runner_cmd(), timeout_ms=500,
                            max_response_bytes=64)
        with pytest.raises(ConfigurationError):
            execute_transfer(load_fixture("echo-best"), make_snapshot(), cfg)


class TestResponseClassification:
    def frame(self, doc) -> bytes:
        payload = json.dumps(doc).encode()
        return str(len(payload)).encode() + b"\n" + payload + b"\n"

    def test_out_of_bounds_clipped_and_counted(self):
        snapshot = make_snapshot(numt=1, pop=4, dim=2, nt=2, lower=-1.0, upper=1.0)
        doc = {"transfers": [[[2.0, 0.0], [0.5, -3.0]]]}
        verdict = _classify_response(self.frame(doc), snapshot, 0.0)
        assert verdict.is_ok
        assert verdict.clip_count == 2
        sols = verdict.result.solutions[0]
        assert np.all(sols >= -1.0) and np.all(sols <= 1.0)

    def test_infinity_literal_rejected(self):
        snapshot = make_snapshot(numt=1, pop=4, dim=2, nt=1)
        body = b'{"transfers": [[[1e999, 0.0]]]}'
        framed = str(len(body)).encode() + b"\n" + body + b"\n"
        verdict = _classify_response(framed, snapshot, 0.0)
        assert verdict.kind == "protocol_error"

    def test_work_units_passthrough(self):
        snapshot = make_snapshot(numt=1, pop=4, dim=2, nt=1)
        doc = {"transfers": [[[0.1, 0.2]]], "work_units": 12.5}
        verdict = _classify_response(self.frame(doc), snapshot, 0.0)
        assert verdict.is_ok and verdict.work_units == 12.5

    def test_missing_transfers_key(self):
        snapshot = make_snapshot(numt=1, pop=4, dim=2, nt=1)
        verdict = _classify_response(self.frame({"other": 1}), snapshot, 0.0)
        assert verdict.kind == "protocol_error"


class TestSnippetTransferModel:
    def test_ok_path_returns_result(self, replay_sandbox):
        model = SnippetTransferModel(load_fixture("echo-best"), replay_sandbox)
        result = model.propose(make_snapshot())
        assert len(result.solutions) == 2
        assert model.last_verdict.is_ok

    def test_failure_raises_with_verdict(self, replay_sandbox):
        model = SnippetTransferModel(load_fixture("crash"), replay_sandbox)
        with pytest.raises(TransferFailedError) as err:
            model.propose(make_snapshot())
        assert err.value.verdict.kind == "runtime_error"


class TestRequestFormat:
    def test_request_fields(self):
        snapshot = make_snapshot(numt=2, pop=3, dim=2, nt=2, seed=77)
        request = build_request(snapshot)
        assert request["protocol_version"] == 1
        assert request["nt"] == 2 and request["seed"] == 77
        assert len(request["tasks"]) == 2
        task = request["tasks"][0]
        assert set(task) == {"population", "fitness", "lower", "upper"}
        assert len(task["population"]) == 3 and len(task["population"][0]) == 2

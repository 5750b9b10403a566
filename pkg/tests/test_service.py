from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np
import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore", DeprecationWarning)
    from fastapi.testclient import TestClient

from ktmsearch import __version__
from ktmsearch.service import create_app

from test_search import write_playlist


@pytest.fixture
def client():
    return TestClient(create_app(max_workers=2))


def wait_job(client, job_id, timeout=120.0):
    import time

    deadline = time.time() + timeout
    while time.time() < deadline:
        job = client.get(f"/jobs/{job_id}").json()
        if job["state"] in ("succeeded", "failed"):
            return job
        time.sleep(0.05)
    raise TimeoutError(job_id)


class TestHealth:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body == {"status": "ok", "version": __version__}


class TestBenchmarks:
    def test_generate_preset(self, client, tmp_path):
        out = tmp_path / "b.json"
        resp = client.post(
            "/benchmarks/generate",
            json={"preset": "B3-mini", "seed": 4, "out_path": str(out)},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["numt"] == 5 and body["dim"] == 10
        assert out.exists()
        assert Path(body["manifest_path"]).exists()

    def test_unknown_preset_is_422(self, client, tmp_path):
        resp = client.post(
            "/benchmarks/generate",
            json={"preset": "B77", "seed": 4, "out_path": str(tmp_path / "x.json")},
        )
        assert resp.status_code == 422

    def test_validation_error_is_422(self, client):
        resp = client.post("/benchmarks/generate", json={"seed": "not-an-int"})
        assert resp.status_code == 422


class TestJobs:
    def test_calibrate_job_lifecycle(self, client, tmp_path):
        bench_path = tmp_path / "b.json"
        client.post("/benchmarks/generate",
                    json={"preset": "B1-mini", "seed": 0, "out_path": str(bench_path)})
        resp = client.post(
            "/jobs/calibrate",
            json={
                "benchmark_path": str(bench_path),
                "seeds": [0, 1],
                "engine": {"pop_size": 12, "generations": 8, "transfer_interval": 4, "nt": 2},
                "out_path": str(tmp_path / "calib.json"),
            },
        )
        assert resp.status_code == 200
        job = resp.json()
        assert job["state"] in ("queued", "running")
        done = wait_job(client, job["id"])
        assert done["state"] == "succeeded", done
        assert len(done["result"]["f_min"]) == 5
        listed = client.get("/jobs").json()
        assert any(j["id"] == job["id"] for j in listed)

    def test_unknown_job_is_404(self, client):
        assert client.get("/jobs/doesnotexist").status_code == 404

    def test_failed_job_reports_error(self, client, tmp_path):
        resp = client.post(
            "/jobs/calibrate",
            json={
                "benchmark_path": str(tmp_path / "missing.json"),
                "seeds": [0],
                "out_path": str(tmp_path / "c.json"),
            },
        )
        done = wait_job(client, resp.json()["id"])
        assert done["state"] == "failed"
        assert "missing.json" in done["error"]

    def test_search_job_with_synthetic_evaluator(self, client, tmp_path):
        bench_path = tmp_path / "b.json"
        client.post("/benchmarks/generate",
                    json={"preset": "B1-mini", "seed": 0, "out_path": str(bench_path)})
        calib = client.post(
            "/jobs/calibrate",
            json={
                "benchmark_path": str(bench_path),
                "seeds": [0],
                "engine": {"pop_size": 12, "generations": 8, "transfer_interval": 4, "nt": 2},
                "out_path": str(tmp_path / "calib.json"),
            },
        )
        wait_job(client, calib.json()["id"])

        rng = np.random.default_rng(0)
        pairs = [(round(float(rng.uniform(0.2, 1.0)), 4), round(float(rng.uniform(1, 5)), 4))
                 for _ in range(120)]
        playlist = tmp_path / "playlist"
        write_playlist(playlist, pairs)

        resp = client.post(
            "/jobs/search",
            json={
                "benchmark_path": str(bench_path),
                "calibration_path": str(tmp_path / "calib.json"),
                "out_dir": str(tmp_path / "run"),
                "n_ktm": 4,
                "g_ktm": 2,
                "master_seed": 3,
                "evaluator": "synthetic",
                "llm": {"backend": "scripted", "playlist_dir": str(playlist)},
            },
        )
        done = wait_job(client, resp.json()["id"])
        assert done["state"] == "succeeded", done
        result = done["result"]
        assert result["generation"] == 2
        assert result["headline"] is not None
        assert Path(result["events_path"]).exists()
        assert Path(result["checkpoint_path"]).exists()

    def test_report_endpoint(self, client, tmp_path):
        log = tmp_path / "events.jsonl"
        log.write_text(json.dumps({"seq": 0, "gen": 0, "type": "run_start", "data": {}}) + "\n")
        resp = client.post("/reports", json={"log_paths": [str(log)],
                                             "out_dir": str(tmp_path / "rep")})
        assert resp.status_code == 200
        assert Path(resp.json()["report_path"]).exists()

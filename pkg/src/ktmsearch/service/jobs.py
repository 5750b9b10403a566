"""Background job execution for long-running campaigns."""
from __future__ import annotations

import threading
import time
import traceback
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field


@dataclass
class JobRecord:
    id: str
    kind: str
    state: str = "queued"
    submitted_unix: float = field(default_factory=time.time)
    started_unix: float | None = None
    finished_unix: float | None = None
    result: dict | None = None
    error: str | None = None


class JobManager:
    """Thread-pool job registry with polling semantics."""

    def __init__(self, max_workers: int = 2):
        self._executor = ThreadPoolExecutor(max_workers=max_workers)
        self._jobs: dict[str, JobRecord] = {}
        self._lock = threading.Lock()

    def submit(self, kind: str, fn) -> JobRecord:
        record = JobRecord(id=uuid.uuid4().hex[:12], kind=kind)
        with self._lock:
            self._jobs[record.id] = record

        def run():
            record.state = "running"
            record.started_unix = time.time()
            try:
                record.result = fn()
                record.state = "succeeded"
            except Exception as exc:
                record.error = f"{type(exc).__name__}: {exc}"
                record.state = "failed"
                record.result = {"traceback": traceback.format_exc(limit=20)}
            finally:
                record.finished_unix = time.time()

        self._executor.submit(run)
        return record

    def get(self, job_id: str) -> JobRecord | None:
        with self._lock:
            return self._jobs.get(job_id)

    def list(self) -> list[JobRecord]:
        with self._lock:
            return sorted(self._jobs.values(), key=lambda r: r.submitted_unix)

    def wait(self, job_id: str, timeout: float | None = None, poll: float = 0.05) -> JobRecord:
        deadline = None if timeout is None else time.time() + timeout
        while True:
            record = self.get(job_id)
            if record is None:
                raise KeyError(job_id)
            if record.state in ("succeeded", "failed"):
                return record
            if deadline is not None and time.time() > deadline:
                raise TimeoutError(f"job {job_id} still {record.state}")
            time.sleep(poll)

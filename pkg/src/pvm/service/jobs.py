"""Background job registry: long-running work behind a polling API."""

from __future__ import annotations

import threading
import traceback
import uuid
from dataclasses import dataclass, field


@dataclass
class Job:
    job_id: str
    kind: str
    state: str = "pending"        # pending | running | done | error
    progress: dict = field(default_factory=dict)
    result: dict | None = None
    error: str | None = None


class JobRegistry:
    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()

    def submit(self, kind: str, fn) -> str:
        """Run fn(progress_setter) in a daemon thread; returns the job id."""
        job = Job(job_id=uuid.uuid4().hex[:12], kind=kind)
        with self._lock:
            self._jobs[job.job_id] = job

        def set_progress(p: dict):
            with self._lock:
                job.progress = dict(p)

        def run():
            with self._lock:
                job.state = "running"
            try:
                result = fn(set_progress)
                with self._lock:
                    job.result = result
                    job.state = "done"
            except Exception as e:
                with self._lock:
                    job.error = f"{type(e).__name__}: {e}"
                    job.state = "error"
                traceback.print_exc()

        threading.Thread(target=run, daemon=True).start()
        return job.job_id

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)

    def list(self) -> list[Job]:
        with self._lock:
            return list(self._jobs.values())

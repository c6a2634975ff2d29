"""Job-oriented HTTP service around the experiment runner.

Experiments run minutes, not milliseconds, so the API is submit-and-poll:
POST /jobs validates the config and queues the run, GET /jobs/{id} reports
state and, once done, the output manifest. A single worker thread executes
jobs in submission order; training is single-core numpy, so more workers
would only fight over the same core.
"""

import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Literal, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict

from .config import build_config, parse_flat_text
from .errors import DannlabError
from .runner import run_experiment


class JobRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["sweep", "compare", "visualize", "gen-data"]
    config_text: Optional[str] = None   # flat key=value document
    config: Optional[dict] = None       # nested dict alternative
    seed: Optional[int] = None
    out_dir: Optional[str] = None
    trials: Optional[int] = None


class JobInfo(BaseModel):
    id: str
    kind: str
    state: Literal["queued", "running", "done", "failed"]
    error: Optional[str] = None
    result: Optional[dict] = None


class JobRegistry:
    def __init__(self):
        self._lock = threading.Lock()
        self._jobs = {}
        self._order = []
        self._counter = 0
        self._executor = ThreadPoolExecutor(max_workers=1)

    def submit(self, kind, experiment_config) -> JobInfo:
        with self._lock:
            self._counter += 1
            info = JobInfo(id=f"job-{self._counter}", kind=kind, state="queued")
            self._jobs[info.id] = info
            self._order.append(info.id)
        self._executor.submit(self._run, info.id, experiment_config)
        return info

    def _run(self, job_id, experiment_config):
        self._update(job_id, state="running")
        try:
            result = run_experiment(experiment_config)
        except DannlabError as exc:
            self._update(job_id, state="failed", error=str(exc))
        except Exception as exc:  # surface unexpected failures to the poller
            self._update(job_id, state="failed", error=f"{type(exc).__name__}: {exc}")
        else:
            self._update(job_id, state="done", result=result)

    def _update(self, job_id, **fields):
        with self._lock:
            info = self._jobs[job_id]
            self._jobs[job_id] = info.model_copy(update=fields)

    def get(self, job_id) -> Optional[JobInfo]:
        with self._lock:
            return self._jobs.get(job_id)

    def all(self):
        with self._lock:
            return [self._jobs[i] for i in self._order]


def create_app() -> FastAPI:
    app = FastAPI(title="dannlab", description="adversarial domain-adaptation experiment runner")
    registry = JobRegistry()
    app.state.registry = registry

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/jobs", response_model=JobInfo)
    def submit_job(request: JobRequest):
        if request.config_text is not None and request.config is not None:
            raise HTTPException(status_code=400, detail="pass config_text or config, not both")
        try:
            nested = parse_flat_text(request.config_text) if request.config_text is not None \
                else dict(request.config or {})
            experiment_config = build_config(
                nested, kind=request.kind, seed=request.seed,
                out_dir=request.out_dir, trials=request.trials,
            )
        except DannlabError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return registry.submit(request.kind, experiment_config)

    @app.get("/jobs", response_model=list[JobInfo])
    def list_jobs():
        return registry.all()

    @app.get("/jobs/{job_id}", response_model=JobInfo)
    def get_job(job_id: str):
        info = registry.get(job_id)
        if info is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}")
        return info

    return app


app = create_app()

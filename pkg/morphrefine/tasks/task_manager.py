import logging
import multiprocessing as mp
import time
import traceback
import uuid
from datetime import datetime, timedelta
from enum import Enum
from multiprocessing import Manager, Process
from typing import Any, Dict, List, Optional

from fastapi import HTTPException
from pydantic import BaseModel, ValidationError

from morphrefine.errors import RefineError
from morphrefine.tasks.jobs import JOB_TYPES, run_job

logger = logging.getLogger(__name__)


class JobStatus(str, Enum):
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"
    CANCELLED = "CANCELLED"


class JobInfo(BaseModel):
    job_id: str
    job_type: str
    status: JobStatus
    created_at: datetime
    started_at: Optional[datetime] = None
    completed_at: Optional[datetime] = None
    parameters: Dict[str, Any] = {}
    error: Optional[Dict[str, Any]] = None
    duration_seconds: Optional[float] = None


class JobResult(BaseModel):
    job_id: str
    job_type: str
    status: JobStatus
    result: Optional[Dict[str, Any]] = None
    completed_at: Optional[datetime] = None
    duration_seconds: Optional[float] = None


def _update(registry, job_id: str, **fields) -> None:
    info = dict(registry[job_id])
    info.update(fields)
    registry[job_id] = info


def _execute_job(job_id: str, job_type: str, parameters: Dict[str, Any], registry) -> None:
    """Worker process body: run the job and record its outcome in the shared registry."""
    start_time = time.time()
    _update(registry, job_id, status=JobStatus.RUNNING.value, started_at=datetime.now().isoformat())
    logger.info(f"Job {job_id} ({job_type}) started")

    try:
        result = run_job(job_type, parameters)
        _update(registry, job_id,
                status=JobStatus.COMPLETED.value,
                completed_at=datetime.now().isoformat(),
                result=result,
                duration_seconds=round(time.time() - start_time, 2))
        logger.info(f"Job {job_id} completed")
    except RefineError as e:
        logger.error(f"Job {job_id} failed: {e.message}")
        _update(registry, job_id,
                status=JobStatus.FAILED.value,
                completed_at=datetime.now().isoformat(),
                error=e.to_dict(),
                duration_seconds=round(time.time() - start_time, 2))
    except Exception as e:
        logger.error(f"Job {job_id} failed: {e}")
        logger.error(f"Traceback: {traceback.format_exc()}")
        _update(registry, job_id,
                status=JobStatus.FAILED.value,
                completed_at=datetime.now().isoformat(),
                error={"error_code": "internal_error", "message": str(e), "details": None, "suggestion": None},
                duration_seconds=round(time.time() - start_time, 2))


class ProcessManager:
    """Runs jobs in worker processes and tracks them in a shared registry."""

    def __init__(self, max_concurrent: Optional[int] = None, retention_seconds: int = 3600):
        self.manager = Manager()
        self.registry = self.manager.dict()
        self.active: Dict[str, Process] = {}
        self.max_concurrent = max_concurrent or mp.cpu_count()
        self.retention_seconds = retention_seconds

    def active_count(self) -> int:
        return len([p for p in self.active.values() if p.is_alive()])

    def start_job(self, job_type: str, parameters: Dict[str, Any]) -> str:
        if job_type not in JOB_TYPES:
            raise HTTPException(status_code=400,
                                detail=f"Invalid job type: {job_type}. Available types: {sorted(JOB_TYPES)}")
        try:
            validated = JOB_TYPES[job_type].params(**parameters)
        except ValidationError as e:
            raise HTTPException(status_code=422, detail=e.errors(include_url=False, include_context=False))

        if self.active_count() >= self.max_concurrent:
            raise HTTPException(status_code=429, detail="Maximum concurrent jobs reached")

        job_id = str(uuid.uuid4())
        params = validated.model_dump()
        self.registry[job_id] = {
            "job_id": job_id,
            "job_type": job_type,
            "status": JobStatus.PENDING.value,
            "created_at": datetime.now().isoformat(),
            "started_at": None,
            "completed_at": None,
            "parameters": params,
            "result": None,
            "error": None,
            "duration_seconds": None,
        }
        process = Process(target=_execute_job, args=(job_id, job_type, params, self.registry))
        process.start()
        self.active[job_id] = process
        logger.info(f"Started job {job_id} ({job_type}) as pid {process.pid}")
        return job_id

    def _info(self, job_id: str) -> Dict[str, Any]:
        if job_id not in self.registry:
            raise HTTPException(status_code=404, detail="Job not found")
        info = dict(self.registry[job_id])
        process = self.active.get(job_id)
        if info["status"] == JobStatus.RUNNING.value and process is not None and not process.is_alive():
            # worker died without recording an outcome
            info.update(status=JobStatus.FAILED.value, completed_at=datetime.now().isoformat(),
                        error={"error_code": "worker_exited", "message": f"exit code {process.exitcode}",
                               "details": None, "suggestion": None})
            self.registry[job_id] = info
        return info

    def get_job(self, job_id: str) -> JobInfo:
        info = self._info(job_id)
        info.pop("result", None)
        return JobInfo(**info)

    def get_result(self, job_id: str) -> JobResult:
        info = self._info(job_id)
        status = JobStatus(info["status"])
        if status in (JobStatus.PENDING, JobStatus.RUNNING):
            raise HTTPException(status_code=202, detail=f"Job {status.value.lower()}")
        if status == JobStatus.FAILED:
            raise HTTPException(status_code=500, detail=info["error"])
        if status == JobStatus.CANCELLED:
            raise HTTPException(status_code=410, detail="Job was cancelled")
        return JobResult(job_id=job_id, job_type=info["job_type"], status=status, result=info["result"],
                         completed_at=info["completed_at"], duration_seconds=info["duration_seconds"])

    def cancel_job(self, job_id: str) -> bool:
        self._info(job_id)
        process = self.active.get(job_id)
        if process is None or not process.is_alive():
            return False
        process.terminate()
        process.join(timeout=5)
        if process.is_alive():
            process.kill()
        _update(self.registry, job_id, status=JobStatus.CANCELLED.value, completed_at=datetime.now().isoformat())
        logger.info(f"Cancelled job {job_id}")
        return True

    def list_jobs(self, status_filter: Optional[JobStatus] = None, limit: int = 100, offset: int = 0) -> List[JobInfo]:
        jobs = []
        for job_id in list(self.registry.keys()):
            info = self._info(job_id)
            if status_filter and info["status"] != status_filter.value:
                continue
            info.pop("result", None)
            jobs.append(JobInfo(**info))
        jobs.sort(key=lambda j: j.created_at, reverse=True)
        return jobs[offset:offset + limit]

    def cleanup(self) -> None:
        """Reap finished workers and drop registry entries older than the retention window."""
        for job_id in [j for j, p in self.active.items() if not p.is_alive()]:
            self.active.pop(job_id).join(timeout=1)

        threshold = datetime.now() - timedelta(seconds=self.retention_seconds)
        for job_id, info in list(self.registry.items()):
            if info.get("completed_at") and datetime.fromisoformat(info["completed_at"]) < threshold:
                del self.registry[job_id]

    def shutdown(self) -> None:
        for process in self.active.values():
            if process.is_alive():
                process.terminate()
                process.join(timeout=5)
        self.manager.shutdown()

import asyncio
import logging
from contextlib import asynccontextmanager
from typing import Any, Dict, List, Optional

import uvicorn
from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from morphrefine import __version__
from morphrefine.errors import RefineError
from morphrefine.tasks.jobs import JOB_TYPES
from morphrefine.tasks.task_manager import JobInfo, JobResult, JobStatus, ProcessManager

logger = logging.getLogger(__name__)

CLEANUP_INTERVAL_SECONDS = 300


# ============================================================================
# Response models
# ============================================================================

class APIError(BaseModel):
    error_code: str
    message: str
    details: Optional[str] = None
    suggestion: Optional[str] = None


class APIResponse(BaseModel):
    success: bool
    data: Optional[Any] = None
    error: Optional[APIError] = None
    metadata: Optional[Dict[str, Any]] = None


class JobTypeSchema(BaseModel):
    name: str
    description: str
    parameters: Dict[str, Any]


# ============================================================================
# Application
# ============================================================================

def create_app(manager: Optional[ProcessManager] = None) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        logger.info("Starting job service")
        app.state.manager = manager or ProcessManager()

        async def cleanup_task():
            while True:
                await asyncio.sleep(CLEANUP_INTERVAL_SECONDS)
                try:
                    app.state.manager.cleanup()
                except Exception as e:
                    logger.error(f"Cleanup failed: {e}")

        task = asyncio.create_task(cleanup_task())
        yield
        task.cancel()
        if manager is None:
            app.state.manager.shutdown()
        logger.info("Job service stopped")

    app = FastAPI(title="morphrefine jobs", description="Batch refinement and evaluation jobs",
                  version=__version__, lifespan=lifespan)

    @app.exception_handler(RefineError)
    async def refine_error_handler(request: Request, exc: RefineError):
        body = APIResponse(success=False, error=APIError(**exc.to_dict()))
        return JSONResponse(status_code=400, content=body.model_dump())

    @app.get("/health")
    async def health_check():
        return {"status": "healthy", "version": __version__}

    @app.get("/jobs/types", response_model=APIResponse)
    async def job_types():
        schemas = [JobTypeSchema(name=job.name, description=job.description,
                                 parameters=job.params.model_json_schema())
                   for job in JOB_TYPES.values()]
        return APIResponse(success=True, data=[s.model_dump() for s in schemas])

    @app.post("/jobs/{job_type}", response_model=APIResponse)
    async def submit_job(job_type: str, parameters: Dict[str, Any]):
        job_id = app.state.manager.start_job(job_type, parameters)
        return APIResponse(success=True, data={"job_id": job_id, "status": JobStatus.PENDING.value})

    @app.get("/jobs/{job_id}", response_model=JobInfo)
    async def job_status(job_id: str):
        return app.state.manager.get_job(job_id)

    @app.get("/jobs/{job_id}/result", response_model=JobResult)
    async def job_result(job_id: str):
        return app.state.manager.get_result(job_id)

    @app.delete("/jobs/{job_id}", response_model=APIResponse)
    async def cancel_job(job_id: str):
        cancelled = app.state.manager.cancel_job(job_id)
        return APIResponse(success=True, data={"job_id": job_id, "cancelled": cancelled})

    @app.get("/jobs", response_model=List[JobInfo])
    async def list_jobs(status: Optional[JobStatus] = None,
                        limit: int = Query(100, ge=1, le=1000),
                        offset: int = Query(0, ge=0)):
        return app.state.manager.list_jobs(status, limit, offset)

    return app


def serve(host: str = "127.0.0.1", port: int = 8000) -> None:
    uvicorn.run(create_app(), host=host, port=port)

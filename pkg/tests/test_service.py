import time

import pytest
from fastapi.testclient import TestClient

from morphrefine.main import create_app
from morphrefine.tasks.jobs import JOB_TYPES, run_job
from morphrefine.tasks.task_manager import ProcessManager

POLL_SECONDS = 120


@pytest.fixture(scope="module")
def manager():
    manager = ProcessManager(max_concurrent=2)
    yield manager
    manager.shutdown()


@pytest.fixture(scope="module")
def client(manager):
    with TestClient(create_app(manager)) as client:
        yield client


def _wait(client, job_id):
    deadline = time.time() + POLL_SECONDS
    while time.time() < deadline:
        status = client.get(f"/jobs/{job_id}").json()["status"]
        if status in ("COMPLETED", "FAILED", "CANCELLED"):
            return status
        time.sleep(0.2)
    raise AssertionError(f"job {job_id} still {status} after {POLL_SECONDS}s")


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


def test_job_types(client):
    body = client.get("/jobs/types").json()
    assert body["success"]
    names = {job["name"] for job in body["data"]}
    assert names == set(JOB_TYPES)
    assert "data" in next(j for j in body["data"] if j["name"] == "boundary-hist")["parameters"]["properties"]


def test_unknown_job_type(client):
    response = client.post("/jobs/nope", json={})
    assert response.status_code == 400


def test_invalid_parameters(client):
    response = client.post("/jobs/boundary-hist", json={"num_labels": 2})
    assert response.status_code == 422


def test_unknown_job(client):
    assert client.get("/jobs/does-not-exist").status_code == 404
    assert client.get("/jobs/does-not-exist/result").status_code == 404


def test_boundary_histogram_job(client, dataset_dir):
    response = client.post("/jobs/boundary-hist", json={"data": str(dataset_dir), "num_labels": 2})
    assert response.status_code == 200
    job_id = response.json()["data"]["job_id"]

    assert _wait(client, job_id) == "COMPLETED"
    result = client.get(f"/jobs/{job_id}/result").json()
    rows = result["result"]["rows"]
    assert rows and set(rows[0]) == {"distance", "count", "frequency"}
    assert any(job["job_id"] == job_id for job in client.get("/jobs").json())
    assert client.delete(f"/jobs/{job_id}").json()["data"]["cancelled"] is False


def test_failing_job_reports_the_error(client, tmp_path):
    response = client.post("/jobs/boundary-hist", json={"data": str(tmp_path / "missing"), "num_labels": 2})
    job_id = response.json()["data"]["job_id"]
    assert _wait(client, job_id) == "FAILED"
    info = client.get(f"/jobs/{job_id}").json()
    assert info["error"]["error_code"] == "raster_format"
    assert client.get(f"/jobs/{job_id}/result").status_code == 500


def test_status_filter(client):
    failed = client.get("/jobs", params={"status": "FAILED"}).json()
    assert all(job["status"] == "FAILED" for job in failed)


def test_run_job_in_process(dataset_dir):
    result = run_job("evaluate", {"pred": str(dataset_dir / "gt"), "gt": str(dataset_dir / "gt"), "num_labels": 2})
    assert result["overall_iou"] == 100.0
    assert result["evaluated"] == ["disk"]

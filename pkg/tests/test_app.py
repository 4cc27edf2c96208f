import math

import pytest
from fastapi.testclient import TestClient

from diamondlab.app import app
from diamondlab.config import get_settings


@pytest.fixture
def client(settings):
    app.dependency_overrides[get_settings] = lambda: settings
    yield TestClient(app)
    app.dependency_overrides.clear()


SAMPLE_W = {
    "experiment": "sample-w",
    "lattice": {"b": 2, "s": 2, "n": 2},
    "schedule": {"kind": "fixed", "beta": 0.5},
    "replicates": 10,
    "master_seed": 4,
}


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


def test_lattice_info(client):
    response = client.get("/lattice/info", params={"b": 2, "s": 2, "n": 3})
    assert response.status_code == 200
    body = response.json()
    assert body["paths"] == 128
    assert body["regime"] == "b=s"
    assert client.get("/lattice/info", params={"b": 1, "s": 2, "n": 3}).status_code == 422
    single = client.get("/lattice/info", params={"b": 3, "s": 1, "n": 2})
    assert single.status_code == 200
    assert single.json()["paths"] == 9
    assert single.json()["regime"] == "b>s"


def test_iterate_flow(client):
    response = client.post("/moments/iterate", json={"b": 2, "s": 2, "kind": "Mn_beq", "beta": 1.0, "n": 500})
    assert response.status_code == 200
    body = response.json()
    assert len(body["values"]) == 501
    assert body["values"][0] == 0.0
    assert body["blow_up_index"] is None


def test_iterate_flow_errors(client):
    assert client.post("/moments/iterate", json={"b": 2, "s": 2, "kind": "nope"}).status_code == 422
    response = client.post("/moments/iterate", json={"b": 2, "s": 3, "kind": "Mn_beq", "beta": 1.0, "n": 10})
    assert response.status_code == 400
    assert "b" in response.json()["detail"]


def test_critical_rows(client):
    response = client.post("/moments/critical", json={"b": 2, "n_grid": [100, 1000]})
    assert response.status_code == 200
    rows = response.json()
    assert [r["n"] for r in rows] == [100, 1000]
    assert all(math.isclose(r["target"], 2.0) for r in rows)
    assert client.post("/moments/critical", json={"b": 2, "n_grid": [1]}).status_code == 422


def test_run_and_summarize(client, settings):
    response = client.post("/experiments/run", json=SAMPLE_W)
    assert response.status_code == 200
    record = response.json()
    assert len(record["values"]) == 10
    assert record["config"]["experiment"] == "sample-w"

    response = client.post("/experiments/summarize", json={"records": [record]})
    assert response.status_code == 200
    assert response.json()[0]["target_name"] == "sigma_n"

    response = client.post("/experiments/summarize", json={"pattern": "*.json"})
    assert response.status_code == 200
    assert len(response.json()) == 1


def test_summarize_rejects_bad_requests(client):
    assert client.post("/experiments/summarize", json={}).status_code == 422
    assert client.post("/experiments/summarize", json={"pattern": "../*.json"}).status_code == 400
    assert client.post("/experiments/summarize", json={"pattern": "missing-*.json"}).status_code == 404


def test_run_rejects_invalid_configs(client):
    bad = dict(SAMPLE_W, lattice={"b": 2, "s": 2})
    assert client.post("/experiments/run", json=bad).status_code == 422

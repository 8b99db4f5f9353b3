from fastapi.testclient import TestClient

from entdist.service import create_app
from util import fixture_text

client = TestClient(create_app())


def test_validate_topology_ok():
    response = client.post("/topology/validate",
                           json={"document": fixture_text("metro4.topo")})
    assert response.status_code == 200
    body = response.json()
    assert body["ok"]
    assert body["summary"] == {"nodes": 12, "links": 12, "qnodes": 6,
                               "eps": 2, "switches": 4}


def test_validate_topology_reports_error():
    response = client.post("/topology/validate",
                           json={"document": "node x mystery ports=1\n"})
    body = response.json()
    assert response.status_code == 200
    assert not body["ok"]
    assert "mystery" in body["error"]


def test_rwa_solve_endpoint():
    response = client.post("/rwa/solve", json={
        "topology": fixture_text("metro4.topo"),
        "requests": fixture_text("reqs.txt")})
    assert response.status_code == 200
    lines = [r["line"] for r in response.json()["results"]]
    assert lines[0].startswith("ASSIGNED O60 O67 ")
    assert lines[1].startswith("ASSIGNED C28 C36 ")
    assert lines[2] == "BLOCKED coexistence"


def test_rwa_solve_rejects_malformed_requests():
    response = client.post("/rwa/solve", json={
        "topology": fixture_text("metro4.topo"), "requests": "gimme a path\n"})
    assert response.status_code == 400


def test_simulation_run_endpoint_and_determinism():
    payload = {"topology": fixture_text("metro4.topo"),
               "scenario": fixture_text("nominal.scn"), "seed": 5}
    first = client.post("/simulation/run", json=payload).json()
    second = client.post("/simulation/run", json=payload).json()
    assert first["sessions"][0]["final_state"] == "Complete"
    assert first["trace"] == second["trace"]
    assert first["metrics"] == second["metrics"]
    assert first["session_lines"].startswith("SESSION s1 Complete")


def test_simulation_run_rejects_bad_scenario():
    response = client.post("/simulation/run", json={
        "topology": fixture_text("metro4.topo"), "scenario": "at noon party\n"})
    assert response.status_code == 400


def test_run_options_are_honored():
    payload = {"topology": fixture_text("chain.topo"),
               "scenario": fixture_text("drift_exhaust.scn"),
               "seed": 5, "max_retries": 1}
    body = client.post("/simulation/run", json=payload).json()
    assert body["sessions"][0]["final_state"] == "Failed"
    assert body["sessions"][0]["retries"] == 1


def test_version_endpoint():
    body = client.get("/version").json()
    assert body["name"] == "entdist"
    assert body["version"]

"""Service endpoints exercised directly over the ASGI app."""

import json

import pytest
from fastapi.testclient import TestClient

from bctree.service import create_app

from conftest import make_personal


@pytest.fixture
def client(tmp_path):
    with TestClient(create_app(tmp_path / "tree")) as c:
        yield c


def record_json(i: int) -> dict:
    return {str(num): value for num, value in make_personal(i).items()}


def init_flat(client) -> None:
    response = client.post("/init", json={"mode": "flat", "countries": []})
    assert response.status_code == 200, response.text


def test_health_reports_uninitialized(client):
    body = client.get("/health").json()
    assert body == {"status": "ok", "initialized": False}


def test_endpoints_require_init(client):
    response = client.get("/audit")
    assert response.status_code == 422
    assert response.json()["error"] == "LedgerError"


def test_init_nested_counts(client):
    codes = [f"C{i:02d}" for i in range(28)]
    body = client.post("/init", json={"mode": "nested", "countries": codes}).json()
    assert body == {"mode": "nested", "root_blocks": 29, "total_blocks": 29}
    again = client.post("/init", json={"mode": "nested", "countries": codes})
    assert again.status_code == 422


def test_issue_verify_flow(client):
    init_flat(client)
    issued = client.post("/issue", json={
        "record": record_json(1), "officer_id": "OFF-9",
        "timestamp": 1_700_000_000}).json()
    assert issued["address"] == [["root", 1]]
    assert len(issued["block_hash"]) == 64

    verdict = client.post("/verify", json={"card": issued["card"]}).json()
    assert verdict["valid"] is True and verdict["findings"] == []

    fetched = client.get(f"/cards/{issued['serial']}").json()
    assert fetched == issued["card"]

    forged = dict(issued["card"])
    forged["payload"] = dict(forged["payload"], **{"3": "Mallory"})
    verdict = client.post("/verify", json={"card": forged}).json()
    assert verdict["valid"] is False
    assert any("payload field 3" in f for f in verdict["findings"])


def test_verify_with_audit_appends_entry(client):
    init_flat(client)
    issued = client.post("/issue", json={
        "record": record_json(1), "officer_id": "OFF-9",
        "timestamp": 1_700_000_000}).json()
    for k in range(2):
        body = client.post("/verify", json={
            "card": issued["card"],
            "audit": {"device_id": "scanner-1", "user_id": "officer-2"}}).json()
        assert body["valid"] is True
        assert body["logged_at"] == [["root", 1], ["access", k]]
    inspected = client.get("/inspect", params={"address": "root1"}).json()
    assert inspected["subchains"] == {"access": 2}


def test_reissue_endpoint(client):
    init_flat(client)
    issued = client.post("/issue", json={
        "record": record_json(1), "officer_id": "OFF-9",
        "timestamp": 1_700_000_000}).json()
    renewed = client.post("/reissue", json={
        "old_serial": issued["serial"], "record": record_json(2),
        "officer_id": "OFF-9", "timestamp": 1_700_000_100}).json()
    assert renewed["address"] == [["root", 1], ["reissue", 0]]
    old = client.post("/verify", json={"card": issued["card"]}).json()
    assert old["valid"] is False
    assert any("revoked" in f for f in old["findings"])
    new = client.post("/verify", json={"card": renewed["card"]}).json()
    assert new["valid"] is True


def test_error_names_travel_to_clients(client):
    init_flat(client)
    oversize = dict(record_json(1), **{"7": "MM"})
    response = client.post("/issue", json={
        "record": oversize, "officer_id": "OFF", "timestamp": 1})
    assert response.status_code == 422
    body = response.json()
    assert body["error"] == "FieldTooLong"
    assert "7" in body["detail"]

    response = client.get("/inspect", params={"address": "root9"})
    assert response.json()["error"] == "AddressOutOfRange"
    response = client.get("/inspect", params={"address": "bogus"})
    assert response.json()["error"] == "KindMismatch"
    response = client.get("/cards/NOPE")
    assert response.json()["error"] == "UnknownSerial"


def test_access_endpoint_and_inspect_totals(client):
    init_flat(client)
    client.post("/issue", json={"record": record_json(1), "officer_id": "O",
                                "timestamp": 1_700_000_000})
    body = client.post("/access", json={
        "address": [["root", 1]], "device_id": "d1", "user_id": "u1",
        "purpose": "border-check", "timestamp": 1_700_000_500}).json()
    assert body["address"] == [["root", 1], ["access", 0]]
    summary = client.get("/inspect").json()
    assert summary["counts"]["total"] == 3
    assert summary["mode"] == "flat"


def test_audit_clean_and_after_disk_tamper(client, tmp_path):
    init_flat(client)
    client.post("/issue", json={"record": record_json(1), "officer_id": "O",
                                "timestamp": 1_700_000_000})
    assert client.get("/audit").json()["valid"] is True

    root_file = tmp_path / "tree" / "root.bct"
    raw = root_file.read_bytes()
    assert b"Name1" in raw
    root_file.write_bytes(raw.replace(b"Name1", b"NameX"))
    report = client.get("/audit").json()
    assert report["valid"] is False
    assert any(f["check"] == "content_hash" for f in report["findings"])

    # mutations refuse on a failing tree unless forced
    response = client.post("/issue", json={
        "record": record_json(2), "officer_id": "O",
        "timestamp": 1_700_000_100})
    assert response.status_code == 422
    assert response.json()["error"] == "AuditFailed"
    response = client.post("/issue", json={
        "record": record_json(2), "officer_id": "O",
        "timestamp": 1_700_000_100, "force": True})
    assert response.status_code == 200


def test_simulate_endpoint(client):
    scenario = [{"time": 10, "action": "issue", "node": "N0"}]
    body = client.post("/simulate", json={
        "scenario": scenario, "nodes": 3, "seed": 1}).json()
    assert body["verdict"] == "PASS"
    assert body["checks"] == {"safety": True, "quorum_commits": True,
                              "repair_honesty": True}
    assert any(e["event"] == "commit" for e in body["transcript"])
    bad = client.post("/simulate", json={
        "scenario": [{"action": "explode"}], "nodes": 3, "seed": 1})
    assert bad.status_code == 422
    assert bad.json()["error"] == "ScenarioError"


def test_repair_endpoint_restores_from_replicas(client, tmp_path):
    init_flat(client)
    issued = client.post("/issue", json={
        "record": record_json(1), "officer_id": "O",
        "timestamp": 1_700_000_000}).json()

    # peers: four honest copies of the current tree
    from bctree import tree as tree_mod
    state_tree = tree_mod.load_tree(tmp_path / "tree")
    replica_dirs = []
    for i in range(4):
        peer_dir = tmp_path / f"peer{i}"
        tree_mod.save_tree(state_tree, peer_dir)
        replica_dirs.append(str(peer_dir))

    root_file = tmp_path / "tree" / "root.bct"
    root_file.write_bytes(root_file.read_bytes().replace(b"Name1", b"NameX"))
    assert client.get("/audit").json()["valid"] is False

    body = client.post("/repair", json={"replicas": replica_dirs,
                                        "force": True}).json()
    assert len(body["replaced"]) == 1
    assert body["conflicts"] == []
    assert body["clean_after"] is True
    assert client.get("/audit").json()["valid"] is True
    verdict = client.post("/verify", json={"card": issued["card"]}).json()
    assert verdict["valid"] is True


def test_openapi_lists_all_surfaces(client):
    paths = set(client.get("/openapi.json").json()["paths"])
    assert {"/init", "/issue", "/reissue", "/verify", "/access", "/audit",
            "/inspect", "/simulate", "/repair", "/health",
            "/cards/{serial}"} <= paths

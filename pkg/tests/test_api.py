"""HTTP surface: status codes, payload shapes, and the loopback fleet mode."""

import json

import pytest
from fastapi.testclient import TestClient

from dbnet.client import ApiError, DbnetClient
from dbnet.server import USER_HEADER, create_app, kernel_from_env

SAMPLE_COLUMNS = [
    {"name": "id", "kind": "INT", "constraints": [{"kind": "PrimaryKey"}]},
    {"name": "grp", "kind": "INT", "constraints": [{"kind": "NotNull"}]},
    {"name": "val", "kind": "FLOAT", "constraints": []},
]


def _sample_table(client):
    client.create_schema("s")
    client.create_table("s", "t", SAMPLE_COLUMNS)


def test_health_and_catalog(client):
    health = client.health()
    assert health["status"] == "ok" and health["outbox_pending"] == 0
    _sample_table(client)
    assert client.catalog() == {"schemas": 1, "tables": 1, "procedures": 0,
                                "triggers": 0}


def test_missing_user_header_is_401(kernel):
    raw = TestClient(create_app(kernel), raise_server_exceptions=False)
    resp = raw.get("/v1/catalog")
    assert resp.status_code == 401
    body = resp.json()
    assert set(body) == {"error_kind", "message", "detail"}
    assert resp.request.headers.get(USER_HEADER) is None


def test_error_statuses(client):
    _sample_table(client)
    with pytest.raises(ApiError) as exc:
        client.create_schema("s")  # duplicate
    assert exc.value.status == 409

    with pytest.raises(ApiError) as exc:
        client.query("SELECT nothing FROM s.missing")
    assert exc.value.status == 404

    with pytest.raises(ApiError) as exc:
        client.query("SELECT FROM")
    assert exc.value.status == 400 and exc.value.error_kind == "ParseError"

    with pytest.raises(ApiError) as exc:
        client.with_user("ghost").query("SELECT id FROM s.t")
    assert exc.value.status == 401

    with pytest.raises(ApiError) as exc:
        client.call_procedure("nothing_here", [])
    assert exc.value.status == 404

    with pytest.raises(ApiError) as exc:
        client.run_txn([{"op": "insert", "table": "s.t",
                         "cells": {"id": 1, "grp": None}}])
    assert exc.value.status == 409 and exc.value.error_kind == \
        "ConstraintViolation"


def test_access_denied_is_403(client, make_client):
    _sample_table(client)
    client.add_user("guest", [])
    with pytest.raises(ApiError) as exc:
        make_client("guest").query("SELECT id FROM s.t")
    assert exc.value.status == 403 and exc.value.error_kind == "AccessDenied"


def test_txn_and_query_round_trip(client):
    _sample_table(client)
    results = client.run_txn([
        {"op": "insert", "table": "s.t", "cells": {"id": 1, "grp": 0, "val": 2.5}},
        {"op": "insert", "table": "s.t", "cells": {"id": 2, "grp": 1}},
        {"op": "update", "table": "s.t", "set": {"val": 7.0}, "where": "id = 2"},
    ])
    assert len(results) == 3
    got = client.query("SELECT id, val FROM s.t")
    assert got["columns"] == ["id", "val"]
    assert got["rows"] == [[1, 2.5], [2, 7.0]]


def test_procedure_call_over_http(client):
    client.register_procedure("PROC add(a : INT, b : INT) BEGIN "
                              "RETURN a + b; END")
    assert client.call_procedure("add", [2, 3]) == [5]


def test_log_endpoints(client):
    _sample_table(client)
    client.run_txn([{"op": "insert", "table": "s.t",
                     "cells": {"id": 1, "grp": 0}}])
    entries = client.log(kind="Insert")
    assert len(entries) == 1 and entries[0]["table"] == "s.t"
    chain = client.trace(entries[0]["log_id"])
    assert chain[0]["kind"] == "Insert"
    with pytest.raises(ApiError) as exc:
        client.trace(999_999)
    assert exc.value.status == 404

    exported = client.export_log()
    objs = [json.loads(line) for line in exported.splitlines()]
    assert any(o["kind"] == "Insert" for o in objs)
    assert all(o["ts"].endswith("+00:00") for o in objs)


def test_fleet_endpoints(client):
    client.create_schema("net")
    client.create_table("net", "nodes", [
        {"name": "nodeId", "kind": "INT", "constraints": [{"kind": "PrimaryKey"}]},
        {"name": "podId", "kind": "INT", "constraints": [{"kind": "NotNull"}]},
    ], device_backed=True, device_kind="Node")
    client.run_txn([{"op": "insert", "table": "net.nodes",
                     "cells": {"nodeId": 1, "podId": 1}}])
    assert client.health()["outbox_pending"] == 1
    assert client.drain() == 1
    stats = client.fleet_stats()
    assert stats["alive_nodes"] == [1] and stats["pending"] == 0
    client.inject_failure("kill_node", 1)


def test_http_fleet_mode(tmp_path, monkeypatch):
    monkeypatch.setenv("DBNET_FLEET_MODE", "http")
    monkeypatch.setenv("DBNET_JOURNAL", str(tmp_path / "wal.dbn"))
    kernel = kernel_from_env()
    try:
        kernel.fleet._backing.provisioning_delay = 0.0
        client = DbnetClient(
            TestClient(create_app(kernel), raise_server_exceptions=False),
            "root")
        client.create_schema("net")
        client.create_table("net", "nodes", [
            {"name": "nodeId", "kind": "INT",
             "constraints": [{"kind": "PrimaryKey"}]},
            {"name": "podId", "kind": "INT",
             "constraints": [{"kind": "NotNull"}]},
        ], device_backed=True, device_kind="Node")
        client.register_procedure("""
PROC grow(podId : INT) BEGIN
  DECLARE fresh : INT;
  EXTERNAL create_node(podId) INTO fresh;
  INSERT INTO net.nodes (nodeId, podId) VALUES (:fresh, :podId);
  RETURN fresh;
END""")
        fresh = client.call_procedure("grow", [1])[0]
        client.drain()
        assert fresh in client.fleet_stats()["alive_nodes"]
        assert client.query("SELECT nodeId FROM net.nodes")["rows"] == [[fresh]]
    finally:
        kernel.close()

    monkeypatch.setenv("DBNET_FLEET_MODE", "bogus")
    with pytest.raises(ValueError):
        kernel_from_env()


def test_malformed_body_is_4xx(kernel):
    raw = TestClient(create_app(kernel), raise_server_exceptions=False)
    resp = raw.post("/v1/table", json={"name": "only"},
                    headers={USER_HEADER: "root"})
    assert 400 <= resp.status_code < 500

"""Thin HTTP client for the /v1 API, used by the CLI and the benchmark
driver. Works against a live server URL or any httpx-compatible client
(e.g. fastapi.testclient.TestClient for in-process runs).
"""

from __future__ import annotations

from typing import Any, List, Optional

import httpx

from .server import USER_HEADER


class ApiError(Exception):
    """Non-2xx response from the server."""

    def __init__(self, status: int, error_kind: str, message: str, detail: str = ""):
        super().__init__(f"{status} {error_kind}: {message}")
        self.status = status
        self.error_kind = error_kind
        self.message = message
        self.detail = detail


class DbnetClient:
    def __init__(self, target, user: str):
        """``target``: base URL string or an httpx-compatible client object."""
        if isinstance(target, str):
            self._http = httpx.Client(base_url=target.rstrip("/"), timeout=30.0)
            self._owned = True
        else:
            self._http = target
            self._owned = False
        self.user = user

    def close(self) -> None:
        if self._owned:
            self._http.close()

    def with_user(self, user: str) -> "DbnetClient":
        return DbnetClient(self._http, user)

    # -- plumbing ----------------------------------------------------------

    def _headers(self) -> dict:
        return {USER_HEADER: self.user}

    def _unwrap(self, resp):
        if resp.status_code >= 400:
            try:
                body = resp.json()
            except Exception:
                body = {}
            raise ApiError(resp.status_code,
                           body.get("error_kind", "Internal"),
                           body.get("message", resp.text),
                           body.get("detail", ""))
        return resp.json()

    def post(self, path: str, payload) -> dict:
        return self._unwrap(self._http.post("/v1" + path, json=payload,
                                            headers=self._headers()))

    def get(self, path: str, params: Optional[dict] = None) -> dict:
        return self._unwrap(self._http.get("/v1" + path, params=params or {},
                                           headers=self._headers()))

    def get_text(self, path: str) -> str:
        resp = self._http.get("/v1" + path, headers=self._headers())
        if resp.status_code >= 400:
            self._unwrap(resp)
        return resp.text

    # -- API surface ------------------------------------------------------------

    def health(self) -> dict:
        return self.get("/health")

    def catalog(self) -> dict:
        return self.get("/catalog")

    def create_schema(self, name: str) -> dict:
        return self.post("/schema", {"name": name})

    def create_table(self, schema: str, name: str, columns: List[dict],
                     device_backed: bool = False,
                     device_kind: Optional[str] = None) -> dict:
        return self.post("/table", {"schema": schema, "name": name,
                                    "columns": columns,
                                    "device_backed": device_backed,
                                    "device_kind": device_kind})

    def register_procedure(self, source: str) -> dict:
        return self.post("/procedure", {"source": source})

    def register_trigger(self, name: str, table: str, event: str,
                         procedure: str, when: Optional[str] = None) -> dict:
        return self.post("/trigger", {"name": name, "table": table,
                                      "event": event, "when": when,
                                      "procedure": procedure})

    def call_procedure(self, name: str, args: Optional[List[Any]] = None) -> list:
        return self.post(f"/procedure/{name}/call",
                         {"args": args or []})["result"]

    def run_txn(self, commands: List[dict]) -> list:
        return self.post("/txn", {"commands": commands})["results"]

    def query(self, query: str) -> dict:
        return self.post("/query", {"query": query})

    def ingest_spans(self, spans: List[dict]) -> int:
        return self.post("/telemetry/spans", spans)["accepted_count"]

    def metrics(self, node_id: int) -> dict:
        return self.get(f"/metrics/{node_id}")

    def log(self, **filters) -> list:
        params = {k: v for k, v in filters.items() if v is not None}
        return self.get("/log", params)["entries"]

    def export_log(self) -> str:
        return self.get_text("/log/export")

    def trace(self, log_id: int) -> list:
        return self.get(f"/provenance/trace/{log_id}")["chain"]

    def add_user(self, user_id: str, roles: List[str]) -> dict:
        return self.post("/user", {"user_id": user_id, "roles": roles})

    def add_acl_rule(self, role: str, obj: str, action: str) -> dict:
        return self.post("/acl", {"role": role, "object": obj, "action": action})

    def drain(self) -> int:
        return self.post("/fleet/drain", {})["applied"]

    def inject_failure(self, action: str, count: int) -> dict:
        return self.post("/fleet/inject_failure",
                         {"action": action, "count": count})

    def fleet_stats(self) -> dict:
        return self.get("/fleet/stats")

"""HTTP service: JSON client API under /v1 plus the telemetry ingest path.

The server is a thin shell — every command is handed to the kernel, which
owns transactions, access control, and provenance. Identity is a bearer
user id in the ``X-DBNet-User`` header.
"""

from __future__ import annotations

import os
from typing import Any, List, Optional

from fastapi import Depends, FastAPI, Header, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .dsl import parse_predicate
from .errors import DbnetError, MalformedQuery, UnknownUser
from .kernel import Kernel
from .store import ColumnDef, Constraint, ConstraintKind, TableDef
from .values import ValueKind

DEFAULT_ADDR = "127.0.0.1:8484"
USER_HEADER = "X-DBNet-User"


# -- request / response models --------------------------------------------------


class SchemaRequest(BaseModel):
    name: str


class ConstraintSpec(BaseModel):
    kind: str  # NotNull | PrimaryKey | Unique | Check
    check: Optional[str] = None


class ColumnSpec(BaseModel):
    name: str
    kind: str  # INT | FLOAT | TEXT | BOOL | TS
    constraints: List[ConstraintSpec] = Field(default_factory=list)


class TableRequest(BaseModel):
    schema_name: str = Field(alias="schema")
    name: str
    columns: List[ColumnSpec]
    device_backed: bool = False
    device_kind: Optional[str] = None

    model_config = {"populate_by_name": True}


class ProcedureRequest(BaseModel):
    source: str


class TriggerRequest(BaseModel):
    name: str
    table: str  # schema.table
    event: str  # AfterInsert | AfterUpdate | AfterDelete
    when: Optional[str] = None
    procedure: str


class CallRequest(BaseModel):
    args: List[Any] = Field(default_factory=list)


class TxnRequest(BaseModel):
    commands: List[dict]


class QueryRequest(BaseModel):
    query: str


class UserRequest(BaseModel):
    user_id: str
    roles: List[str] = Field(default_factory=list)


class AclRequest(BaseModel):
    role: str
    object: str
    action: str


class InjectFailureRequest(BaseModel):
    action: str
    count: int


def _table_def_from_request(req: TableRequest) -> TableDef:
    cols = []
    for c in req.columns:
        try:
            kind = ValueKind(c.kind)
        except ValueError:
            raise MalformedQuery(f"unknown column kind {c.kind!r}")
        constraints = []
        for spec in c.constraints:
            try:
                ckind = ConstraintKind(spec.kind)
            except ValueError:
                raise MalformedQuery(f"unknown constraint kind {spec.kind!r}")
            if ckind is ConstraintKind.CHECK:
                if not spec.check:
                    raise MalformedQuery("Check constraint needs a predicate")
                constraints.append(
                    Constraint(ckind, parse_predicate(spec.check), spec.check))
            else:
                constraints.append(Constraint(ckind))
        cols.append(ColumnDef(c.name, kind, tuple(constraints)))
    return TableDef(schema=req.schema_name, name=req.name, columns=tuple(cols),
                    device_backed=req.device_backed, device_kind=req.device_kind)


# -- app factory -------------------------------------------------------------


def create_app(kernel: Kernel) -> FastAPI:
    app = FastAPI(title="dbnet", version="0.1.0")
    app.state.kernel = kernel

    def current_user(x_dbnet_user: Optional[str] = Header(default=None)) -> str:
        if not x_dbnet_user:
            raise UnknownUser(f"missing {USER_HEADER} header")
        return x_dbnet_user

    @app.exception_handler(DbnetError)
    async def dbnet_error_handler(request: Request, exc: DbnetError):
        return JSONResponse(status_code=exc.http_status, content=exc.to_dict())

    v1 = "/v1"

    @app.get(v1 + "/health")
    def health():
        return {"status": "ok",
                "outbox_pending": kernel.reconciler.pending_count()}

    @app.get(v1 + "/catalog")
    def catalog(user: str = Depends(current_user)):
        kernel.acl.user(user)
        return kernel.object_counts()

    # -- DDL ----------------------------------------------------------------

    @app.post(v1 + "/schema")
    def create_schema(req: SchemaRequest, user: str = Depends(current_user)):
        kernel.create_schema(req.name, user)
        return {"created": req.name}

    @app.post(v1 + "/table")
    def create_table(req: TableRequest, user: str = Depends(current_user)):
        defn = _table_def_from_request(req)
        kernel.create_table(defn, user)
        return {"created": f"{defn.schema}.{defn.name}"}

    @app.post(v1 + "/procedure")
    def register_procedure(req: ProcedureRequest,
                           user: str = Depends(current_user)):
        name = kernel.register_procedure(req.source, user)
        return {"registered": name}

    @app.post(v1 + "/trigger")
    def register_trigger(req: TriggerRequest,
                         user: str = Depends(current_user)):
        kernel.register_trigger(req.name, req.table, req.event, req.when,
                                req.procedure, user)
        return {"registered": req.name}

    # -- execution ------------------------------------------------------------

    @app.post(v1 + "/procedure/{name}/call")
    def call_procedure(name: str, req: CallRequest,
                       user: str = Depends(current_user)):
        result = kernel.call_procedure(name, req.args, user)
        return {"result": result}

    @app.post(v1 + "/txn")
    def run_txn(req: TxnRequest, user: str = Depends(current_user)):
        results = kernel.execute_atomic(req.commands, user)
        return {"results": results}

    @app.post(v1 + "/query")
    def run_query(req: QueryRequest, user: str = Depends(current_user)):
        labels, rows = kernel.select(req.query, user)
        return {"columns": labels, "rows": [list(r) for r in rows]}

    # -- telemetry ----------------------------------------------------------------

    @app.post(v1 + "/telemetry/spans")
    def ingest_spans(spans: List[dict], user: str = Depends(current_user)):
        accepted = kernel.ingest_spans(spans, user)
        return {"accepted_count": accepted}

    @app.get(v1 + "/metrics/{node_id}")
    def get_metrics(node_id: int, user: str = Depends(current_user)):
        return kernel.get_metrics(node_id, user)

    # -- provenance ---------------------------------------------------------------

    @app.get(v1 + "/log")
    def get_log(user: str = Depends(current_user),
                entry_user: Optional[str] = None,
                table: Optional[str] = None,
                kind: Optional[str] = None):
        entries = kernel.query_log(user, user=entry_user, table=table, kind=kind)
        return {"entries": [e.to_dict() for e in entries]}

    @app.get(v1 + "/log/export")
    def export_log(user: str = Depends(current_user)):
        return PlainTextResponse(kernel.export_log(user),
                                 media_type="application/x-ndjson")

    @app.get(v1 + "/provenance/trace/{log_id}")
    def get_trace(log_id: int, user: str = Depends(current_user)):
        chain = kernel.trace(log_id, user)
        return {"chain": [e.to_dict() for e in chain]}

    # -- administration -------------------------------------------------------------

    @app.post(v1 + "/user")
    def add_user(req: UserRequest, user: str = Depends(current_user)):
        kernel.add_user(req.user_id, set(req.roles), user)
        return {"created": req.user_id}

    @app.post(v1 + "/acl")
    def add_acl(req: AclRequest, user: str = Depends(current_user)):
        kernel.add_acl_rule(req.role, req.object, req.action, user)
        return {"created": f"{req.role}:{req.object}:{req.action}"}

    # -- fleet administration ----------------------------------------------------------

    @app.post(v1 + "/fleet/drain")
    def drain(user: str = Depends(current_user)):
        kernel._check(user, "*", "Admin")
        return {"applied": kernel.drain_outbox()}

    @app.post(v1 + "/fleet/inject_failure")
    def inject_failure(req: InjectFailureRequest,
                       user: str = Depends(current_user)):
        kernel._check(user, "*", "Admin")
        kernel.fleet.inject_failure(req.action, req.count)
        return {"injected": req.action, "count": req.count}

    @app.get(v1 + "/fleet/stats")
    def fleet_stats(user: str = Depends(current_user)):
        kernel._check(user, "*", "Admin")
        return {"busy_us": kernel.fleet.busy_us,
                "pending": kernel.reconciler.pending_count(),
                "alive_nodes": sorted(kernel.fleet.alive_devices("Node"))}

    return app


# -- loopback HTTP fleet (optional network path for device calls) -------------------


def create_fleet_app(fleet) -> FastAPI:
    """Expose a fleet's device API over HTTP for loopback testing."""
    app = FastAPI(title="dbnet-fleet", version="0.1.0")

    @app.exception_handler(DbnetError)
    async def dbnet_error_handler(request: Request, exc: DbnetError):
        return JSONResponse(status_code=exc.http_status, content=exc.to_dict())

    @app.post("/create_node")
    def create_node(body: dict):
        return {"node_id": fleet.create_node(body["pod_id"])}

    @app.post("/kill_node")
    def kill_node(body: dict):
        fleet.kill_node(body["node_id"])
        return {"ok": True}

    @app.post("/set_weights")
    def set_weights(body: dict):
        fleet.set_weights(body["pod_id"], *body["weights"])
        return {"ok": True}

    @app.post("/apply")
    def apply(body: dict):
        from .proxy import DeviceCommand

        fleet.apply_command(DeviceCommand(
            command_id=body["command_id"], device_kind=body["device_kind"],
            action=body["action"], payload=body["payload"],
            origin_log_id=body["origin_log_id"], table=tuple(body["table"]),
            row_id=body["row_id"], pk_column=body["pk_column"]))
        return {"ok": True}

    return app


class HttpFleet:
    """Client-side fleet that forwards device calls over HTTP.

    Implements the same surface the kernel and reconciler use, so it can be
    swapped in for SimFleet when DBNET_FLEET_MODE=http.
    """

    def __init__(self, client, backing):
        # `client` posts JSON and returns (status_code, body); `backing` is
        # the SimFleet behind the HTTP app, used for local reads/stats.
        self._client = client
        self._backing = backing

    @property
    def busy_us(self):
        return self._backing.busy_us

    @property
    def provisioning_delay(self):
        return self._backing.provisioning_delay

    @property
    def lb_weights(self):
        return self._backing.lb_weights

    def _post(self, path: str, body: dict):
        status, payload = self._client(path, body)
        if status >= 400:
            from .errors import DeviceError

            raise DeviceError(payload.get("message", f"device call failed ({status})"))
        return payload

    def create_node(self, pod_id: int) -> int:
        return self._post("/create_node", {"pod_id": pod_id})["node_id"]

    def kill_node(self, node_id: int) -> None:
        self._post("/kill_node", {"node_id": node_id})

    def set_weights(self, pod_id: int, *weights) -> None:
        self._post("/set_weights", {"pod_id": pod_id, "weights": list(weights)})

    def call(self, name: str, args: list):
        if name == "create_node":
            return self.create_node(*args)
        if name == "kill_node":
            return self.kill_node(*args)
        if name == "set_weights":
            return self.set_weights(*args)
        from .errors import UnknownExternal

        raise UnknownExternal(f"unknown device API {name!r}")

    def apply_command(self, cmd) -> None:
        self._post("/apply", {
            "command_id": cmd.command_id, "device_kind": cmd.device_kind,
            "action": cmd.action, "payload": cmd.payload,
            "origin_log_id": cmd.origin_log_id, "table": list(cmd.table),
            "row_id": cmd.row_id, "pk_column": cmd.pk_column})

    def inject_failure(self, action: str, count: int) -> None:
        self._backing.inject_failure(action, count)

    def get_state(self, device_kind: str, device_id):
        return self._backing.get_state(device_kind, device_id)

    def alive_devices(self, device_kind: str):
        return self._backing.alive_devices(device_kind)


def kernel_from_env() -> Kernel:
    journal = os.environ.get("DBNET_JOURNAL") or None
    mode = os.environ.get("DBNET_FLEET_MODE", "inproc")
    fleet = None
    if mode == "http":
        from fastapi.testclient import TestClient

        from .proxy import SimFleet

        backing = SimFleet()
        fleet_client = TestClient(create_fleet_app(backing),
                                  raise_server_exceptions=False)

        def post(path, body):
            resp = fleet_client.post(path, json=body)
            return resp.status_code, resp.json()

        fleet = HttpFleet(post, backing)
    elif mode != "inproc":
        raise ValueError(f"DBNET_FLEET_MODE must be inproc or http, got {mode!r}")
    return Kernel(journal_path=journal, fleet=fleet, auto_drain=True)

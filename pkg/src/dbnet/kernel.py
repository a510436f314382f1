"""The kernel: glue between store, transactions, policies, provenance,
telemetry, access control, and the device fleet.

Every mutation funnels through ``txn_insert`` / ``txn_update`` /
``txn_delete``, which stage the row change, the CDC log entry, the outbox
command for device-backed tables, and dispatch AFTER triggers synchronously
within the transaction.
"""

from __future__ import annotations

import logging
import threading
from typing import Optional

from . import ast_nodes as A
from . import telemetry
from .acl import AccessControl, AclRule
from .dsl import parse_predicate, parse_procedure, parse_select
from .errors import (
    AccessDenied,
    DbnetError,
    DeviceError,
    InvalidColumn,
    MalformedQuery,
    NotInitialized,
    ResolutionError,
    RuntimeFault,
    UnknownExternal,
    UnknownTable,
)
from .evaluate import CellsScope, EMPTY_SCOPE, eval_expr, evaluate_select
from .journal import Journal, read_records
from .policy import (
    EXTERNAL_API,
    Interpreter,
    MAX_CALL_DEPTH,
    MAX_CASCADE_DEPTH,
    PolicyRegistry,
    ProcedureDef,
    TRIGGER_EVENTS,
    resolve_procedure,
)
from .provenance import Cause, LogEntry, ProvenanceLog
from .proxy import DEVICE_KINDS, DeviceCommand, Reconciler, SimFleet
from .store import (
    ColumnDef,
    Constraint,
    ConstraintKind,
    Store,
    TableDef,
    delete_row,
    insert_row,
    update_row,
)
from .txn import ChangeRecord, CommittedView, Txn, TxnManager, TxnView
from .values import ValueKind, coerce

logger = logging.getLogger(__name__)

PROXY_USER = "proxy"


def _eval_check(expr, cells) -> object:
    # Unknown (Null-involving) checks pass, as in SQL.
    return eval_expr(expr, CellsScope(cells))


class Kernel:
    def __init__(self, journal_path: Optional[str] = None,
                 provisioning_delay: float = 0.1,
                 fleet: Optional[SimFleet] = None,
                 auto_drain: bool = False,
                 bootstrap_admin: str = "root"):
        self.store = Store()
        self.txnman = TxnManager(self.store)
        self.prov = ProvenanceLog(self.store)
        self.registry = PolicyRegistry()
        self.interp = Interpreter(self)
        self.acl = AccessControl()
        self.fleet = fleet if fleet is not None else SimFleet(provisioning_delay)
        self.reconciler = Reconciler(self.fleet, on_applied=self._on_command_applied)

        self._counter_lock = threading.Lock()
        self._next_request_id = 1
        self._next_batch_id = 1

        if bootstrap_admin:
            self.acl.add_user(bootstrap_admin, {"admin"})

        self._journal: Optional[Journal] = None
        self.prov.init()  # start-up task: create the log table
        if journal_path:
            self._replay(journal_path)
            self._journal = Journal(journal_path)
        if auto_drain:
            self.reconciler.start_worker()

    def close(self) -> None:
        self.reconciler.stop_worker()
        if self._journal:
            self._journal.close()

    # -- ids -------------------------------------------------------------

    def next_request_id(self) -> int:
        with self._counter_lock:
            rid = self._next_request_id
            self._next_request_id += 1
            return rid

    def _next_batch(self) -> int:
        with self._counter_lock:
            bid = self._next_batch_id
            self._next_batch_id += 1
            return bid

    def request_cause(self) -> Cause:
        return Cause("ExternalRequest", self.next_request_id())

    # -- journaling --------------------------------------------------------

    def _counters(self) -> dict:
        with self._counter_lock:
            return {
                "req": self._next_request_id,
                "batch": self._next_batch_id,
                "log": self.prov._next_log_id,
                "txn": self.txnman._next_id,
                "cmd": self.reconciler._next_command_id,
            }

    def _journal_event(self, record: dict) -> None:
        if self._journal is not None:
            record["counters"] = self._counters()
            self._journal.append(record)

    # -- access control ------------------------------------------------------

    def add_user(self, user_id: str, roles, admin: str) -> None:
        self._check(admin, "*", "Admin")
        self.acl.add_user(user_id, roles)
        self._journal_event({"t": "user", "user_id": user_id,
                             "roles": sorted(roles)})

    def add_acl_rule(self, role: str, obj: str, action: str, admin: str) -> None:
        self._check(admin, "*", "Admin")
        self.acl.add_rule(AclRule(role, obj, action))
        self._journal_event({"t": "acl", "role": role, "object": obj,
                             "action": action})

    def check_access(self, user_id: str, obj: str, action: str) -> bool:
        return self.acl.check(self.acl.user(user_id), obj, action)

    def _check(self, user_id: str, obj: str, action: str,
               cause: Optional[Cause] = None) -> None:
        user = self.acl.user(user_id)
        if self.acl.check(user, obj, action):
            return
        entry = self.prov.make_entry(
            user_id, 0, "AuthDeny", cause or self.request_cause(),
            detail=f"{action} on {obj} denied")
        self._direct_append([entry])
        raise AccessDenied(f"user {user_id!r} may not {action} {obj}")

    def _direct_append(self, entries: list) -> None:
        with self.store.mutex:
            self.prov.materialize(entries)
        self._journal_event({"t": "log", "entries": [_entry_json(e) for e in entries]})

    # -- DDL --------------------------------------------------------------------

    def create_schema(self, name: str, user: str) -> None:
        self._check(user, name, "Admin")
        self.store.create_schema(name)
        self._journal_event({"t": "schema", "name": name})

    def create_table(self, defn: TableDef, user: str) -> None:
        ref = f"{defn.schema}.{defn.name}"
        self._check(user, ref, "Admin")
        if defn.cdc_exempt:
            raise InvalidColumn("only the provenance log table is cdc-exempt")
        if defn.device_backed:
            if defn.device_kind not in DEVICE_KINDS:
                raise InvalidColumn(
                    f"device-backed table needs device_kind in {DEVICE_KINDS}")
            if defn.primary_key() is None:
                raise InvalidColumn("device-backed table needs a primary key")
        for col in defn.columns:
            for c in col.constraints:
                if c.kind is ConstraintKind.CHECK:
                    _resolve_check(c.check_expr, defn)
        self.store.create_table(defn)
        self._journal_event({"t": "table", "def": _tabledef_json(defn)})

    def register_procedure(self, source: str, user: str) -> str:
        ast = parse_procedure(source)
        if ast.name in self.registry.procedures:
            from .errors import DuplicateProcedure
            raise DuplicateProcedure(f"procedure {ast.name!r} already exists")
        resolve_procedure(ast, self.store, self.registry)
        self._check(user, ast.name, "Admin")
        for schema, name in sorted(_referenced_tables(ast.body)):
            self._check(user, f"{schema}.{name}", "Execute")
        proc = ProcedureDef(ast.name, ast.params, ast.body, source)
        self.registry.add_procedure(proc)
        entry = self.prov.make_entry(user, 0, "ProcRegister", self.request_cause(),
                                     detail=ast.name)
        with self.store.mutex:
            self.prov.materialize([entry])
        self._journal_event({"t": "proc", "source": source, "user": user,
                             "entries": [_entry_json(entry)]})
        return ast.name

    def register_trigger(self, name: str, table: str, event: str,
                         when: Optional[str], procedure: str, user: str) -> None:
        schema, tname = _split_table(table)
        self._check(user, table, "Admin")
        if event not in TRIGGER_EVENTS:
            raise MalformedQuery(f"unknown trigger event {event!r}")
        defn = self.store.table(schema, tname).defn
        if defn.cdc_exempt:
            raise UnknownTable("triggers cannot attach to the provenance log table")
        proc = self.registry.procedure(procedure)
        cols = {c.name for c in defn.columns}
        for pname, _ in proc.params:
            if pname not in cols:
                raise ResolutionError(
                    f"trigger procedure parameter {pname!r} is not a column of {table}")
        when_expr = None
        if when:
            when_expr = parse_predicate(when)
            _resolve_when(when_expr, cols)
        self.registry.add_trigger(name, (schema, tname), event, when_expr,
                                  when or "", procedure)
        entry = self.prov.make_entry(user, 0, "TriggerRegister",
                                     self.request_cause(), table=table,
                                     detail=f"{name} -> {procedure}")
        with self.store.mutex:
            self.prov.materialize([entry])
        self._journal_event({"t": "trigger", "name": name, "table": table,
                             "event": event, "when": when or "",
                             "procedure": procedure,
                             "entries": [_entry_json(entry)]})

    # -- transactions -------------------------------------------------------------

    def begin(self, user: str, cause: Optional[Cause] = None) -> int:
        self.acl.user(user)
        txn = self.txnman.begin(user, cause or self.request_cause())
        return txn.txn_id

    def commit(self, txn_id: int) -> None:
        self._commit(self.txnman.get(txn_id))

    def rollback(self, txn_id: int, reason: str = "") -> None:
        self._rollback(self.txnman.get(txn_id), reason)

    def _commit(self, txn: Txn) -> None:
        if not txn.staged_changes and not txn.staged_log:
            self.txnman.finish(txn, "Committed")
            return
        commit_entry = self.prov.make_entry(txn.user, txn.txn_id, "Commit",
                                            txn.root_cause)
        entries = list(txn.staged_log) + [commit_entry]
        changes = list(txn.staged_changes)
        commands = list(txn.staged_commands)
        with self.store.mutex:
            for key, data in txn.staged.items():
                self.store.table(*key).data = data
            self.prov.materialize(entries)
        self.reconciler.enqueue(commands)
        self._journal_event({
            "t": "commit",
            "txn": txn.txn_id,
            "changes": [_change_json(c) for c in changes],
            "entries": [_entry_json(e) for e in entries],
            "commands": [_command_json(c) for c in commands],
        })
        self.txnman.finish(txn, "Committed")

    def _rollback(self, txn: Txn, reason: str) -> None:
        entries = []
        for desc in txn.external_effects:
            entries.append(self.prov.make_entry(
                txn.user, txn.txn_id, "CompensationPending", txn.root_cause,
                detail=desc))
        entries.append(self.prov.make_entry(
            txn.user, txn.txn_id, "Rollback", txn.root_cause, detail=reason))
        with self.store.mutex:
            self.prov.materialize(entries)
        self._journal_event({"t": "log",
                             "entries": [_entry_json(e) for e in entries]})
        self.txnman.finish(txn, "RolledBack")

    def execute_atomic(self, commands: list, user: str,
                       cause: Optional[Cause] = None) -> list:
        """Run API commands in one transaction; all-or-nothing."""
        self.acl.user(user)
        txn = self.txnman.begin(user, cause or self.request_cause())
        results = []
        try:
            for cmd in commands:
                results.append(self._exec_command(cmd, txn, user))
            self._commit(txn)
        except DbnetError as exc:
            if txn.status == "Open":
                self._rollback(txn, str(exc))
            raise
        return results

    def _exec_command(self, cmd: dict, txn: Txn, user: str):
        op = cmd.get("op")
        if op == "insert":
            schema, name = _split_table(cmd["table"])
            self._check(user, cmd["table"], "Write", cause=txn.root_cause)
            return self.txn_insert(txn, schema, name, cmd["cells"], user)
        if op == "update":
            schema, name = _split_table(cmd["table"])
            self._check(user, cmd["table"], "Write", cause=txn.root_cause)
            where = parse_predicate(cmd["where"]) if cmd.get("where") else None
            assignments = {col: A.Lit(v) for col, v in cmd["set"].items()}
            return self.txn_update(txn, schema, name, where, assignments, user)
        if op == "delete":
            schema, name = _split_table(cmd["table"])
            self._check(user, cmd["table"], "Write", cause=txn.root_cause)
            where = parse_predicate(cmd["where"]) if cmd.get("where") else None
            return self.txn_delete(txn, schema, name, where, user)
        if op == "call":
            name = cmd["procedure"]
            self._check(user, name, "Execute", cause=txn.root_cause)
            return self.invoke_procedure(name, list(cmd.get("args", [])), txn, user)
        if op == "select":
            sel = parse_select(cmd["query"])
            self._check_select_access(sel, user, cause=txn.root_cause)
            labels, rows = evaluate_select(sel, TxnView(self.store, txn))
            return {"columns": labels, "rows": [list(r) for r in rows]}
        raise MalformedQuery(f"unknown command op {op!r}")

    # -- DML core (used by API commands and the interpreter) -----------------------

    def txn_view(self, txn: Txn) -> TxnView:
        return TxnView(self.store, txn)

    def _writable(self, txn: Txn, schema: str, name: str):
        if not self.prov.initialized:
            raise NotInitialized("provenance log not initialized")
        defn, data = self.txnman.staged_data(txn, schema, name)
        if defn.cdc_exempt:
            raise MalformedQuery("the provenance log table is read-only")
        return defn, data

    def txn_insert(self, txn: Txn, schema: str, name: str, cells: dict,
                   user: str) -> int:
        defn, data = self._writable(txn, schema, name)
        row_id = insert_row(defn, data, cells, _eval_check)
        full = dict(data.rows[row_id])
        txn.staged_changes.append(
            ChangeRecord((schema, name), "Insert", row_id, None, full))
        entry = self.prov.make_entry(user, txn.txn_id, "Insert", txn.cause,
                                     table=f"{schema}.{name}", row_id=row_id,
                                     new_cells=full)
        txn.staged_log.append(entry)
        if defn.device_backed:
            self._stage_command(txn, defn, "Create", full, row_id, entry.log_id)
        self._dispatch_triggers(txn, "AfterInsert", defn, None, full, entry, user)
        return row_id

    def txn_update(self, txn: Txn, schema: str, name: str, where,
                   assignments: dict, user: str, env=None) -> int:
        defn, data = self._writable(txn, schema, name)
        parent = env if env is not None else EMPTY_SCOPE
        matching = []
        for rid in sorted(data.rows):
            if where is None or eval_expr(
                    where, CellsScope(data.rows[rid], parent)) is True:
                matching.append(rid)
        count = 0
        for rid in matching:
            if rid not in data.rows:  # removed by a trigger fired earlier
                continue
            old_scope = CellsScope(dict(data.rows[rid]), parent)
            values = {col: eval_expr(e, old_scope)
                      for col, e in assignments.items()}
            old, new = update_row(defn, data, rid, values, _eval_check)
            count += 1
            txn.staged_changes.append(
                ChangeRecord((schema, name), "Update", rid, old, new))
            entry = self.prov.make_entry(user, txn.txn_id, "Update", txn.cause,
                                         table=f"{schema}.{name}", row_id=rid,
                                         old_cells=old, new_cells=new)
            txn.staged_log.append(entry)
            if defn.device_backed:
                self._stage_command(txn, defn, "SetState", new, rid, entry.log_id)
            self._dispatch_triggers(txn, "AfterUpdate", defn, old, new, entry, user)
        return count

    def txn_delete(self, txn: Txn, schema: str, name: str, where, user: str,
                   env=None) -> int:
        defn, data = self._writable(txn, schema, name)
        parent = env if env is not None else EMPTY_SCOPE
        matching = []
        for rid in sorted(data.rows):
            if where is None or eval_expr(
                    where, CellsScope(data.rows[rid], parent)) is True:
                matching.append(rid)
        count = 0
        for rid in matching:
            if rid not in data.rows:
                continue
            old = delete_row(defn, data, rid)
            count += 1
            txn.staged_changes.append(
                ChangeRecord((schema, name), "Delete", rid, old, None))
            entry = self.prov.make_entry(user, txn.txn_id, "Delete", txn.cause,
                                         table=f"{schema}.{name}", row_id=rid,
                                         old_cells=old)
            txn.staged_log.append(entry)
            if defn.device_backed:
                self._stage_command(txn, defn, "Delete", old, rid, entry.log_id)
            self._dispatch_triggers(txn, "AfterDelete", defn, old, None, entry, user)
        return count

    def _stage_command(self, txn: Txn, defn: TableDef, action: str,
                       payload: dict, row_id: int, origin_log_id: int) -> None:
        txn.staged_commands.append(DeviceCommand(
            command_id=self.reconciler.next_command_id(),
            device_kind=defn.device_kind,
            action=action,
            payload=dict(payload),
            origin_log_id=origin_log_id,
            table=defn.key,
            row_id=row_id,
            pk_column=defn.primary_key(),
        ))

    # -- triggers and procedures -----------------------------------------------------

    def _dispatch_triggers(self, txn: Txn, event: str, defn: TableDef,
                           old, new, mutation_entry: LogEntry, user: str) -> None:
        from .policy import TriggerScope

        for trig in self.registry.triggers_for(defn.key, event):
            if trig.when is not None:
                scope = TriggerScope(old, new)
                if eval_expr(trig.when, scope) is not True:
                    continue
            txn.trigger_depth += 1
            try:
                if txn.trigger_depth > MAX_CASCADE_DEPTH:
                    from .errors import CascadeDepthExceeded
                    raise CascadeDepthExceeded(
                        f"trigger cascade exceeded depth {MAX_CASCADE_DEPTH}")
                fire = self.prov.make_entry(
                    user, txn.txn_id, "TriggerFire",
                    Cause("MutationEvent", mutation_entry.log_id),
                    table=f"{defn.schema}.{defn.name}",
                    row_id=mutation_entry.row_id,
                    detail=f"{trig.name} -> {trig.procedure}")
                txn.staged_log.append(fire)
                txn.cause_stack.append(Cause("TriggerActivation", fire.log_id))
                try:
                    proc = self.registry.procedure(trig.procedure)
                    source_row = old if event == "AfterDelete" else new
                    args = [source_row[pname] for pname, _ in proc.params]
                    rows = {}
                    if old is not None:
                        rows["OLD"] = dict(old)
                    if new is not None:
                        rows["NEW"] = dict(new)
                    self.invoke_procedure(trig.procedure, args, txn, user,
                                          trigger_rows=rows)
                finally:
                    txn.cause_stack.pop()
            finally:
                txn.trigger_depth -= 1

    def invoke_procedure(self, name: str, args: list, txn: Txn, user: str,
                         trigger_rows: Optional[dict] = None) -> list:
        proc = self.registry.procedure(name)
        args = _bind_args(proc, args)
        if txn.call_depth >= MAX_CALL_DEPTH:
            raise RuntimeFault(f"procedure call depth exceeds {MAX_CALL_DEPTH}")
        entry = self.prov.make_entry(
            user, txn.txn_id, "ProcCall", txn.cause,
            detail=f"{name}({', '.join(repr(a) for a in args)})")
        txn.staged_log.append(entry)
        txn.cause_stack.append(Cause("ProcInvocation", entry.log_id))
        txn.call_depth += 1
        try:
            return self.interp.run(proc, args, txn, user,
                                   trigger_rows=trigger_rows)
        finally:
            txn.call_depth -= 1
            txn.cause_stack.pop()

    def call_procedure(self, name: str, args: list, user: str,
                       txn_id: Optional[int] = None,
                       cause: Optional[Cause] = None) -> list:
        """Public entry; wraps in a fresh transaction when none is given."""
        self._check(user, name, "Execute", cause=cause)
        if txn_id is not None:
            txn = self.txnman.get(txn_id)
            try:
                return self.invoke_procedure(name, args, txn, user)
            except DbnetError as exc:
                if txn.status == "Open":
                    self._rollback(txn, str(exc))
                raise
        txn = self.txnman.begin(user, cause or self.request_cause())
        try:
            result = self.invoke_procedure(name, args, txn, user)
            self._commit(txn)
            return result
        except DbnetError as exc:
            if txn.status == "Open":
                self._rollback(txn, str(exc))
            raise

    def external_call(self, name: str, args: list, txn: Txn, user: str):
        if name not in EXTERNAL_API:
            raise UnknownExternal(f"unknown device API {name!r}")
        desc = f"{name}({', '.join(repr(a) for a in args)})"
        try:
            result = self.fleet.call(name, args)
        except DeviceError:
            txn.external_effects.append(desc + " [failed]")
            raise
        entry = self.prov.make_entry(user, txn.txn_id, "ExternalCall",
                                     txn.cause, detail=desc)
        txn.staged_log.append(entry)
        txn.external_effects.append(desc)
        return result

    # -- queries -----------------------------------------------------------------

    def _check_select_access(self, sel: A.Select, user: str, cause=None) -> None:
        refs = [sel.source] if isinstance(sel.source, A.TableRef) else \
            [sel.source.left, sel.source.right]
        for ref in refs:
            self._check(user, f"{ref.schema}.{ref.name}", "Read", cause=cause)

    def select(self, query, user: str, txn_id: Optional[int] = None) -> tuple:
        sel = parse_select(query) if isinstance(query, str) else query
        self._check_select_access(sel, user)
        if txn_id is not None:
            view = TxnView(self.store, self.txnman.get(txn_id))
        else:
            view = CommittedView(self.store)
        return evaluate_select(sel, view)

    def select_committed(self, query) -> tuple:
        """Internal unchecked read of committed state."""
        sel = parse_select(query) if isinstance(query, str) else query
        return evaluate_select(sel, CommittedView(self.store))

    # -- telemetry ------------------------------------------------------------------

    def ingest_spans(self, batch: list, user: str) -> int:
        self._check(user, telemetry.SPANS_REF, "Write")
        spans = telemetry.parse_batch(batch)
        if not spans:
            return 0
        cause = Cause("TelemetryBatch", self._next_batch())
        txn = self.txnman.begin(user, cause)
        try:
            for span in spans:
                telemetry.insert_span(self, txn, span, user)
            self._commit(txn)
        except DbnetError as exc:
            if txn.status == "Open":
                self._rollback(txn, str(exc))
            raise
        return len(spans)

    def get_metrics(self, node_id: int, user: str) -> dict:
        self._check(user, telemetry.METRICS_REF, "Read")
        return telemetry.read_metrics(self, node_id)

    # -- provenance reads ---------------------------------------------------------

    def trace(self, log_id: int, user: str) -> list:
        self._check(user, "dbnet.log", "Read")
        return self.prov.trace(log_id)

    def query_log(self, requesting_user: str, **filters) -> list:
        self._check(requesting_user, "dbnet.log", "Read")
        return self.prov.query(**filters)

    def export_log(self, user: str) -> str:
        self._check(user, "dbnet.log", "Read")
        return self.prov.export_ndjson()

    # -- fleet / reconciliation ------------------------------------------------------

    def drain_outbox(self) -> int:
        return self.reconciler.drain()

    def _on_command_applied(self, cmd: DeviceCommand, ok: bool, error) -> None:
        detail = f"{cmd.action} {cmd.device_kind} {cmd.payload.get(cmd.pk_column)}"
        if not ok:
            detail += f" FAILED: {error}"
        entry = self.prov.make_entry(
            PROXY_USER, 0, "ExternalCall",
            Cause("MutationEvent", cmd.origin_log_id),
            table=f"{cmd.table[0]}.{cmd.table[1]}", row_id=cmd.row_id,
            detail=detail)
        with self.store.mutex:
            self.prov.materialize([entry])
        self._journal_event({"t": "applied", "command_id": cmd.command_id,
                             "ok": ok, "error": error,
                             "entries": [_entry_json(entry)]})

    # -- journal replay ---------------------------------------------------------------

    def _replay(self, path: str) -> None:
        import os

        if not os.path.exists(path):
            return
        pending: dict = {}
        counters: dict = {}
        for rec in read_records(path):
            t = rec["t"]
            if t == "schema":
                self.store.create_schema(rec["name"])
            elif t == "table":
                self.store.create_table(_tabledef_from_json(rec["def"]))
            elif t == "user":
                self.acl.add_user(rec["user_id"], rec["roles"])
            elif t == "acl":
                self.acl.add_rule(AclRule(rec["role"], rec["object"], rec["action"]))
            elif t == "proc":
                ast = parse_procedure(rec["source"])
                self.registry.add_procedure(
                    ProcedureDef(ast.name, ast.params, ast.body, rec["source"]))
                self.prov.materialize([_entry_from_json(e) for e in rec["entries"]])
            elif t == "trigger":
                when_expr = parse_predicate(rec["when"]) if rec["when"] else None
                self.registry.add_trigger(rec["name"], tuple(_split_table(rec["table"])),
                                          rec["event"], when_expr, rec["when"],
                                          rec["procedure"])
                self.prov.materialize([_entry_from_json(e) for e in rec["entries"]])
            elif t == "log":
                self.prov.materialize([_entry_from_json(e) for e in rec["entries"]])
            elif t == "commit":
                for ch in rec["changes"]:
                    self._apply_change_raw(ch)
                self.prov.materialize([_entry_from_json(e) for e in rec["entries"]])
                for c in rec["commands"]:
                    cmd = _command_from_json(c)
                    pending[cmd.command_id] = cmd
            elif t == "applied":
                pending.pop(rec["command_id"], None)
                self.prov.materialize([_entry_from_json(e) for e in rec["entries"]])
            counters = rec.get("counters", counters)
        if pending:
            self.reconciler.enqueue([pending[k] for k in sorted(pending)])
        if counters:
            self.prov.bump_next_id(counters["log"])
            self.txnman.bump_next_id(counters["txn"])
            self.reconciler.bump_next_command_id(counters["cmd"])
            with self._counter_lock:
                self._next_request_id = counters["req"]
                self._next_batch_id = counters["batch"]

    def _apply_change_raw(self, ch: dict) -> None:
        schema, name = ch["table"]
        tbl = self.store.table(schema, name)
        data = tbl.data
        rid = ch["row_id"]
        if ch["kind"] == "Insert":
            data.rows[rid] = dict(ch["new"])
            data.next_row_id = max(data.next_row_id, rid + 1)
            for col in tbl.defn.unique_columns():
                v = ch["new"].get(col)
                if v is not None:
                    data.unique[col][v] = rid
        elif ch["kind"] == "Update":
            old, new = ch["old"], ch["new"]
            for col in tbl.defn.unique_columns():
                if old.get(col) != new.get(col):
                    if old.get(col) is not None:
                        data.unique[col].pop(old[col], None)
                    if new.get(col) is not None:
                        data.unique[col][new[col]] = rid
            data.rows[rid] = dict(new)
        elif ch["kind"] == "Delete":
            if rid in data.rows:
                delete_row(tbl.defn, data, rid)

    # -- introspection -------------------------------------------------------------

    def object_counts(self) -> dict:
        schemas = [s for s in self.store.schemas if s != "dbnet"]
        tables = [t for t in self.store.all_tables() if not t.defn.cdc_exempt]
        return {
            "schemas": len(schemas),
            "tables": len(tables),
            "procedures": len(self.registry.procedures),
            "triggers": len(self.registry.triggers),
        }

    def dump_state(self) -> dict:
        """Deterministic snapshot of committed data, for replay/equality checks."""
        out = {}
        for schema in sorted(self.store.schemas):
            for name in sorted(self.store.schemas[schema]):
                tbl = self.store.schemas[schema][name]
                out[f"{schema}.{name}"] = {
                    str(rid): tbl.data.rows[rid] for rid in sorted(tbl.data.rows)
                }
        return out


# -- helpers ---------------------------------------------------------------------


def _split_table(ref: str) -> tuple:
    if not isinstance(ref, str) or ref.count(".") != 1:
        raise MalformedQuery(f"table reference must be schema.table, got {ref!r}")
    schema, name = ref.split(".")
    return schema, name


def _bind_args(proc: ProcedureDef, args: list) -> list:
    from .errors import ArgMismatch, TypeMismatch

    if len(args) != len(proc.params):
        raise ArgMismatch(
            f"{proc.name} takes {len(proc.params)} args, got {len(args)}")
    bound = []
    for (pname, pkind), value in zip(proc.params, args):
        try:
            bound.append(coerce(pkind, value))
        except TypeMismatch as exc:
            raise ArgMismatch(f"argument {pname!r}: {exc.message}") from exc
    return bound


def _resolve_check(expr, defn: TableDef) -> None:
    cols = {c.name for c in defn.columns}

    def walk(e):
        if isinstance(e, A.ColRef):
            if e.qualifier is not None or e.name not in cols:
                raise InvalidColumn(
                    f"check constraint references unknown column {e.src()}")
        elif isinstance(e, (A.VarRef, A.FieldRef)):
            raise InvalidColumn(
                "check constraints may reference only this table's columns")
        elif isinstance(e, A.Unary):
            walk(e.operand)
        elif isinstance(e, A.Binary):
            walk(e.left)
            walk(e.right)

    walk(expr)


def _resolve_when(expr, cols: set) -> None:
    def walk(e):
        if isinstance(e, A.FieldRef):
            if e.base not in ("OLD", "NEW"):
                raise ResolutionError("WHEN may reference only OLD/NEW columns")
            if e.name not in cols:
                raise ResolutionError(f"WHEN references unknown column {e.name!r}")
        elif isinstance(e, (A.ColRef, A.VarRef)):
            raise ResolutionError("WHEN may reference only OLD/NEW columns")
        elif isinstance(e, A.Unary):
            walk(e.operand)
        elif isinstance(e, A.Binary):
            walk(e.left)
            walk(e.right)

    walk(expr)


def _referenced_tables(body) -> set:
    refs = set()

    def add_select(sel: A.Select):
        if isinstance(sel.source, A.Join):
            refs.add(sel.source.left.key)
            refs.add(sel.source.right.key)
        else:
            refs.add(sel.source.key)

    def walk(stmts):
        for s in stmts:
            if isinstance(s, (A.InsertStmt, A.UpdateStmt, A.DeleteStmt)):
                refs.add(s.table.key)
            elif isinstance(s, A.SelectInto):
                add_select(s.select)
            elif isinstance(s, A.ForLoop):
                add_select(s.select)
                walk(s.body)
            elif isinstance(s, A.IfStmt):
                for _, b in s.branches:
                    walk(b)
                walk(s.else_body)

    walk(body)
    return refs


# -- (de)serialization for the journal ----------------------------------------------


def _entry_json(e: LogEntry) -> dict:
    return {"log_id": e.log_id, "ts": e.ts, "user": e.user, "txn": e.txn,
            "kind": e.kind, "table": e.table, "row_id": e.row_id,
            "old": e.old_cells, "new": e.new_cells, "detail": e.detail,
            "cause_kind": e.cause.kind, "cause_ref": e.cause.ref_id}


def _entry_from_json(d: dict) -> LogEntry:
    return LogEntry(log_id=d["log_id"], ts=d["ts"], user=d["user"], txn=d["txn"],
                    kind=d["kind"], cause=Cause(d["cause_kind"], d["cause_ref"]),
                    table=d["table"], row_id=d["row_id"], old_cells=d["old"],
                    new_cells=d["new"], detail=d["detail"])


def _change_json(c: ChangeRecord) -> dict:
    return {"table": list(c.table), "kind": c.kind, "row_id": c.row_id,
            "old": c.old_cells, "new": c.new_cells}


def _command_json(c: DeviceCommand) -> dict:
    return {"command_id": c.command_id, "device_kind": c.device_kind,
            "action": c.action, "payload": c.payload,
            "origin_log_id": c.origin_log_id, "table": list(c.table),
            "row_id": c.row_id, "pk_column": c.pk_column}


def _command_from_json(d: dict) -> DeviceCommand:
    return DeviceCommand(command_id=d["command_id"], device_kind=d["device_kind"],
                         action=d["action"], payload=d["payload"],
                         origin_log_id=d["origin_log_id"],
                         table=tuple(d["table"]), row_id=d["row_id"],
                         pk_column=d["pk_column"])


def _tabledef_json(defn: TableDef) -> dict:
    return {
        "schema": defn.schema,
        "name": defn.name,
        "device_backed": defn.device_backed,
        "device_kind": defn.device_kind,
        "columns": [
            {"name": c.name, "kind": c.kind.value,
             "constraints": [{"kind": k.kind.value, "check": k.check_src}
                             for k in c.constraints]}
            for c in defn.columns
        ],
    }


def _tabledef_from_json(d: dict) -> TableDef:
    cols = []
    for c in d["columns"]:
        constraints = []
        for k in c["constraints"]:
            kind = ConstraintKind(k["kind"])
            if kind is ConstraintKind.CHECK:
                constraints.append(Constraint(kind, parse_predicate(k["check"]),
                                              k["check"]))
            else:
                constraints.append(Constraint(kind))
        cols.append(ColumnDef(c["name"], ValueKind(c["kind"]), tuple(constraints)))
    return TableDef(schema=d["schema"], name=d["name"], columns=tuple(cols),
                    device_backed=d["device_backed"], device_kind=d["device_kind"])

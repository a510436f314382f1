"""Change-data-capture log and causal tracing.

Entries are materialized into a cdc-exempt system table (``dbnet.log``) at
commit time; rollback and auth-denial markers are appended directly. The
``cause`` field is recorded eagerly at event time, so ``trace`` is a plain
index walk from an entry back to its root request or telemetry batch.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .errors import BrokenChain, UnknownLogId
from .store import ColumnDef, ConstraintKind, Constraint, Store, TableDef, insert_row
from .values import ValueKind

LOG_SCHEMA = "dbnet"
LOG_TABLE = "log"

ROOT_CAUSE_KINDS = ("ExternalRequest", "TelemetryBatch")
CAUSE_KINDS = ROOT_CAUSE_KINDS + ("ProcInvocation", "TriggerActivation", "MutationEvent")

ENTRY_KINDS = (
    "Insert", "Update", "Delete", "ProcCall", "TriggerFire", "ExternalCall",
    "ProcRegister", "TriggerRegister", "Commit", "Rollback", "AuthDeny",
    "CompensationPending",
)

MAX_TRACE_LEN = 64


@dataclass(frozen=True)
class Cause:
    kind: str  # one of CAUSE_KINDS
    ref_id: int  # request/batch id for roots, else a log_id

    @property
    def is_root(self) -> bool:
        return self.kind in ROOT_CAUSE_KINDS


@dataclass
class LogEntry:
    log_id: int
    ts: int  # UTC microseconds
    user: str
    txn: int
    kind: str
    cause: Cause
    table: Optional[str] = None  # "schema.table"
    row_id: Optional[int] = None
    old_cells: Optional[dict] = None
    new_cells: Optional[dict] = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "log_id": self.log_id,
            "ts": _iso(self.ts),
            "user": self.user,
            "txn": self.txn,
            "kind": self.kind,
            "table": self.table,
            "row_id": self.row_id,
            "old_cells": self.old_cells,
            "new_cells": self.new_cells,
            "detail": self.detail,
            "cause": {"kind": self.cause.kind, "ref_id": self.cause.ref_id},
        }


def _iso(ts_us: int) -> str:
    from datetime import datetime, timezone

    return datetime.fromtimestamp(ts_us / 1_000_000, tz=timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%S.%f+00:00")


LOG_TABLE_DEF = TableDef(
    schema=LOG_SCHEMA,
    name=LOG_TABLE,
    columns=(
        ColumnDef("logId", ValueKind.INT,
                  (Constraint(ConstraintKind.PRIMARY_KEY),)),
        ColumnDef("ts", ValueKind.TS, (Constraint(ConstraintKind.NOT_NULL),)),
        ColumnDef("userId", ValueKind.TEXT, (Constraint(ConstraintKind.NOT_NULL),)),
        ColumnDef("txnId", ValueKind.INT, (Constraint(ConstraintKind.NOT_NULL),)),
        ColumnDef("kind", ValueKind.TEXT, (Constraint(ConstraintKind.NOT_NULL),)),
        ColumnDef("tbl", ValueKind.TEXT),
        ColumnDef("rowId", ValueKind.INT),
        ColumnDef("oldCells", ValueKind.TEXT),
        ColumnDef("newCells", ValueKind.TEXT),
        ColumnDef("detail", ValueKind.TEXT),
        ColumnDef("causeKind", ValueKind.TEXT, (Constraint(ConstraintKind.NOT_NULL),)),
        ColumnDef("causeRef", ValueKind.INT, (Constraint(ConstraintKind.NOT_NULL),)),
    ),
    cdc_exempt=True,
)


class ProvenanceLog:
    """Owner of the log table, the log-id counter, and the trace index."""

    def __init__(self, store: Store):
        self.store = store
        self._lock = threading.Lock()
        self._next_log_id = 1
        self._last_ts = 0
        self._entries: dict = {}  # log_id -> LogEntry, committed only
        self.initialized = False

    # -- lifecycle --------------------------------------------------------

    def init(self) -> None:
        """Create the log table; idempotent."""
        if self.initialized:
            return
        if LOG_SCHEMA not in self.store.schemas:
            self.store.create_schema(LOG_SCHEMA)
        if not self.store.has_table(LOG_SCHEMA, LOG_TABLE):
            self.store.create_table(LOG_TABLE_DEF)
        else:
            # journal replay already restored rows; rebuild the index
            tbl = self.store.table(LOG_SCHEMA, LOG_TABLE)
            for cells in tbl.data.rows.values():
                entry = _entry_from_cells(cells)
                self._entries[entry.log_id] = entry
                self._next_log_id = max(self._next_log_id, entry.log_id + 1)
        self.initialized = True

    # -- id and timestamp allocation --------------------------------------

    def next_id(self) -> int:
        with self._lock:
            log_id = self._next_log_id
            self._next_log_id += 1
            return log_id

    def bump_next_id(self, floor: int) -> None:
        with self._lock:
            self._next_log_id = max(self._next_log_id, floor)

    def now_us(self) -> int:
        """Monotonic-adjusted wall clock; log_id stays the ordering authority."""
        with self._lock:
            ts = time.time_ns() // 1000
            if ts <= self._last_ts:
                ts = self._last_ts + 1
            self._last_ts = ts
            return ts

    def make_entry(self, user: str, txn: int, kind: str, cause: Cause, **kw) -> LogEntry:
        return LogEntry(log_id=self.next_id(), ts=self.now_us(), user=user,
                        txn=txn, kind=kind, cause=cause, **kw)

    # -- materialization ---------------------------------------------------

    def materialize(self, entries: list) -> None:
        """Append committed entries to the log table (called under the writer
        lock by the kernel)."""
        tbl = self.store.table(LOG_SCHEMA, LOG_TABLE)
        for entry in entries:
            insert_row(tbl.defn, tbl.data, _entry_to_cells(entry),
                       eval_check=lambda e, c: True)
            self._entries[entry.log_id] = entry

    # -- reads --------------------------------------------------------------

    def entry(self, log_id: int) -> LogEntry:
        e = self._entries.get(log_id)
        if e is None:
            raise UnknownLogId(f"no log entry {log_id}")
        return e

    def all_entries(self) -> list:
        return [self._entries[k] for k in sorted(self._entries)]

    def query(self, user: Optional[str] = None, table: Optional[str] = None,
              kind: Optional[str] = None, time_range: Optional[tuple] = None) -> list:
        out = []
        for entry in self.all_entries():
            if user is not None and entry.user != user:
                continue
            if table is not None and entry.table != table:
                continue
            if kind is not None and entry.kind != kind:
                continue
            if time_range is not None:
                lo, hi = time_range
                if (lo is not None and entry.ts < lo) or (hi is not None and entry.ts > hi):
                    continue
            out.append(entry)
        return out

    def trace(self, log_id: int) -> list:
        """Causal chain from the entry back to (but excluding) the root cause;
        the last entry's cause is a root kind."""
        chain = [self.entry(log_id)]
        while not chain[-1].cause.is_root:
            if len(chain) >= MAX_TRACE_LEN:
                raise BrokenChain(f"trace from {log_id} exceeds {MAX_TRACE_LEN} links")
            ref = chain[-1].cause.ref_id
            nxt = self._entries.get(ref)
            if nxt is None:
                raise BrokenChain(f"entry {chain[-1].log_id} references missing {ref}")
            if nxt.log_id >= chain[-1].log_id:
                raise BrokenChain(f"non-decreasing causal reference at {ref}")
            chain.append(nxt)
        return chain

    def export_ndjson(self) -> str:
        return "\n".join(json.dumps(e.to_dict(), sort_keys=True)
                         for e in self.all_entries())


def _entry_to_cells(e: LogEntry) -> dict:
    return {
        "logId": e.log_id,
        "ts": e.ts,
        "userId": e.user,
        "txnId": e.txn,
        "kind": e.kind,
        "tbl": e.table,
        "rowId": e.row_id,
        "oldCells": None if e.old_cells is None else json.dumps(e.old_cells, sort_keys=True),
        "newCells": None if e.new_cells is None else json.dumps(e.new_cells, sort_keys=True),
        "detail": e.detail,
        "causeKind": e.cause.kind,
        "causeRef": e.cause.ref_id,
    }


def _entry_from_cells(cells: dict) -> LogEntry:
    return LogEntry(
        log_id=cells["logId"],
        ts=cells["ts"],
        user=cells["userId"],
        txn=cells["txnId"],
        kind=cells["kind"],
        cause=Cause(cells["causeKind"], cells["causeRef"]),
        table=cells["tbl"],
        row_id=cells["rowId"],
        old_cells=None if cells["oldCells"] is None else json.loads(cells["oldCells"]),
        new_cells=None if cells["newCells"] is None else json.loads(cells["newCells"]),
        detail=cells["detail"] or "",
    )

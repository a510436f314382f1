"""Transaction manager: single-writer slot, copy-on-write staging, rollback.

At most one read-write transaction runs at a time; waiters queue FIFO.
Reads outside a transaction snapshot committed state and never block.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .errors import AlreadyClosed, UnknownTxn
from .provenance import Cause
from .store import Store, TableData, TableDef


class FairLock:
    """Mutex handing the slot to waiters in FIFO order."""

    def __init__(self):
        self._cond = threading.Condition()
        self._locked = False
        self._waiters = deque()

    def acquire(self) -> None:
        with self._cond:
            if not self._locked and not self._waiters:
                self._locked = True
                return
            token = object()
            self._waiters.append(token)
            while self._locked or self._waiters[0] is not token:
                self._cond.wait()
            self._waiters.popleft()
            self._locked = True
            self._cond.notify_all()

    def release(self) -> None:
        with self._cond:
            self._locked = False
            self._cond.notify_all()


@dataclass
class ChangeRecord:
    table: tuple  # (schema, name)
    kind: str  # Insert | Update | Delete
    row_id: int
    old_cells: Optional[dict] = None
    new_cells: Optional[dict] = None


@dataclass
class Txn:
    txn_id: int
    user: str
    root_cause: Cause
    status: str = "Open"  # Open | Committed | RolledBack
    staged: dict = field(default_factory=dict)  # (schema, name) -> TableData
    staged_changes: list = field(default_factory=list)
    staged_log: list = field(default_factory=list)
    staged_commands: list = field(default_factory=list)
    external_effects: list = field(default_factory=list)  # descriptions, for compensation markers
    cause_stack: list = field(default_factory=list)
    trigger_depth: int = 0
    call_depth: int = 0

    @property
    def cause(self) -> Cause:
        return self.cause_stack[-1] if self.cause_stack else self.root_cause


class TxnView:
    """Read view inside a transaction: staged copies shadow committed data."""

    def __init__(self, store: Store, txn: Txn):
        self.store = store
        self.txn = txn

    def lookup(self, schema: str, name: str):
        tbl = self.store.table(schema, name)
        data = self.txn.staged.get((schema, name), tbl.data)
        return tbl.defn, data


class CommittedView:
    def __init__(self, store: Store):
        self.store = store

    def lookup(self, schema: str, name: str):
        tbl = self.store.table(schema, name)
        return tbl.defn, tbl.data


class TxnManager:
    def __init__(self, store: Store):
        self.store = store
        self.writer = FairLock()
        self._lock = threading.Lock()
        self._next_id = 1
        self._open: dict = {}
        self._closed: dict = {}  # txn_id -> final status

    def begin(self, user: str, root_cause: Cause) -> Txn:
        self.writer.acquire()
        with self._lock:
            txn = Txn(txn_id=self._next_id, user=user, root_cause=root_cause)
            self._next_id += 1
            self._open[txn.txn_id] = txn
        return txn

    def bump_next_id(self, floor: int) -> None:
        with self._lock:
            self._next_id = max(self._next_id, floor)

    def get(self, txn_id: int) -> Txn:
        with self._lock:
            txn = self._open.get(txn_id)
            if txn is None:
                if txn_id in self._closed:
                    raise AlreadyClosed(
                        f"transaction {txn_id} is {self._closed[txn_id]}")
                raise UnknownTxn(f"no transaction {txn_id}")
        return txn

    def staged_data(self, txn: Txn, schema: str, name: str) -> tuple:
        """Return (TableDef, staged TableData), copying committed data on
        first touch."""
        tbl = self.store.table(schema, name)
        key = (schema, name)
        if key not in txn.staged:
            txn.staged[key] = tbl.data.copy()
        return tbl.defn, txn.staged[key]

    def finish(self, txn: Txn, status: str) -> None:
        """Mark closed and release the writer slot. The caller is responsible
        for swapping staged table data in before calling this on commit."""
        assert status in ("Committed", "RolledBack")
        txn.status = status
        txn.staged = {}
        txn.staged_changes = []
        txn.staged_log = []
        txn.staged_commands = []
        with self._lock:
            self._open.pop(txn.txn_id, None)
            self._closed[txn.txn_id] = status
        self.writer.release()

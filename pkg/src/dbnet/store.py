"""Embedded relational substrate: schemas, tables, rows, and constraints.

The store holds only committed state. Transactions work on copy-on-write
``TableData`` snapshots managed by the transaction manager; the row-level
check/apply helpers here operate on whichever ``TableData`` they are given.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from . import ast_nodes as A
from .errors import (
    ConstraintViolation,
    DuplicateSchema,
    DuplicateTable,
    InvalidColumn,
    TypeMismatch,
    UnknownColumn,
    UnknownSchema,
    UnknownTable,
)
from .values import ValueKind, coerce, validate_identifier


class ConstraintKind(str, Enum):
    NOT_NULL = "NotNull"
    PRIMARY_KEY = "PrimaryKey"
    UNIQUE = "Unique"
    CHECK = "Check"


@dataclass(frozen=True)
class Constraint:
    kind: ConstraintKind
    check_expr: Optional[A.Expr] = None
    check_src: str = ""


@dataclass(frozen=True)
class ColumnDef:
    name: str
    kind: ValueKind
    constraints: tuple = ()

    def has(self, ckind: ConstraintKind) -> bool:
        return any(c.kind is ckind for c in self.constraints)


@dataclass(frozen=True)
class TableDef:
    schema: str
    name: str
    columns: tuple
    device_backed: bool = False
    device_kind: Optional[str] = None  # Node | AutoScaler | LoadBalancer
    cdc_exempt: bool = False

    @property
    def key(self) -> tuple:
        return (self.schema, self.name)

    def column(self, name: str) -> ColumnDef:
        for c in self.columns:
            if c.name == name:
                return c
        raise UnknownColumn(f"no column {name!r} in {self.schema}.{self.name}")

    def primary_key(self) -> Optional[str]:
        for c in self.columns:
            if c.has(ConstraintKind.PRIMARY_KEY):
                return c.name
        return None

    def unique_columns(self) -> list:
        return [c.name for c in self.columns
                if c.has(ConstraintKind.UNIQUE) or c.has(ConstraintKind.PRIMARY_KEY)]


@dataclass
class TableData:
    """Mutable row storage for one table; copied wholesale into transactions."""

    rows: dict = field(default_factory=dict)  # row_id -> {col: value}
    next_row_id: int = 1
    unique: dict = field(default_factory=dict)  # col -> {value: row_id}

    def copy(self) -> "TableData":
        return TableData(
            rows={rid: dict(cells) for rid, cells in self.rows.items()},
            next_row_id=self.next_row_id,
            unique={col: dict(idx) for col, idx in self.unique.items()},
        )


@dataclass
class Table:
    defn: TableDef
    data: TableData = field(default_factory=TableData)


class Store:
    """Committed catalog + data. Mutations happen only under the writer lock
    held by the transaction manager; reads snapshot table references."""

    def __init__(self):
        self.schemas: dict = {}  # name -> {table_name: Table}
        self.mutex = threading.RLock()

    # -- catalog ---------------------------------------------------------

    def create_schema(self, name: str) -> None:
        validate_identifier(name, "schema name")
        with self.mutex:
            if name in self.schemas:
                raise DuplicateSchema(f"schema {name!r} already exists")
            self.schemas[name] = {}

    def create_table(self, defn: TableDef) -> None:
        validate_identifier(defn.name, "table name")
        pk_count = 0
        seen = set()
        for col in defn.columns:
            validate_identifier(col.name, "column name")
            if col.name in seen:
                raise InvalidColumn(f"duplicate column {col.name!r}")
            seen.add(col.name)
            if col.has(ConstraintKind.PRIMARY_KEY):
                pk_count += 1
        if pk_count > 1:
            raise InvalidColumn("at most one PrimaryKey column is allowed")
        if not defn.columns:
            raise InvalidColumn("table needs at least one column")
        with self.mutex:
            if defn.schema not in self.schemas:
                raise UnknownSchema(f"unknown schema {defn.schema!r}")
            if defn.name in self.schemas[defn.schema]:
                raise DuplicateTable(f"table {defn.schema}.{defn.name} already exists")
            data = TableData(unique={c: {} for c in defn.unique_columns()})
            self.schemas[defn.schema][defn.name] = Table(defn, data)

    def table(self, schema: str, name: str) -> Table:
        with self.mutex:
            if schema not in self.schemas:
                raise UnknownSchema(f"unknown schema {schema!r}")
            tbl = self.schemas[schema].get(name)
            if tbl is None:
                raise UnknownTable(f"unknown table {schema}.{name}")
            return tbl

    def has_table(self, schema: str, name: str) -> bool:
        with self.mutex:
            return name in self.schemas.get(schema, {})

    def all_tables(self) -> list:
        with self.mutex:
            return [t for tables in self.schemas.values() for t in tables.values()]


# -- row-level checks and mutations ------------------------------------------


def _check_cells(defn: TableDef, cells: dict) -> dict:
    """Type-check and complete a cell map against the table definition."""
    out = {}
    for col in defn.columns:
        out[col.name] = coerce(col.kind, cells.get(col.name))
    for name in cells:
        if name not in out:
            raise UnknownColumn(f"no column {name!r} in {defn.schema}.{defn.name}")
    return out


def _check_constraints(defn: TableDef, data: TableData, cells: dict,
                       row_id: Optional[int], eval_check) -> None:
    for col in defn.columns:
        v = cells[col.name]
        if v is None:
            if col.has(ConstraintKind.NOT_NULL) or col.has(ConstraintKind.PRIMARY_KEY):
                raise ConstraintViolation(
                    f"{defn.schema}.{defn.name}.{col.name} must not be null")
            continue
    for col_name in defn.unique_columns():
        v = cells[col_name]
        if v is None:
            continue
        existing = data.unique[col_name].get(v)
        if existing is not None and existing != row_id:
            raise ConstraintViolation(
                f"duplicate value {v!r} for unique column "
                f"{defn.schema}.{defn.name}.{col_name}")
    for col in defn.columns:
        for c in col.constraints:
            if c.kind is ConstraintKind.CHECK:
                result = eval_check(c.check_expr, cells)
                if result is False:
                    raise ConstraintViolation(
                        f"check failed on {defn.schema}.{defn.name}.{col.name}: "
                        f"{c.check_src}")


def insert_row(defn: TableDef, data: TableData, cells: dict, eval_check) -> int:
    full = _check_cells(defn, cells)
    _check_constraints(defn, data, full, None, eval_check)
    row_id = data.next_row_id
    data.next_row_id += 1
    data.rows[row_id] = full
    for col_name in defn.unique_columns():
        if full[col_name] is not None:
            data.unique[col_name][full[col_name]] = row_id
    return row_id


def update_row(defn: TableDef, data: TableData, row_id: int,
               assignments: dict, eval_check) -> tuple:
    """Apply assignments to one row; returns (old_cells, new_cells)."""
    old = dict(data.rows[row_id])
    new = dict(old)
    for name, value in assignments.items():
        col = defn.column(name)
        new[name] = coerce(col.kind, value)
    _check_constraints(defn, data, new, row_id, eval_check)
    for col_name in defn.unique_columns():
        if old[col_name] != new[col_name]:
            if old[col_name] is not None:
                data.unique[col_name].pop(old[col_name], None)
            if new[col_name] is not None:
                data.unique[col_name][new[col_name]] = row_id
    data.rows[row_id] = new
    return old, new


def delete_row(defn: TableDef, data: TableData, row_id: int) -> dict:
    old = data.rows.pop(row_id)
    for col_name in defn.unique_columns():
        if old[col_name] is not None:
            data.unique[col_name].pop(old[col_name], None)
    return old

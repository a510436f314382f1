"""Shared helpers for building small kernels, tables, and random data."""

from __future__ import annotations

import random

from dbnet.dsl import parse_predicate
from dbnet.store import ColumnDef, Constraint, ConstraintKind, TableDef
from dbnet.values import ValueKind

ROOT = "root"


def col(name: str, kind: str, *constraints: str, check: str = "") -> ColumnDef:
    built = []
    for c in constraints:
        ckind = ConstraintKind(c)
        if ckind is ConstraintKind.CHECK:
            built.append(Constraint(ckind, parse_predicate(check), check))
        else:
            built.append(Constraint(ckind))
    return ColumnDef(name, ValueKind(kind), tuple(built))


def make_table(kernel, schema: str, name: str, columns, user: str = ROOT,
               **kw) -> None:
    if schema not in kernel.store.schemas:
        kernel.create_schema(schema, user)
    kernel.create_table(TableDef(schema=schema, name=name,
                                 columns=tuple(columns), **kw), user)


def insert(kernel, table: str, cells: dict, user: str = ROOT) -> int:
    return kernel.execute_atomic(
        [{"op": "insert", "table": table, "cells": cells}], user)[0]


def update(kernel, table: str, set_cells: dict, where: str,
           user: str = ROOT) -> int:
    return kernel.execute_atomic(
        [{"op": "update", "table": table, "set": set_cells,
          "where": where}], user)[0]


def delete(kernel, table: str, where: str, user: str = ROOT) -> int:
    return kernel.execute_atomic(
        [{"op": "delete", "table": table, "where": where}], user)[0]


def rows(kernel, query: str, user: str = ROOT) -> list:
    return kernel.select(query, user)[1]


def random_cells(rng: random.Random, next_id: int) -> dict:
    return {
        "id": next_id,
        "grp": rng.randrange(0, 4),
        "val": None if rng.random() < 0.15 else round(rng.uniform(-50, 50), 3),
        "tag": rng.choice(["a", "b", "c"]),
    }


SAMPLE_COLUMNS = (
    ("id", "INT", ("PrimaryKey",)),
    ("grp", "INT", ("NotNull",)),
    ("val", "FLOAT", ()),
    ("tag", "TEXT", ()),
)


def make_sample_table(kernel, schema: str = "s", name: str = "t") -> None:
    make_table(kernel, schema, name,
               [col(n, k, *c) for n, k, c in SAMPLE_COLUMNS])

"""Stored-procedure registry and interpreter, plus trigger definitions.

Procedures are parsed and fully resolved (tables, columns, variables, callee
arity) at registration time; the interpreter then runs inside the enclosing
transaction via kernel callbacks for DML, CALL, and EXTERNAL.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

from . import ast_nodes as A
from .dsl import parse_procedure
from .errors import (
    ArgMismatch,
    DuplicateProcedure,
    DuplicateTrigger,
    ResolutionError,
    RuntimeFault,
    UnknownProcedure,
    UnknownTable,
)
from .evaluate import Scope, eval_expr, evaluate_select
from .values import ValueKind, coerce, TypeMismatch

EXTERNAL_API = ("create_node", "kill_node", "set_weights")

TRIGGER_EVENTS = ("AfterInsert", "AfterUpdate", "AfterDelete")

MAX_CASCADE_DEPTH = 16
MAX_CALL_DEPTH = 64


@dataclass(frozen=True)
class ProcedureDef:
    name: str
    params: tuple  # of (name, ValueKind)
    body: tuple
    source_text: str


@dataclass(frozen=True)
class TriggerDef:
    name: str
    table: tuple  # (schema, name)
    event: str
    when: Optional[A.Expr]
    when_src: str
    procedure: str
    order_key: int


class PolicyRegistry:
    def __init__(self):
        self._lock = threading.Lock()
        self.procedures: dict = {}
        self.triggers: dict = {}
        self._next_order = 1

    def add_procedure(self, proc: ProcedureDef) -> None:
        with self._lock:
            if proc.name in self.procedures:
                raise DuplicateProcedure(f"procedure {proc.name!r} already exists")
            self.procedures[proc.name] = proc

    def procedure(self, name: str) -> ProcedureDef:
        with self._lock:
            p = self.procedures.get(name)
        if p is None:
            raise UnknownProcedure(f"unknown procedure {name!r}")
        return p

    def add_trigger(self, name, table, event, when, when_src, procedure) -> TriggerDef:
        with self._lock:
            if name in self.triggers:
                raise DuplicateTrigger(f"trigger {name!r} already exists")
            trig = TriggerDef(name, table, event, when, when_src, procedure,
                              order_key=self._next_order)
            self._next_order += 1
            self.triggers[name] = trig
            return trig

    def triggers_for(self, table: tuple, event: str) -> list:
        with self._lock:
            out = [t for t in self.triggers.values()
                   if t.table == table and t.event == event]
        return sorted(out, key=lambda t: t.order_key)


# -- registration-time resolution ---------------------------------------------


class _ResolveCtx:
    def __init__(self, store, registry, proc: A.Procedure):
        self.store = store
        self.registry = registry
        self.proc = proc
        self.declared = {n for n, _ in proc.params}
        self.loop_vars: dict = {}  # var -> set of projected column names


def resolve_procedure(proc: A.Procedure, store, registry: PolicyRegistry) -> None:
    seen = set()
    for n, _ in proc.params:
        if n in seen:
            raise ResolutionError(f"duplicate parameter {n!r}")
        seen.add(n)
    ctx = _ResolveCtx(store, registry, proc)
    _resolve_block(proc.body, ctx)


def _table_def(ctx, tref: A.TableRef):
    try:
        return ctx.store.table(tref.schema, tref.name).defn
    except Exception as exc:
        raise ResolutionError(str(exc)) from exc


def _resolve_expr(expr, ctx, sql_cols=None):
    """sql_cols: set of column names usable as bare ColRefs, or None."""
    if isinstance(expr, A.Lit):
        return
    if isinstance(expr, A.ColRef):
        cols = sql_cols or set()
        if expr.qualifier is not None or expr.name not in cols:
            raise ResolutionError(f"unknown column reference {expr.src()}")
        return
    if isinstance(expr, A.VarRef):
        if expr.name not in ctx.declared:
            raise ResolutionError(f"undeclared variable {expr.name!r}")
        return
    if isinstance(expr, A.FieldRef):
        if expr.base in ("OLD", "NEW"):
            return  # validity depends on trigger context, checked at runtime
        fields = ctx.loop_vars.get(expr.base)
        if fields is None:
            raise ResolutionError(f"unknown row variable {expr.base!r}")
        if expr.name not in fields:
            raise ResolutionError(f"{expr.base!r} has no field {expr.name!r}")
        return
    if isinstance(expr, A.Unary):
        _resolve_expr(expr.operand, ctx, sql_cols)
        return
    if isinstance(expr, A.Binary):
        _resolve_expr(expr.left, ctx, sql_cols)
        _resolve_expr(expr.right, ctx, sql_cols)
        return
    raise ResolutionError(f"cannot resolve {expr!r}")


def _resolve_select(sel: A.Select, ctx) -> list:
    """Returns projected column names (for loop-var field checking)."""
    if isinstance(sel.source, A.Join):
        defs = [_table_def(ctx, sel.source.left), _table_def(ctx, sel.source.right)]
        names = [sel.source.left.name, sel.source.right.name]
    else:
        defs = [_table_def(ctx, sel.source)]
        names = [sel.source.name]

    all_cols = set()
    for d in defs:
        all_cols |= {c.name for c in d.columns}

    def check_col(col: A.ColRef):
        matches = 0
        for tname, d in zip(names, defs):
            if col.qualifier is not None and col.qualifier != tname:
                continue
            if any(c.name == col.name for c in d.columns):
                matches += 1
        if matches == 0:
            raise ResolutionError(f"unknown column {col.src()}")
        if matches > 1:
            raise ResolutionError(f"ambiguous column {col.src()}")

    if isinstance(sel.source, A.Join):
        check_col(sel.source.on_left)
        check_col(sel.source.on_right)
    labels = []
    for p in sel.projections:
        if isinstance(p, A.Aggregate):
            if p.column is not None:
                check_col(p.column)
            labels.append(None)
        else:
            check_col(p)
            labels.append(p.name)
    for c in sel.group_by:
        check_col(c)
    if sel.where is not None:
        _resolve_expr(sel.where, ctx, sql_cols=all_cols)
    return labels


def _resolve_block(body, ctx) -> None:
    for stmt in body:
        if isinstance(stmt, A.Declare):
            if stmt.name in ctx.declared:
                raise ResolutionError(f"variable {stmt.name!r} already declared")
            ctx.declared.add(stmt.name)
        elif isinstance(stmt, A.SetStmt):
            if stmt.name not in ctx.declared:
                raise ResolutionError(f"undeclared variable {stmt.name!r}")
            _resolve_expr(stmt.expr, ctx)
        elif isinstance(stmt, A.IfStmt):
            for cond, b in stmt.branches:
                _resolve_expr(cond, ctx)
                _resolve_block(b, ctx)
            _resolve_block(stmt.else_body, ctx)
        elif isinstance(stmt, A.ForLoop):
            labels = _resolve_select(stmt.select, ctx)
            if any(l is None for l in labels):
                raise ResolutionError(
                    "FOR loops iterate plain column projections only")
            prev = ctx.loop_vars.get(stmt.var)
            ctx.loop_vars[stmt.var] = set(labels)
            _resolve_block(stmt.body, ctx)
            if prev is None:
                del ctx.loop_vars[stmt.var]
            else:
                ctx.loop_vars[stmt.var] = prev
        elif isinstance(stmt, A.InsertStmt):
            defn = _table_def(ctx, stmt.table)
            for col in stmt.columns:
                defn.column(col)
            if len(stmt.columns) != len(stmt.values):
                raise ResolutionError("INSERT column/value count mismatch")
            for e in stmt.values:
                _resolve_expr(e, ctx, sql_cols=set())
        elif isinstance(stmt, A.UpdateStmt):
            defn = _table_def(ctx, stmt.table)
            cols = {c.name for c in defn.columns}
            for col, e in stmt.assignments:
                defn.column(col)
                _resolve_expr(e, ctx, sql_cols=cols)
            if stmt.where is not None:
                _resolve_expr(stmt.where, ctx, sql_cols=cols)
        elif isinstance(stmt, A.DeleteStmt):
            defn = _table_def(ctx, stmt.table)
            if stmt.where is not None:
                _resolve_expr(stmt.where, ctx,
                              sql_cols={c.name for c in defn.columns})
        elif isinstance(stmt, A.SelectInto):
            _resolve_select(stmt.select, ctx)
            if len(stmt.targets) != len(stmt.select.projections):
                raise ResolutionError("SELECT INTO target/projection count mismatch")
            for t in stmt.targets:
                if t not in ctx.declared:
                    raise ResolutionError(f"undeclared variable {t!r}")
        elif isinstance(stmt, A.CallStmt):
            if stmt.name != ctx.proc.name:  # allow self-recursion
                callee = ctx.registry.procedure(stmt.name)
                if len(callee.params) != len(stmt.args):
                    raise ResolutionError(
                        f"{stmt.name} takes {len(callee.params)} args, "
                        f"got {len(stmt.args)}")
            for e in stmt.args:
                _resolve_expr(e, ctx)
        elif isinstance(stmt, A.ExternalStmt):
            if stmt.name not in EXTERNAL_API:
                raise ResolutionError(f"unknown external call {stmt.name!r}")
            for e in stmt.args:
                _resolve_expr(e, ctx)
            if stmt.into is not None and stmt.into not in ctx.declared:
                raise ResolutionError(f"undeclared variable {stmt.into!r}")
        elif isinstance(stmt, A.ReturnStmt):
            for e in stmt.exprs:
                _resolve_expr(e, ctx)
        elif isinstance(stmt, A.RaiseStmt):
            pass
        else:
            raise ResolutionError(f"unknown statement {stmt!r}")


# -- execution -----------------------------------------------------------------


class _Return(Exception):
    def __init__(self, values):
        self.values = values


class ProcEnv(Scope):
    """Variable and row bindings for one procedure activation."""

    def __init__(self):
        self.vars: dict = {}  # name -> [ValueKind, value]
        self.rows: dict = {}  # OLD / NEW / loop vars -> cells

    def declare(self, name: str, kind: ValueKind) -> None:
        self.vars[name] = [kind, None]

    def assign(self, name: str, value) -> None:
        slot = self.vars.get(name)
        if slot is None:
            raise RuntimeFault(f"undeclared variable {name!r}")
        slot[1] = coerce(slot[0], value)

    def resolve_var(self, name):
        slot = self.vars.get(name)
        if slot is None:
            raise RuntimeFault(f"undeclared variable {name!r}")
        return slot[1]

    def resolve_field(self, base, name):
        row = self.rows.get(base)
        if row is None:
            raise RuntimeFault(f"no row bound to {base!r} here")
        if name not in row:
            raise RuntimeFault(f"{base} has no field {name!r}")
        return row[name]


class TriggerScope(Scope):
    """Scope for trigger WHEN predicates: OLD/NEW only."""

    def __init__(self, old: Optional[dict], new: Optional[dict]):
        self.rows = {}
        if old is not None:
            self.rows["OLD"] = old
        if new is not None:
            self.rows["NEW"] = new

    def resolve_field(self, base, name):
        row = self.rows.get(base)
        if row is None:
            raise RuntimeFault(f"no {base} row for this event")
        if name not in row:
            raise RuntimeFault(f"{base} has no field {name!r}")
        return row[name]


class Interpreter:
    """Executes a procedure body inside the enclosing transaction.

    The kernel supplies the side-effecting operations so this class stays
    free of storage and provenance concerns.
    """

    def __init__(self, kernel):
        self.kernel = kernel

    def run(self, proc: ProcedureDef, args: list, txn, user: str,
            trigger_rows: Optional[dict] = None) -> list:
        if len(args) != len(proc.params):
            raise ArgMismatch(
                f"{proc.name} takes {len(proc.params)} args, got {len(args)}")
        env = ProcEnv()
        for (pname, pkind), value in zip(proc.params, args):
            env.declare(pname, pkind)
            try:
                env.assign(pname, value)
            except TypeMismatch as exc:
                raise ArgMismatch(f"argument {pname!r}: {exc.message}") from exc
        if trigger_rows:
            env.rows.update(trigger_rows)
        try:
            self._block(proc.body, env, txn, user)
        except _Return as r:
            return list(r.values)
        return []

    def _block(self, body, env: ProcEnv, txn, user: str) -> None:
        for stmt in body:
            self._stmt(stmt, env, txn, user)

    def _stmt(self, stmt, env: ProcEnv, txn, user: str) -> None:
        k = self.kernel
        if isinstance(stmt, A.Declare):
            env.declare(stmt.name, stmt.kind)
        elif isinstance(stmt, A.SetStmt):
            env.assign(stmt.name, eval_expr(stmt.expr, env))
        elif isinstance(stmt, A.IfStmt):
            for cond, body in stmt.branches:
                if eval_expr(cond, env) is True:
                    self._block(body, env, txn, user)
                    return
            self._block(stmt.else_body, env, txn, user)
        elif isinstance(stmt, A.ForLoop):
            labels, rows = evaluate_select(
                stmt.select, k.txn_view(txn), parent=env)
            prev = env.rows.get(stmt.var)
            try:
                for row in rows:
                    env.rows[stmt.var] = dict(zip(labels, row))
                    self._block(stmt.body, env, txn, user)
            finally:
                if prev is None:
                    env.rows.pop(stmt.var, None)
                else:
                    env.rows[stmt.var] = prev
        elif isinstance(stmt, A.InsertStmt):
            cells = {col: eval_expr(e, env)
                     for col, e in zip(stmt.columns, stmt.values)}
            k.txn_insert(txn, stmt.table.schema, stmt.table.name, cells, user)
        elif isinstance(stmt, A.UpdateStmt):
            k.txn_update(txn, stmt.table.schema, stmt.table.name,
                         stmt.where, dict(stmt.assignments), user, env=env)
        elif isinstance(stmt, A.DeleteStmt):
            k.txn_delete(txn, stmt.table.schema, stmt.table.name,
                         stmt.where, user, env=env)
        elif isinstance(stmt, A.SelectInto):
            _, rows = evaluate_select(stmt.select, k.txn_view(txn), parent=env)
            if len(rows) > 1:
                raise RuntimeFault("SELECT INTO matched more than one row")
            values = rows[0] if rows else (None,) * len(stmt.targets)
            for target, value in zip(stmt.targets, values):
                env.assign(target, value)
        elif isinstance(stmt, A.CallStmt):
            args = [eval_expr(e, env) for e in stmt.args]
            k.invoke_procedure(stmt.name, args, txn, user)
        elif isinstance(stmt, A.ExternalStmt):
            args = [eval_expr(e, env) for e in stmt.args]
            result = k.external_call(stmt.name, args, txn, user)
            if stmt.into is not None:
                env.assign(stmt.into, result)
        elif isinstance(stmt, A.ReturnStmt):
            raise _Return([eval_expr(e, env) for e in stmt.exprs])
        elif isinstance(stmt, A.RaiseStmt):
            raise RuntimeFault(stmt.message)
        else:
            raise RuntimeFault(f"unknown statement {stmt!r}")

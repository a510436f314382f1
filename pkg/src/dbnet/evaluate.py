"""Expression evaluation scopes and the SELECT evaluator.

A *view* is anything with ``lookup(schema, name) -> (TableDef, TableData)``;
the transaction manager provides staged views, the store a committed view.
"""

from __future__ import annotations

from typing import Optional

from . import ast_nodes as A
from .errors import MalformedQuery, UnknownColumn
from .values import arith, compare, logic_and, logic_not, logic_or


class Scope:
    """Base resolution scope; concrete scopes override what they can resolve."""

    def resolve_col(self, qualifier, name):
        raise UnknownColumn(f"no column {name!r} in this context")

    def resolve_var(self, name):
        raise UnknownColumn(f"unknown variable {name!r}")

    def resolve_field(self, base, name):
        raise UnknownColumn(f"unknown reference {base}.{name}")


EMPTY_SCOPE = Scope()


class RowScope(Scope):
    """Scope over one (possibly joined) row; delegates vars/fields upward."""

    def __init__(self, by_qualified: dict, by_name: dict, parent: Scope = EMPTY_SCOPE):
        self.by_qualified = by_qualified  # (table_name, col) -> value
        self.by_name = by_name  # col -> value | _AMBIGUOUS
        self.parent = parent

    def resolve_col(self, qualifier, name):
        if qualifier is not None:
            key = (qualifier, name)
            if key not in self.by_qualified:
                raise UnknownColumn(f"unknown column {qualifier}.{name}")
            return self.by_qualified[key]
        if name not in self.by_name:
            raise UnknownColumn(f"unknown column {name!r}")
        v = self.by_name[name]
        if v is _AMBIGUOUS:
            raise MalformedQuery(f"ambiguous column {name!r}; qualify it")
        return v

    def resolve_var(self, name):
        return self.parent.resolve_var(name)

    def resolve_field(self, base, name):
        return self.parent.resolve_field(base, name)


class CellsScope(Scope):
    """Scope over a single row's cell map (CHECK constraints, UPDATE SET)."""

    def __init__(self, cells: dict, parent: Scope = EMPTY_SCOPE):
        self.cells = cells
        self.parent = parent

    def resolve_col(self, qualifier, name):
        if name not in self.cells:
            raise UnknownColumn(f"unknown column {name!r}")
        return self.cells[name]

    def resolve_var(self, name):
        return self.parent.resolve_var(name)

    def resolve_field(self, base, name):
        return self.parent.resolve_field(base, name)


_AMBIGUOUS = object()


def eval_expr(expr, scope: Scope):
    if isinstance(expr, A.Lit):
        return expr.value
    if isinstance(expr, A.ColRef):
        return scope.resolve_col(expr.qualifier, expr.name)
    if isinstance(expr, A.VarRef):
        return scope.resolve_var(expr.name)
    if isinstance(expr, A.FieldRef):
        return scope.resolve_field(expr.base, expr.name)
    if isinstance(expr, A.Unary):
        v = eval_expr(expr.operand, scope)
        if expr.op == "NOT":
            return logic_not(v)
        return arith("-", 0, v) if v is not None else None
    if isinstance(expr, A.Binary):
        if expr.op == "AND":
            return logic_and(eval_expr(expr.left, scope), eval_expr(expr.right, scope))
        if expr.op == "OR":
            return logic_or(eval_expr(expr.left, scope), eval_expr(expr.right, scope))
        left = eval_expr(expr.left, scope)
        right = eval_expr(expr.right, scope)
        if expr.op in ("=", "!=", "<", "<=", ">", ">="):
            return compare(expr.op, left, right)
        return arith(expr.op, left, right)
    raise MalformedQuery(f"cannot evaluate {expr!r}")


# -- SELECT -------------------------------------------------------------------


def _source_tables(select: A.Select, view) -> list:
    if isinstance(select.source, A.Join):
        refs = [select.source.left, select.source.right]
    else:
        refs = [select.source]
    out = []
    for ref in refs:
        defn, data = view.lookup(ref.schema, ref.name)
        out.append((ref.name, defn, data))
    return out


def _resolve_colref(col: A.ColRef, tables: list) -> tuple:
    """Return (table_name, col_name) or raise."""
    matches = []
    for tname, defn, _ in tables:
        if col.qualifier is not None and col.qualifier != tname:
            continue
        if any(c.name == col.name for c in defn.columns):
            matches.append((tname, col.name))
    if not matches:
        raise UnknownColumn(f"unknown column {col.src()}")
    if len(matches) > 1:
        raise MalformedQuery(f"ambiguous column {col.src()}; qualify it")
    return matches[0]


def _row_scope(parts: list, tables: list, parent: Scope) -> RowScope:
    """parts: list of (table_name, cells)."""
    by_qualified = {}
    by_name = {}
    for tname, cells in parts:
        for col, v in cells.items():
            by_qualified[(tname, col)] = v
            if col in by_name:
                by_name[col] = _AMBIGUOUS
            else:
                by_name[col] = v
    return RowScope(by_qualified, by_name, parent)


def _iter_rows(select: A.Select, tables: list, parent: Scope):
    """Yield (order_key, RowScope, parts) for the filtered source rows."""
    if isinstance(select.source, A.Join):
        (lname, ldefn, ldata), (rname, rdefn, rdata) = tables
        lcol = _resolve_colref(select.source.on_left, tables)
        rcol = _resolve_colref(select.source.on_right, tables)
        if lcol[0] == rcol[0]:
            raise MalformedQuery("join condition must reference both tables")
        if lcol[0] == rname:
            lcol, rcol = rcol, lcol
        for lrid in sorted(ldata.rows):
            for rrid in sorted(rdata.rows):
                lcells = ldata.rows[lrid]
                rcells = rdata.rows[rrid]
                if compare("=", lcells[lcol[1]], rcells[rcol[1]]) is not True:
                    continue
                parts = [(lname, lcells), (rname, rcells)]
                yield (lrid, rrid), _row_scope(parts, tables, parent), parts
    else:
        tname, defn, data = tables[0]
        for rid in sorted(data.rows):
            parts = [(tname, data.rows[rid])]
            yield (rid,), _row_scope(parts, tables, parent), parts


def _sort_key(values: tuple) -> tuple:
    return tuple((0, 0) if v is None else (1, v) for v in values)


def _aggregate(agg: A.Aggregate, rows: list, tables: list):
    if agg.column is None:  # COUNT(*)
        return len(rows)
    tname, cname = _resolve_colref(agg.column, tables)
    vals = []
    for _, _, parts in rows:
        for pname, cells in parts:
            if pname == tname:
                v = cells[cname]
                if v is not None:
                    vals.append(v)
                break
    if agg.func == "COUNT":
        return len(vals)
    if not vals:
        return None
    if agg.func == "SUM":
        total = vals[0]
        for v in vals[1:]:
            total = arith("+", total, v)
        return total
    if agg.func == "AVG":
        total = 0.0
        for v in vals:
            total += v
        return total / len(vals)
    if agg.func == "MIN":
        return min(vals)
    return max(vals)


def evaluate_select(select: A.Select, view, parent: Scope = EMPTY_SCOPE) -> tuple:
    """Evaluate a SELECT against a view; returns (column_labels, rows)."""
    tables = _source_tables(select, view)

    # Validate projections / grouping shape up front.
    group_cols = [_resolve_colref(c, tables) for c in select.group_by]
    has_agg = any(isinstance(p, A.Aggregate) for p in select.projections)
    labels = []
    for p in select.projections:
        if isinstance(p, A.Aggregate):
            if p.column is not None:
                _resolve_colref(p.column, tables)
            labels.append(p.label)
        else:
            resolved = _resolve_colref(p, tables)
            labels.append(p.src())
            if select.group_by and resolved not in group_cols:
                raise MalformedQuery(
                    f"non-aggregate projection {p.src()} must appear in GROUP BY")
            if not select.group_by and has_agg:
                raise MalformedQuery(
                    f"projection {p.src()} mixes with aggregates without GROUP BY")

    rows = []
    for order_key, scope, parts in _iter_rows(select, tables, parent):
        if select.where is not None:
            if eval_expr(select.where, scope) is not True:
                continue
        rows.append((order_key, scope, parts))

    def col_value(resolved, parts):
        tname, cname = resolved
        for pname, cells in parts:
            if pname == tname:
                return cells[cname]
        raise UnknownColumn(f"unknown column {tname}.{cname}")

    if select.group_by:
        groups = {}
        order = []
        for row in rows:
            key = tuple(col_value(rc, row[2]) for rc in group_cols)
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(row)
        out = []
        for key in sorted(order, key=_sort_key):
            grouped = groups[key]
            result = []
            for p in select.projections:
                if isinstance(p, A.Aggregate):
                    result.append(_aggregate(p, grouped, tables))
                else:
                    result.append(col_value(_resolve_colref(p, tables), grouped[0][2]))
            out.append(tuple(result))
        return labels, out

    if has_agg:
        result = tuple(_aggregate(p, rows, tables) for p in select.projections)
        return labels, [result]

    out = []
    for order_key, scope, parts in sorted(rows, key=lambda r: r[0]):
        out.append(tuple(col_value(_resolve_colref(p, tables), parts)
                         for p in select.projections))
    return labels, out

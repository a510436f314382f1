"""AST node types for the policy DSL and the embedded query subset.

Every node knows how to print itself back to source (``src()``); the parser
round-trips through this printer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .values import ValueKind

# -- expressions -------------------------------------------------------------


@dataclass(frozen=True)
class Lit:
    value: object  # int, float, str, bool or None

    def src(self) -> str:
        if self.value is None:
            return "NULL"
        if isinstance(self.value, bool):
            return "TRUE" if self.value else "FALSE"
        if isinstance(self.value, str):
            return "'" + self.value.replace("'", "''") + "'"
        return repr(self.value)


@dataclass(frozen=True)
class ColRef:
    """Column reference in a SQL context; qualifier is a table name or None."""

    qualifier: Optional[str]
    name: str

    def src(self) -> str:
        return f"{self.qualifier}.{self.name}" if self.qualifier else self.name


@dataclass(frozen=True)
class VarRef:
    """Procedure variable/parameter. Printed bare in imperative contexts and
    as ``:name`` in SQL contexts (tracked by the printer via ``sql``)."""

    name: str
    sql: bool = False

    def src(self) -> str:
        return f":{self.name}" if self.sql else self.name


@dataclass(frozen=True)
class FieldRef:
    """Qualified non-column reference: OLD.x, NEW.x, or loop-row.x."""

    base: str
    name: str
    sql: bool = False

    def src(self) -> str:
        prefix = ":" if self.sql and self.base not in ("OLD", "NEW") else ""
        return f"{prefix}{self.base}.{self.name}"


@dataclass(frozen=True)
class Unary:
    op: str  # "NOT" | "-"
    operand: "Expr"

    def src(self) -> str:
        if self.op == "NOT":
            return f"NOT ({self.operand.src()})"
        return f"-({self.operand.src()})"


@dataclass(frozen=True)
class Binary:
    op: str  # comparison, arithmetic, AND, OR
    left: "Expr"
    right: "Expr"

    def src(self) -> str:
        return f"({self.left.src()} {self.op} {self.right.src()})"


Expr = Union[Lit, ColRef, VarRef, FieldRef, Unary, Binary]

# -- select ------------------------------------------------------------------

AGG_FUNCS = ("AVG", "SUM", "COUNT", "MIN", "MAX")


@dataclass(frozen=True)
class Aggregate:
    func: str  # one of AGG_FUNCS
    column: Optional[ColRef]  # None means COUNT(*)

    def src(self) -> str:
        inner = self.column.src() if self.column else "*"
        return f"{self.func}({inner})"

    @property
    def label(self) -> str:
        return self.src()


@dataclass(frozen=True)
class TableRef:
    schema: str
    name: str

    def src(self) -> str:
        return f"{self.schema}.{self.name}"

    @property
    def key(self) -> tuple:
        return (self.schema, self.name)


@dataclass(frozen=True)
class Join:
    left: TableRef
    right: TableRef
    on_left: ColRef
    on_right: ColRef

    def src(self) -> str:
        return (f"{self.left.src()} JOIN {self.right.src()} "
                f"ON {self.on_left.src()} = {self.on_right.src()}")


@dataclass(frozen=True)
class Select:
    projections: tuple  # of ColRef | Aggregate
    source: Union[TableRef, Join]
    where: Optional[Expr] = None
    group_by: tuple = ()

    def src(self) -> str:
        parts = ["SELECT", ", ".join(p.src() for p in self.projections),
                 "FROM", self.source.src()]
        if self.where is not None:
            parts += ["WHERE", self.where.src()]
        if self.group_by:
            parts += ["GROUP BY", ", ".join(c.src() for c in self.group_by)]
        return " ".join(parts)


# -- statements ---------------------------------------------------------------


@dataclass(frozen=True)
class Declare:
    name: str
    kind: ValueKind

    def src(self) -> str:
        return f"DECLARE {self.name} : {self.kind.value};"


@dataclass(frozen=True)
class SetStmt:
    name: str
    expr: Expr

    def src(self) -> str:
        return f"SET {self.name} = {self.expr.src()};"


@dataclass(frozen=True)
class IfStmt:
    branches: tuple  # of (cond: Expr, body: tuple[Stmt])
    else_body: tuple = ()

    def src(self) -> str:
        out = []
        for i, (cond, body) in enumerate(self.branches):
            kw = "IF" if i == 0 else "ELSIF"
            out.append(f"{kw} {cond.src()} THEN")
            out += [s.src() for s in body]
        if self.else_body:
            out.append("ELSE")
            out += [s.src() for s in self.else_body]
        out.append("END IF;")
        return "\n".join(out)


@dataclass(frozen=True)
class ForLoop:
    var: str
    select: Select
    body: tuple

    def src(self) -> str:
        lines = [f"FOR {self.var} IN ({self.select.src()}) LOOP"]
        lines += [s.src() for s in self.body]
        lines.append("END LOOP;")
        return "\n".join(lines)


@dataclass(frozen=True)
class InsertStmt:
    table: TableRef
    columns: tuple
    values: tuple  # of Expr

    def src(self) -> str:
        return (f"INSERT INTO {self.table.src()} ({', '.join(self.columns)}) "
                f"VALUES ({', '.join(e.src() for e in self.values)});")


@dataclass(frozen=True)
class UpdateStmt:
    table: TableRef
    assignments: tuple  # of (col_name, Expr)
    where: Optional[Expr] = None

    def src(self) -> str:
        sets = ", ".join(f"{c} = {e.src()}" for c, e in self.assignments)
        s = f"UPDATE {self.table.src()} SET {sets}"
        if self.where is not None:
            s += f" WHERE {self.where.src()}"
        return s + ";"


@dataclass(frozen=True)
class DeleteStmt:
    table: TableRef
    where: Optional[Expr] = None

    def src(self) -> str:
        s = f"DELETE FROM {self.table.src()}"
        if self.where is not None:
            s += f" WHERE {self.where.src()}"
        return s + ";"


@dataclass(frozen=True)
class SelectInto:
    select: Select
    targets: tuple  # variable names, one per projection

    def src(self) -> str:
        head = ", ".join(p.src() for p in self.select.projections)
        s = f"SELECT {head} INTO {', '.join(self.targets)} FROM {self.select.source.src()}"
        if self.select.where is not None:
            s += f" WHERE {self.select.where.src()}"
        if self.select.group_by:
            s += " GROUP BY " + ", ".join(c.src() for c in self.select.group_by)
        return s + ";"


@dataclass(frozen=True)
class CallStmt:
    name: str
    args: tuple  # of Expr

    def src(self) -> str:
        return f"CALL {self.name}({', '.join(e.src() for e in self.args)});"


@dataclass(frozen=True)
class ExternalStmt:
    name: str
    args: tuple  # of Expr
    into: Optional[str] = None

    def src(self) -> str:
        s = f"EXTERNAL {self.name}({', '.join(e.src() for e in self.args)})"
        if self.into:
            s += f" INTO {self.into}"
        return s + ";"


@dataclass(frozen=True)
class ReturnStmt:
    exprs: tuple

    def src(self) -> str:
        return f"RETURN {', '.join(e.src() for e in self.exprs)};" if self.exprs else "RETURN;"


@dataclass(frozen=True)
class RaiseStmt:
    message: str

    def src(self) -> str:
        return f"RAISE '{self.message}';"


Stmt = Union[Declare, SetStmt, IfStmt, ForLoop, InsertStmt, UpdateStmt,
             DeleteStmt, SelectInto, CallStmt, ExternalStmt, ReturnStmt, RaiseStmt]


@dataclass(frozen=True)
class Procedure:
    name: str
    params: tuple  # of (name, ValueKind)
    body: tuple  # of Stmt

    def src(self) -> str:
        params = ", ".join(f"{n} : {k.value}" for n, k in self.params)
        lines = [f"PROC {self.name}({params})", "BEGIN"]
        lines += [s.src() for s in self.body]
        lines.append("END")
        return "\n".join(lines)

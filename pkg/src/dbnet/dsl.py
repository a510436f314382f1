"""Lexer and recursive-descent parser for the policy DSL and query subset.

Two expression contexts exist:

* SQL context (WHERE clauses, VALUES, UPDATE SET right-hand sides): bare
  identifiers are column references, ``:name`` refers to a procedure variable
  or parameter, and ``OLD.x`` / ``NEW.x`` read the trigger event rows.
* imperative context (SET, IF, CALL/EXTERNAL arguments, RETURN): bare
  identifiers are variables; ``loopvar.x`` and ``OLD.x`` / ``NEW.x`` are
  field reads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import ast_nodes as A
from .errors import ParseError
from .values import ValueKind

KEYWORDS = {
    "PROC", "BEGIN", "END", "DECLARE", "SET", "IF", "THEN", "ELSIF", "ELSE",
    "FOR", "IN", "LOOP", "INSERT", "INTO", "VALUES", "UPDATE", "DELETE",
    "FROM", "WHERE", "SELECT", "GROUP", "BY", "JOIN", "ON", "CALL",
    "EXTERNAL", "RETURN", "RAISE", "AND", "OR", "NOT", "NULL", "TRUE",
    "FALSE", "INT", "FLOAT", "TEXT", "BOOL", "TS",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<float>\d+\.\d+([eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|[=<>+\-*/(),;:.])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    type: str  # "kw", "ident", "int", "float", "string", "op", "eof"
    value: str
    line: int
    col: int


def tokenize(source: str) -> list:
    tokens = []
    pos = 0
    line = 1
    line_start = 0
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        if not m:
            raise ParseError(f"unexpected character {source[pos]!r}",
                             line=line, col=pos - line_start + 1)
        text = m.group(0)
        col = pos - line_start + 1
        if m.lastgroup == "ws":
            nl = text.count("\n")
            if nl:
                line += nl
                line_start = pos + text.rfind("\n") + 1
        elif m.lastgroup == "ident":
            ttype = "kw" if text in KEYWORDS else "ident"
            tokens.append(Token(ttype, text, line, col))
        elif m.lastgroup == "string":
            tokens.append(Token("string", text[1:-1].replace("''", "'"), line, col))
        else:
            tokens.append(Token(m.lastgroup, text, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, n - line_start + 1))
    return tokens


class Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.i = 0

    # -- plumbing -------------------------------------------------------

    @property
    def cur(self) -> Token:
        return self.tokens[self.i]

    def error(self, expected: str) -> ParseError:
        t = self.cur
        got = t.value or "<eof>"
        return ParseError(f"unexpected {got!r}", line=t.line, col=t.col, expected=expected)

    def at_kw(self, *kws) -> bool:
        return self.cur.type == "kw" and self.cur.value in kws

    def at_op(self, *ops) -> bool:
        return self.cur.type == "op" and self.cur.value in ops

    def advance(self) -> Token:
        t = self.cur
        self.i += 1
        return t

    def expect_kw(self, kw: str) -> Token:
        if not self.at_kw(kw):
            raise self.error(kw)
        return self.advance()

    def expect_op(self, op: str) -> Token:
        if not self.at_op(op):
            raise self.error(repr(op))
        return self.advance()

    def expect_ident(self) -> str:
        if self.cur.type != "ident":
            raise self.error("identifier")
        return self.advance().value

    def expect_kind(self) -> ValueKind:
        if not self.at_kw("INT", "FLOAT", "TEXT", "BOOL", "TS"):
            raise self.error("type kind")
        return ValueKind(self.advance().value)

    # -- expressions ----------------------------------------------------

    def expression(self, sql: bool):
        return self._or(sql)

    def _or(self, sql):
        left = self._and(sql)
        while self.at_kw("OR"):
            self.advance()
            left = A.Binary("OR", left, self._and(sql))
        return left

    def _and(self, sql):
        left = self._not(sql)
        while self.at_kw("AND"):
            self.advance()
            left = A.Binary("AND", left, self._not(sql))
        return left

    def _not(self, sql):
        if self.at_kw("NOT"):
            self.advance()
            return A.Unary("NOT", self._not(sql))
        return self._comparison(sql)

    def _comparison(self, sql):
        left = self._additive(sql)
        if self.at_op("=", "!=", "<", "<=", ">", ">="):
            op = self.advance().value
            return A.Binary(op, left, self._additive(sql))
        return left

    def _additive(self, sql):
        left = self._multiplicative(sql)
        while self.at_op("+", "-"):
            op = self.advance().value
            left = A.Binary(op, left, self._multiplicative(sql))
        return left

    def _multiplicative(self, sql):
        left = self._unary(sql)
        while self.at_op("*", "/"):
            op = self.advance().value
            left = A.Binary(op, left, self._unary(sql))
        return left

    def _unary(self, sql):
        if self.at_op("-"):
            self.advance()
            return A.Unary("-", self._unary(sql))
        return self._primary(sql)

    def _primary(self, sql):
        t = self.cur
        if t.type == "int":
            self.advance()
            return A.Lit(int(t.value))
        if t.type == "float":
            self.advance()
            return A.Lit(float(t.value))
        if t.type == "string":
            self.advance()
            return A.Lit(t.value)
        if self.at_kw("NULL"):
            self.advance()
            return A.Lit(None)
        if self.at_kw("TRUE"):
            self.advance()
            return A.Lit(True)
        if self.at_kw("FALSE"):
            self.advance()
            return A.Lit(False)
        if self.at_op("("):
            self.advance()
            e = self.expression(sql)
            self.expect_op(")")
            return e
        if self.at_op(":"):
            self.advance()
            name = self.expect_ident()
            if self.at_op("."):
                self.advance()
                return A.FieldRef(name, self.expect_ident(), sql=True)
            return A.VarRef(name, sql=True)
        if t.type == "ident":
            self.advance()
            if self.at_op("."):
                self.advance()
                field = self.expect_ident()
                if sql and t.value not in ("OLD", "NEW"):
                    return A.ColRef(t.value, field)
                return A.FieldRef(t.value, field, sql=sql)
            if sql:
                return A.ColRef(None, t.value)
            return A.VarRef(t.value)
        raise self.error("expression")

    # -- select ----------------------------------------------------------

    def table_ref(self) -> A.TableRef:
        schema = self.expect_ident()
        self.expect_op(".")
        return A.TableRef(schema, self.expect_ident())

    def _col_ref(self) -> A.ColRef:
        name = self.expect_ident()
        if self.at_op("."):
            self.advance()
            return A.ColRef(name, self.expect_ident())
        return A.ColRef(None, name)

    def _projection(self):
        nxt = self.tokens[self.i + 1] if self.i + 1 < len(self.tokens) else None
        if (self.cur.type == "ident" and self.cur.value.upper() in A.AGG_FUNCS
                and nxt is not None and nxt.type == "op" and nxt.value == "("):
            func = self.advance().value.upper()
            self.expect_op("(")
            if self.at_op("*"):
                self.advance()
                col = None
            else:
                col = self._col_ref()
            self.expect_op(")")
            return A.Aggregate(func, col)
        if self.cur.type == "ident":
            return self._col_ref()
        raise self.error("projection")

    def select_tail(self, projections) -> A.Select:
        """Parse FROM ... [JOIN ...] [WHERE ...] [GROUP BY ...]."""
        self.expect_kw("FROM")
        source = self.table_ref()
        if self.at_kw("JOIN"):
            self.advance()
            right = self.table_ref()
            self.expect_kw("ON")
            on_left = self._col_ref()
            self.expect_op("=")
            on_right = self._col_ref()
            source = A.Join(source, right, on_left, on_right)
        where = None
        if self.at_kw("WHERE"):
            self.advance()
            where = self.expression(sql=True)
        group_by = ()
        if self.at_kw("GROUP"):
            self.advance()
            self.expect_kw("BY")
            group_by = (self._col_ref(),)
            while self.at_op(","):
                self.advance()
                group_by += (self._col_ref(),)
        return A.Select(tuple(projections), source, where, group_by)

    def select(self) -> A.Select:
        self.expect_kw("SELECT")
        projections = [self._projection()]
        while self.at_op(","):
            self.advance()
            projections.append(self._projection())
        return self.select_tail(projections)

    # -- statements -------------------------------------------------------

    def statement(self):
        if self.at_kw("DECLARE"):
            self.advance()
            name = self.expect_ident()
            self.expect_op(":")
            kind = self.expect_kind()
            self.expect_op(";")
            return A.Declare(name, kind)
        if self.at_kw("SET"):
            self.advance()
            name = self.expect_ident()
            self.expect_op("=")
            expr = self.expression(sql=False)
            self.expect_op(";")
            return A.SetStmt(name, expr)
        if self.at_kw("IF"):
            return self._if()
        if self.at_kw("FOR"):
            return self._for()
        if self.at_kw("INSERT"):
            return self._insert()
        if self.at_kw("UPDATE"):
            return self._update()
        if self.at_kw("DELETE"):
            return self._delete()
        if self.at_kw("SELECT"):
            return self._select_into()
        if self.at_kw("CALL"):
            self.advance()
            name = self.expect_ident()
            args = self._arg_list()
            self.expect_op(";")
            return A.CallStmt(name, args)
        if self.at_kw("EXTERNAL"):
            self.advance()
            name = self.expect_ident()
            args = self._arg_list()
            into = None
            if self.at_kw("INTO"):
                self.advance()
                into = self.expect_ident()
            self.expect_op(";")
            return A.ExternalStmt(name, args, into)
        if self.at_kw("RETURN"):
            self.advance()
            exprs = ()
            if not self.at_op(";"):
                exprs = (self.expression(sql=False),)
                while self.at_op(","):
                    self.advance()
                    exprs += (self.expression(sql=False),)
            self.expect_op(";")
            return A.ReturnStmt(exprs)
        if self.at_kw("RAISE"):
            self.advance()
            if self.cur.type != "string":
                raise self.error("string message")
            msg = self.advance().value
            self.expect_op(";")
            return A.RaiseStmt(msg)
        raise self.error("statement")

    def _arg_list(self):
        self.expect_op("(")
        args = ()
        if not self.at_op(")"):
            args = (self.expression(sql=False),)
            while self.at_op(","):
                self.advance()
                args += (self.expression(sql=False),)
        self.expect_op(")")
        return args

    def _block(self, *terminators):
        body = []
        while not self.at_kw(*terminators):
            if self.cur.type == "eof":
                raise self.error(" or ".join(terminators))
            body.append(self.statement())
        return tuple(body)

    def _if(self):
        self.expect_kw("IF")
        branches = []
        cond = self.expression(sql=False)
        self.expect_kw("THEN")
        branches.append((cond, self._block("ELSIF", "ELSE", "END")))
        while self.at_kw("ELSIF"):
            self.advance()
            cond = self.expression(sql=False)
            self.expect_kw("THEN")
            branches.append((cond, self._block("ELSIF", "ELSE", "END")))
        else_body = ()
        if self.at_kw("ELSE"):
            self.advance()
            else_body = self._block("END")
        self.expect_kw("END")
        self.expect_kw("IF")
        self.expect_op(";")
        return A.IfStmt(tuple(branches), else_body)

    def _for(self):
        self.expect_kw("FOR")
        var = self.expect_ident()
        self.expect_kw("IN")
        self.expect_op("(")
        sel = self.select()
        self.expect_op(")")
        self.expect_kw("LOOP")
        body = self._block("END")
        self.expect_kw("END")
        self.expect_kw("LOOP")
        self.expect_op(";")
        return A.ForLoop(var, sel, body)

    def _insert(self):
        self.expect_kw("INSERT")
        self.expect_kw("INTO")
        table = self.table_ref()
        self.expect_op("(")
        cols = (self.expect_ident(),)
        while self.at_op(","):
            self.advance()
            cols += (self.expect_ident(),)
        self.expect_op(")")
        self.expect_kw("VALUES")
        self.expect_op("(")
        values = (self.expression(sql=True),)
        while self.at_op(","):
            self.advance()
            values += (self.expression(sql=True),)
        self.expect_op(")")
        self.expect_op(";")
        return A.InsertStmt(table, cols, values)

    def _update(self):
        self.expect_kw("UPDATE")
        table = self.table_ref()
        self.expect_kw("SET")
        assignments = []
        while True:
            col = self.expect_ident()
            self.expect_op("=")
            assignments.append((col, self.expression(sql=True)))
            if not self.at_op(","):
                break
            self.advance()
        where = None
        if self.at_kw("WHERE"):
            self.advance()
            where = self.expression(sql=True)
        self.expect_op(";")
        return A.UpdateStmt(table, tuple(assignments), where)

    def _delete(self):
        self.expect_kw("DELETE")
        self.expect_kw("FROM")
        table = self.table_ref()
        where = None
        if self.at_kw("WHERE"):
            self.advance()
            where = self.expression(sql=True)
        self.expect_op(";")
        return A.DeleteStmt(table, where)

    def _select_into(self):
        self.expect_kw("SELECT")
        projections = [self._projection()]
        while self.at_op(","):
            self.advance()
            projections.append(self._projection())
        self.expect_kw("INTO")
        targets = (self.expect_ident(),)
        while self.at_op(","):
            self.advance()
            targets += (self.expect_ident(),)
        sel = self.select_tail(projections)
        self.expect_op(";")
        return A.SelectInto(sel, targets)

    # -- procedure ----------------------------------------------------------

    def procedure(self) -> A.Procedure:
        self.expect_kw("PROC")
        name = self.expect_ident()
        self.expect_op("(")
        params = ()
        if not self.at_op(")"):
            while True:
                pname = self.expect_ident()
                self.expect_op(":")
                params += ((pname, self.expect_kind()),)
                if not self.at_op(","):
                    break
                self.advance()
        self.expect_op(")")
        self.expect_kw("BEGIN")
        body = self._block("END")
        self.expect_kw("END")
        if self.cur.type != "eof":
            raise self.error("<eof>")
        return A.Procedure(name, params, body)


def parse_procedure(source: str) -> A.Procedure:
    return Parser(source).procedure()


def parse_select(source: str) -> A.Select:
    p = Parser(source)
    sel = p.select()
    if p.cur.type != "eof":
        raise p.error("<eof>")
    return sel


def parse_predicate(source: str) -> A.Expr:
    """Parse a standalone SQL-context predicate (trigger WHEN, API filters)."""
    p = Parser(source)
    e = p.expression(sql=True)
    if p.cur.type != "eof":
        raise p.error("<eof>")
    return e

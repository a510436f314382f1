"""Scalar value kinds and their comparison/arithmetic semantics.

Cells hold plain Python objects: ``int`` (INT and TS), ``float``, ``str``,
``bool`` and ``None``. The declared column kind decides how a Python value is
admitted; comparisons use three-valued logic where ``None`` means unknown.
"""

from __future__ import annotations

import re
from enum import Enum

from .errors import InvalidIdentifier, RuntimeFault, TypeMismatch

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class ValueKind(str, Enum):
    INT = "INT"
    FLOAT = "FLOAT"
    TEXT = "TEXT"
    BOOL = "BOOL"
    TS = "TS"  # UTC microseconds since epoch


def validate_identifier(name: str, what: str = "identifier") -> str:
    if not isinstance(name, str) or not _IDENT_RE.match(name):
        raise InvalidIdentifier(f"invalid {what}: {name!r}")
    return name


def coerce(kind: ValueKind, value):
    """Admit ``value`` into a cell of the given kind, or raise TypeMismatch.

    Nulls pass through; NotNull is a constraint, not a type rule. Ints are
    widened into FLOAT columns.
    """
    if value is None:
        return None
    if kind is ValueKind.BOOL:
        if isinstance(value, bool):
            return value
    elif kind in (ValueKind.INT, ValueKind.TS):
        if isinstance(value, bool):
            raise TypeMismatch(f"bool is not a valid {kind.value} value")
        if isinstance(value, int):
            return value
    elif kind is ValueKind.FLOAT:
        if isinstance(value, bool):
            raise TypeMismatch("bool is not a valid FLOAT value")
        if isinstance(value, (int, float)):
            return float(value)
    elif kind is ValueKind.TEXT:
        if isinstance(value, str):
            return value
    raise TypeMismatch(f"{value!r} is not a valid {kind.value} value")


def _comparable(a, b) -> None:
    a_num = isinstance(a, (int, float)) and not isinstance(a, bool)
    b_num = isinstance(b, (int, float)) and not isinstance(b, bool)
    if a_num and b_num:
        return
    if isinstance(a, str) and isinstance(b, str):
        return
    if isinstance(a, bool) and isinstance(b, bool):
        return
    raise TypeMismatch(f"cannot compare {type(a).__name__} with {type(b).__name__}")


def compare(op: str, a, b):
    """Three-valued comparison: True, False, or None (unknown)."""
    if a is None or b is None:
        return None
    _comparable(a, b)
    if isinstance(a, bool) and op not in ("=", "!="):
        raise TypeMismatch("bools only support = and !=")
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise TypeMismatch(f"unknown comparison operator {op!r}")


def arith(op: str, a, b):
    """Null-propagating arithmetic. Division is always float division."""
    if a is None or b is None:
        return None
    for v in (a, b):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise TypeMismatch(f"arithmetic on non-numeric value {v!r}")
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0:
            raise RuntimeFault("division by zero")
        return a / b
    raise TypeMismatch(f"unknown arithmetic operator {op!r}")


def logic_and(a, b):
    if a is False or b is False:
        return False
    if a is None or b is None:
        return None
    return True


def logic_or(a, b):
    if a is True or b is True:
        return True
    if a is None or b is None:
        return None
    return False


def logic_not(a):
    if a is None:
        return None
    return not a

"""Error taxonomy shared by the kernel and the HTTP layer.

Every kernel error carries a stable ``kind`` string that the server maps to
an HTTP status code and that clients can switch on.
"""

from __future__ import annotations


class DbnetError(Exception):
    """Base class for all kernel errors."""

    kind = "Internal"
    http_status = 500

    def __init__(self, message: str = "", detail: str = ""):
        super().__init__(message)
        self.message = message
        self.detail = detail

    def to_dict(self) -> dict:
        return {"error_kind": self.kind, "message": self.message, "detail": self.detail}


# -- store ------------------------------------------------------------------

class InvalidIdentifier(DbnetError):
    kind = "InvalidIdentifier"
    http_status = 400


class DuplicateSchema(DbnetError):
    kind = "DuplicateSchema"
    http_status = 409


class UnknownSchema(DbnetError):
    kind = "UnknownSchema"
    http_status = 404


class DuplicateTable(DbnetError):
    kind = "DuplicateTable"
    http_status = 409


class UnknownTable(DbnetError):
    kind = "UnknownTable"
    http_status = 404


class InvalidColumn(DbnetError):
    kind = "InvalidColumn"
    http_status = 400


class UnknownColumn(DbnetError):
    kind = "UnknownColumn"
    http_status = 404


class TypeMismatch(DbnetError):
    kind = "TypeMismatch"
    http_status = 400


class ConstraintViolation(DbnetError):
    kind = "ConstraintViolation"
    http_status = 409


class MalformedQuery(DbnetError):
    kind = "MalformedQuery"
    http_status = 400


# -- txn --------------------------------------------------------------------

class UnknownTxn(DbnetError):
    kind = "UnknownTxn"
    http_status = 404


class AlreadyClosed(DbnetError):
    kind = "AlreadyClosed"
    http_status = 409


# -- policy -----------------------------------------------------------------

class ParseError(DbnetError):
    kind = "ParseError"
    http_status = 400

    def __init__(self, message: str, line: int = 0, col: int = 0, expected: str = ""):
        super().__init__(message, detail=f"line {line}, col {col}" + (f"; expected {expected}" if expected else ""))
        self.line = line
        self.col = col
        self.expected = expected


class ResolutionError(DbnetError):
    kind = "ResolutionError"
    http_status = 400


class DuplicateProcedure(DbnetError):
    kind = "DuplicateProcedure"
    http_status = 409


class UnknownProcedure(DbnetError):
    kind = "UnknownProcedure"
    http_status = 404


class DuplicateTrigger(DbnetError):
    kind = "DuplicateTrigger"
    http_status = 409


class ArgMismatch(DbnetError):
    kind = "ArgMismatch"
    http_status = 400


class CascadeDepthExceeded(DbnetError):
    kind = "CascadeDepthExceeded"
    http_status = 409


class RuntimeFault(DbnetError):
    """Raised by RAISE statements and runtime evaluation faults (e.g. division
    by zero); always aborts the enclosing transaction."""

    kind = "RuntimeFault"
    http_status = 409


# -- provenance -------------------------------------------------------------

class NotInitialized(DbnetError):
    kind = "NotInitialized"
    http_status = 409


class UnknownLogId(DbnetError):
    kind = "UnknownLogId"
    http_status = 404


class BrokenChain(DbnetError):
    kind = "BrokenChain"
    http_status = 500


# -- telemetry --------------------------------------------------------------

class MalformedSpan(DbnetError):
    kind = "MalformedSpan"
    http_status = 400


class UnknownNode(DbnetError):
    kind = "UnknownNode"
    http_status = 404


# -- proxy ------------------------------------------------------------------

class UnknownExternal(DbnetError):
    kind = "UnknownExternal"
    http_status = 404


class DeviceError(DbnetError):
    kind = "DeviceError"
    http_status = 409


class UnknownDevice(DbnetError):
    kind = "UnknownDevice"
    http_status = 404


# -- api --------------------------------------------------------------------

class AccessDenied(DbnetError):
    kind = "AccessDenied"
    http_status = 403


class UnknownUser(DbnetError):
    kind = "UnknownUser"
    http_status = 401

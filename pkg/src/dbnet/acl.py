"""Role-based access control: allow-only rules, default deny.

Objects are referenced as ``schema``, ``schema.table``, procedure names, or
the wildcard ``*``. A rule on a schema covers every table in it. The Admin
action implies all actions, and the built-in ``admin`` role bypasses rules.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from .errors import UnknownUser

ACTIONS = ("Read", "Write", "Execute", "Admin")
ADMIN_ROLE = "admin"


@dataclass(frozen=True)
class UserIdentity:
    user_id: str
    roles: frozenset


@dataclass(frozen=True)
class AclRule:
    role: str
    object: str  # "*", "schema", "schema.table", or a procedure name
    action: str  # one of ACTIONS


def _object_matches(rule_obj: str, obj: str) -> bool:
    if rule_obj == "*" or rule_obj == obj:
        return True
    # schema-level rule covers schema.table
    return "." in obj and obj.split(".", 1)[0] == rule_obj


class AccessControl:
    def __init__(self):
        self._users: dict = {}
        self._rules: list = []
        self._lock = threading.Lock()

    def add_user(self, user_id: str, roles) -> None:
        if not user_id:
            raise UnknownUser("empty user id")
        with self._lock:
            self._users[user_id] = UserIdentity(user_id, frozenset(roles))

    def user(self, user_id: str) -> UserIdentity:
        with self._lock:
            u = self._users.get(user_id)
        if u is None:
            raise UnknownUser(f"unknown user {user_id!r}")
        return u

    def add_rule(self, rule: AclRule) -> None:
        with self._lock:
            self._rules.append(rule)

    def rules(self) -> list:
        with self._lock:
            return list(self._rules)

    def check(self, user: UserIdentity, obj: str, action: str) -> bool:
        """Pure allow/deny; the caller logs AuthDeny on deny."""
        if ADMIN_ROLE in user.roles:
            return True
        with self._lock:
            for rule in self._rules:
                if rule.role not in user.roles:
                    continue
                if rule.action != action and rule.action != "Admin":
                    continue
                if _object_matches(rule.object, obj):
                    return True
        return False

"""Northbound device synchronization: simulated fleet + transactional outbox.

Two paths exist deliberately: procedures call the fleet synchronously via
EXTERNAL (they need the device response, e.g. a fresh node id), while pure
state pushes ride the outbox and are reconciled after commit.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .errors import DeviceError, UnknownDevice, UnknownExternal

logger = logging.getLogger(__name__)

DEVICE_KINDS = ("Node", "AutoScaler", "LoadBalancer")

BACKOFF_BASE = 0.05
BACKOFF_FACTOR = 2
MAX_RETRIES = 3


@dataclass
class DeviceCommand:
    command_id: int
    device_kind: str
    action: str  # Create | Delete | SetState
    payload: dict  # row cells (primary key included)
    origin_log_id: int
    table: tuple  # (schema, name)
    row_id: int
    pk_column: str


@dataclass
class SyncStatus:
    table: tuple
    row_id: int
    state: str = "Pending"  # Pending | InSync | Error
    attempts: int = 0
    last_error: Optional[str] = None


@dataclass
class _Device:
    cells: dict
    alive: bool = True


class SimFleet:
    """In-process stand-in for a device fleet / cluster API.

    Only node creation carries the provisioning delay; kills and weight
    updates are immediate, which keeps one scenario run device-dominated by
    roughly one provisioning_delay.
    """

    def __init__(self, provisioning_delay: float = 0.1):
        self.provisioning_delay = provisioning_delay
        self.devices = {kind: {} for kind in DEVICE_KINDS}
        self.lb_weights: dict = {}
        self._failures: list = []  # [action_pattern, remaining_count]
        self._lock = threading.RLock()
        self.busy_us = 0  # accumulated simulated device time

    # -- test hooks --------------------------------------------------------

    def inject_failure(self, action: str, count: int) -> None:
        with self._lock:
            if count > 0:
                self._failures.append([action, count])

    def _maybe_fail(self, action: str) -> None:
        with self._lock:
            for rule in self._failures:
                if rule[0] in ("*", action) and rule[1] > 0:
                    rule[1] -= 1
                    raise DeviceError(f"injected failure for {action}")

    def _delay(self, seconds: float) -> None:
        if seconds > 0:
            start = time.perf_counter()
            time.sleep(seconds)
            elapsed = time.perf_counter() - start
        else:
            elapsed = 0.0
        with self._lock:
            self.busy_us += int(elapsed * 1_000_000)

    # -- synchronous device API (EXTERNAL) -----------------------------------

    def create_node(self, pod_id: int) -> int:
        self._maybe_fail("create_node")
        with self._lock:
            node_id = max(self.devices["Node"], default=0) + 1
            self.devices["Node"][node_id] = _Device(cells={
                "nodeId": node_id, "podId": pod_id,
                "cpuUtil": 0.0, "ingressTraff": 0.0,
            })
        self._delay(self.provisioning_delay)
        return node_id

    def kill_node(self, node_id: int) -> None:
        self._maybe_fail("kill_node")
        with self._lock:
            dev = self.devices["Node"].get(node_id)
            if dev is None:
                raise DeviceError(f"unknown node {node_id}")
            if not dev.alive:
                raise DeviceError(f"node {node_id} is not alive")
            dev.alive = False

    def set_weights(self, pod_id: int, *weights: float) -> None:
        self._maybe_fail("set_weights")
        with self._lock:
            self.lb_weights[pod_id] = list(weights)

    def call(self, name: str, args: list):
        if name == "create_node":
            return self.create_node(*args)
        if name == "kill_node":
            return self.kill_node(*args)
        if name == "set_weights":
            return self.set_weights(*args)
        raise UnknownExternal(f"unknown device API {name!r}")

    # -- outbox application ---------------------------------------------------

    def apply_command(self, cmd: DeviceCommand) -> None:
        self._maybe_fail("apply_" + cmd.action.lower())
        with self._lock:
            devices = self.devices[cmd.device_kind]
            device_id = cmd.payload.get(cmd.pk_column)
            if cmd.action == "Create":
                dev = devices.get(device_id)
                if dev is not None and not dev.alive:
                    raise DeviceError(f"{cmd.device_kind} {device_id} was killed")
                if dev is None:
                    devices[device_id] = _Device(cells=dict(cmd.payload))
                else:
                    dev.cells = dict(cmd.payload)
            elif cmd.action == "SetState":
                dev = devices.get(device_id)
                if dev is None:
                    raise DeviceError(f"unknown {cmd.device_kind} {device_id}")
                dev.cells = dict(cmd.payload)
            elif cmd.action == "Delete":
                dev = devices.get(device_id)
                if dev is not None:
                    dev.alive = False
            else:
                raise DeviceError(f"unknown command action {cmd.action!r}")

    # -- reads -----------------------------------------------------------------

    def get_state(self, device_kind: str, device_id) -> dict:
        if device_kind not in self.devices:
            raise UnknownDevice(f"unknown device kind {device_kind!r}")
        with self._lock:
            dev = self.devices[device_kind].get(device_id)
            if dev is None:
                raise UnknownDevice(f"unknown {device_kind} {device_id}")
            return {"cells": dict(dev.cells), "alive": dev.alive}

    def alive_devices(self, device_kind: str) -> dict:
        with self._lock:
            return {i: dict(d.cells) for i, d in self.devices[device_kind].items()
                    if d.alive}


class Reconciler:
    """Drains committed DeviceCommands to the fleet in command-id order with
    exponential-backoff retries; optionally on a background worker."""

    def __init__(self, fleet, on_applied=None):
        self.fleet = fleet
        self.on_applied = on_applied  # callback(cmd, ok: bool, error: str|None)
        self._pending = deque()
        self._lock = threading.Lock()
        self._next_command_id = 1
        self.sync_status: dict = {}  # (table, row_id) -> SyncStatus
        self._worker: Optional[threading.Thread] = None
        self._stop = threading.Event()

    def next_command_id(self) -> int:
        with self._lock:
            cid = self._next_command_id
            self._next_command_id += 1
            return cid

    def bump_next_command_id(self, floor: int) -> None:
        with self._lock:
            self._next_command_id = max(self._next_command_id, floor)

    def enqueue(self, commands: list) -> None:
        with self._lock:
            for cmd in commands:
                self._pending.append(cmd)
                self.sync_status[(cmd.table, cmd.row_id)] = SyncStatus(
                    table=cmd.table, row_id=cmd.row_id)

    def pending_count(self) -> int:
        with self._lock:
            return len(self._pending)

    def drain(self) -> int:
        """Apply every pending command; returns the number applied."""
        applied = 0
        while True:
            with self._lock:
                if not self._pending:
                    return applied
                cmd = self._pending.popleft()
                status = self.sync_status[(cmd.table, cmd.row_id)]
            backoff = BACKOFF_BASE
            while True:
                status.attempts += 1
                try:
                    self.fleet.apply_command(cmd)
                    status.state = "InSync"
                    status.last_error = None
                    applied += 1
                    if self.on_applied:
                        self.on_applied(cmd, True, None)
                    break
                except DeviceError as exc:
                    status.last_error = str(exc)
                    if status.attempts > MAX_RETRIES:
                        status.state = "Error"
                        logger.warning("command %s gave up after %d attempts: %s",
                                       cmd.command_id, status.attempts, exc)
                        if self.on_applied:
                            self.on_applied(cmd, False, str(exc))
                        break
                    time.sleep(backoff)
                    backoff *= BACKOFF_FACTOR

    # -- background worker -----------------------------------------------------

    def start_worker(self, interval: float = 0.05) -> None:
        if self._worker is not None:
            return
        self._stop.clear()

        def loop():
            while not self._stop.wait(interval):
                try:
                    self.drain()
                except Exception:
                    logger.exception("outbox drain failed")

        self._worker = threading.Thread(target=loop, name="dbnet-outbox", daemon=True)
        self._worker.start()

    def stop_worker(self) -> None:
        if self._worker is None:
            return
        self._stop.set()
        self._worker.join(timeout=2)
        self._worker = None

"""Benchmark harness: programs the two motivating automation scenarios,
drives them end-to-end over the HTTP API, measures latencies, and emits a
CSV + text report.

Scenario 1 (capacity): when a pod's average ingress traffic crosses a
threshold, an autoscaling policy provisions a new node and rebalances.
Scenario 2 (anomaly): when a node's telemetry-derived error rate or average
latency crosses a threshold, the node is killed and replaced.

Threshold defaults are synthetic (tunable configuration, not measured
constants) and are labeled as such in the report.
"""

from __future__ import annotations

import csv
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

from .client import DbnetClient

logger = logging.getLogger(__name__)

REFERENCE_BOUNDS_US = {
    "setup": 350_000,       # reference setup wall clock
    "ex1_kernel": 100_000,  # relaxed internal-latency bound
    "ex2_kernel": 100_000,
    "load": 3_200_000,      # 20 clients x 100 spans reference wall clock
}

EXPECTED_EX1_CHAIN = ["Insert", "ProcCall", "TriggerFire", "Update",
                      "ExternalRequest"]


class BenchAssertion(Exception):
    """A scenario post-condition did not hold."""


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise BenchAssertion(message)


@dataclass
class ScenarioConfig:
    ingress_threshold: float = 300.0     # synthetic
    error_rate_threshold: float = 0.5    # synthetic
    latency_threshold_us: int = 250_000  # synthetic
    provisioning_delay: float = 0.1      # seconds, simulated device time
    clients: int = 20
    spans_per_client: int = 100
    seed: int = 7


@dataclass
class BenchReport:
    phases: dict = field(default_factory=dict)  # name -> duration_us
    notes: List[str] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)

    def add_phase(self, name: str, duration_us: int) -> None:
        self.phases[name] = duration_us

    @property
    def ok(self) -> bool:
        return not self.failures


# -- scenario programming -------------------------------------------------------

SCHEMAS = ("net", "pods", "scalers", "balancers", "traces", "metrics", "ops")

TABLE1_NODES = (
    # (nodeId, podId, cpuUtil, ingressTraff)
    (1, 1, 0.37, 221.0),
    (2, 1, 0.82, 382.0),
    (3, 2, 0.14, 67.0),
)


def _tables() -> list:
    pk = [{"kind": "PrimaryKey"}]
    nn = [{"kind": "NotNull"}]
    return [
        dict(schema="net", name="nodes", device_backed=True, device_kind="Node",
             columns=[
                 {"name": "nodeId", "kind": "INT", "constraints": pk},
                 {"name": "podId", "kind": "INT", "constraints": nn},
                 {"name": "cpuUtil", "kind": "FLOAT", "constraints": [
                     {"kind": "Check",
                      "check": "cpuUtil >= 0.0 AND cpuUtil <= 1.0"}]},
                 {"name": "ingressTraff", "kind": "FLOAT", "constraints": []},
             ]),
        dict(schema="pods", name="pods", columns=[
            {"name": "podId", "kind": "INT", "constraints": pk},
            {"name": "status", "kind": "TEXT", "constraints": nn},
        ]),
        dict(schema="scalers", name="autoscalers", device_backed=True,
             device_kind="AutoScaler", columns=[
                 {"name": "podId", "kind": "INT", "constraints": pk},
                 {"name": "avgCpuUtil", "kind": "FLOAT", "constraints": []},
             ]),
        dict(schema="balancers", name="loadbalancers", device_backed=True,
             device_kind="LoadBalancer", columns=[
                 {"name": "podId", "kind": "INT", "constraints": pk},
                 {"name": "avgIngTraff", "kind": "FLOAT", "constraints": []},
             ]),
        dict(schema="traces", name="spans", columns=[
            {"name": "spanKey", "kind": "TEXT",
             "constraints": [{"kind": "Unique"}, {"kind": "NotNull"}]},
            {"name": "traceId", "kind": "TEXT", "constraints": nn},
            {"name": "spanId", "kind": "TEXT", "constraints": nn},
            {"name": "parentSpanId", "kind": "TEXT", "constraints": []},
            {"name": "name", "kind": "TEXT", "constraints": nn},
            {"name": "nodeId", "kind": "INT", "constraints": nn},
            {"name": "startTs", "kind": "TS", "constraints": nn},
            {"name": "endTs", "kind": "TS", "constraints": nn},
            {"name": "status", "kind": "TEXT", "constraints": nn},
            {"name": "latencyUs", "kind": "INT", "constraints": nn},
        ]),
        dict(schema="traces", name="spanattrs", columns=[
            {"name": "spanRef", "kind": "INT", "constraints": nn},
            {"name": "attrKey", "kind": "TEXT", "constraints": nn},
            {"name": "attrValue", "kind": "TEXT", "constraints": nn},
        ]),
        dict(schema="metrics", name="metrics", columns=[
            {"name": "nodeId", "kind": "INT", "constraints": pk},
            {"name": "spanCount", "kind": "INT", "constraints": nn},
            {"name": "errorCount", "kind": "INT", "constraints": nn},
            {"name": "latencySum", "kind": "INT", "constraints": nn},
            {"name": "errorRate", "kind": "FLOAT", "constraints": []},
            {"name": "avgLatency", "kind": "FLOAT", "constraints": []},
        ]),
    ]


def _procedures() -> list:
    """Registration-ordered so every CALL target already exists."""
    return [
        """
PROC refresh_autoscaler(podId : INT) BEGIN
  DECLARE avgCpu : FLOAT;
  SELECT AVG(cpuUtil) INTO avgCpu FROM net.nodes WHERE podId = :podId;
  DECLARE n : INT;
  SELECT COUNT(podId) INTO n FROM scalers.autoscalers WHERE podId = :podId;
  IF n = 0 THEN
    INSERT INTO scalers.autoscalers (podId, avgCpuUtil) VALUES (:podId, :avgCpu);
  ELSE
    UPDATE scalers.autoscalers SET avgCpuUtil = :avgCpu WHERE podId = :podId;
  END IF;
END
""",
        """
PROC refresh_balancer(podId : INT) BEGIN
  DECLARE avgIng : FLOAT;
  SELECT AVG(ingressTraff) INTO avgIng FROM net.nodes WHERE podId = :podId;
  DECLARE n : INT;
  SELECT COUNT(podId) INTO n FROM balancers.loadbalancers WHERE podId = :podId;
  IF n = 0 THEN
    INSERT INTO balancers.loadbalancers (podId, avgIngTraff) VALUES (:podId, :avgIng);
  ELSE
    UPDATE balancers.loadbalancers SET avgIngTraff = :avgIng WHERE podId = :podId;
  END IF;
END
""",
        """
PROC refresh_pod_stats(podId : INT) BEGIN
  CALL refresh_autoscaler(podId);
  CALL refresh_balancer(podId);
END
""",
        """
PROC rebalance(podId : INT) BEGIN
  CALL refresh_balancer(podId);
  DECLARE n : INT;
  SELECT COUNT(nodeId) INTO n FROM net.nodes WHERE podId = :podId;
  IF n > 0 THEN
    DECLARE w : FLOAT;
    SET w = 1.0 / n;
    EXTERNAL set_weights(podId, w);
  END IF;
END
""",
        """
PROC scale_up(podId : INT) BEGIN
  DECLARE fresh : INT;
  EXTERNAL create_node(podId) INTO fresh;
  INSERT INTO net.nodes (nodeId, podId, cpuUtil, ingressTraff) VALUES (:fresh, :podId, 0.0, 0.0);
  DECLARE avgCpu : FLOAT;
  SELECT AVG(cpuUtil) INTO avgCpu FROM net.nodes WHERE podId = :podId;
  UPDATE scalers.autoscalers SET avgCpuUtil = :avgCpu WHERE podId = :podId;
  CALL rebalance(podId);
END
""",
        """
PROC on_span_insert(nodeId : INT, status : TEXT, latencyUs : INT) BEGIN
  DECLARE n : INT;
  SELECT COUNT(nodeId) INTO n FROM metrics.metrics WHERE nodeId = :nodeId;
  IF n = 0 THEN
    INSERT INTO metrics.metrics (nodeId, spanCount, errorCount, latencySum, errorRate, avgLatency) VALUES (:nodeId, 0, 0, 0, 0.0, 0.0);
  END IF;
  DECLARE e : INT;
  SET e = 0;
  IF status = 'Error' THEN
    SET e = 1;
  END IF;
  UPDATE metrics.metrics SET spanCount = spanCount + 1, errorCount = errorCount + :e, latencySum = latencySum + :latencyUs, errorRate = (errorCount + :e) / (spanCount + 1), avgLatency = (latencySum + :latencyUs) / (spanCount + 1) WHERE nodeId = :nodeId;
END
""",
        """
PROC reset_metrics(nodeId : INT) BEGIN
  UPDATE metrics.metrics SET spanCount = 0, errorCount = 0, latencySum = 0, errorRate = 0.0, avgLatency = 0.0 WHERE nodeId = :nodeId;
END
""",
        """
PROC recompute_metrics(nodeId : INT) BEGIN
  DECLARE total : INT;
  DECLARE lsum : INT;
  SELECT COUNT(spanId), SUM(latencyUs) INTO total, lsum FROM traces.spans WHERE nodeId = :nodeId;
  DECLARE errs : INT;
  SELECT COUNT(spanId) INTO errs FROM traces.spans WHERE nodeId = :nodeId AND status = 'Error';
  IF total > 0 THEN
    UPDATE metrics.metrics SET spanCount = :total, errorCount = :errs, latencySum = :lsum, errorRate = :errs / :total, avgLatency = :lsum / :total WHERE nodeId = :nodeId;
  ELSE
    UPDATE metrics.metrics SET spanCount = 0, errorCount = 0, latencySum = 0, errorRate = 0.0, avgLatency = 0.0 WHERE nodeId = :nodeId;
  END IF;
END
""",
        """
PROC restart_node(nodeId : INT) BEGIN
  DECLARE n : INT;
  DECLARE pod : INT;
  SELECT COUNT(nodeId), MAX(podId) INTO n, pod FROM net.nodes WHERE nodeId = :nodeId;
  IF n > 0 THEN
    EXTERNAL kill_node(nodeId);
    DELETE FROM net.nodes WHERE nodeId = :nodeId;
    DECLARE fresh : INT;
    EXTERNAL create_node(pod) INTO fresh;
    INSERT INTO net.nodes (nodeId, podId, cpuUtil, ingressTraff) VALUES (:fresh, :pod, 0.0, 0.0);
    CALL reset_metrics(nodeId);
    CALL refresh_pod_stats(pod);
  END IF;
END
""",
    ]


def _triggers(cfg: ScenarioConfig) -> list:
    return [
        dict(name="span_metrics", table="traces.spans", event="AfterInsert",
             when=None, procedure="on_span_insert"),
        dict(name="node_error_anomaly", table="metrics.metrics",
             event="AfterUpdate",
             when=f"NEW.errorRate > {cfg.error_rate_threshold}",
             procedure="restart_node"),
        dict(name="node_latency_anomaly", table="metrics.metrics",
             event="AfterUpdate",
             when=f"NEW.avgLatency > {float(cfg.latency_threshold_us)}",
             procedure="restart_node"),
        dict(name="lb_overload", table="balancers.loadbalancers",
             event="AfterUpdate",
             when=f"NEW.avgIngTraff > {cfg.ingress_threshold}",
             procedure="scale_up"),
        dict(name="node_removed", table="net.nodes", event="AfterDelete",
             when=None, procedure="refresh_pod_stats"),
    ]


def _now_us() -> int:
    return time.perf_counter_ns() // 1000


# -- phases -----------------------------------------------------------------------


def setup_example1(client: DbnetClient, cfg: ScenarioConfig,
                   report: Optional[BenchReport] = None) -> int:
    """Create the scenario schemas, tables, procedures, and triggers.
    Returns the setup wall clock in microseconds."""
    start = _now_us()
    for schema in SCHEMAS:
        client.create_schema(schema)
    for table in _tables():
        client.create_table(**table)
    for source in _procedures():
        client.register_procedure(source)
    for trig in _triggers(cfg):
        client.register_trigger(**trig)
    duration = _now_us() - start
    counts = client.catalog()
    _require(counts == {"schemas": 7, "tables": 7, "procedures": 9,
                        "triggers": 5},
             f"unexpected object counts after setup: {counts}")
    if report is not None:
        report.add_phase("setup", duration)
    return duration


def seed_table1(client: DbnetClient,
                report: Optional[BenchReport] = None) -> int:
    """Load the canonical three-node seed and derive the per-pod rollups."""
    start = _now_us()
    commands = [
        {"op": "insert", "table": "pods.pods",
         "cells": {"podId": 1, "status": "Active"}},
        {"op": "insert", "table": "pods.pods",
         "cells": {"podId": 2, "status": "Active"}},
    ]
    for node_id, pod_id, cpu, ingress in TABLE1_NODES:
        commands.append({"op": "insert", "table": "net.nodes",
                         "cells": {"nodeId": node_id, "podId": pod_id,
                                   "cpuUtil": cpu, "ingressTraff": ingress}})
    commands.append({"op": "call", "procedure": "refresh_pod_stats", "args": [1]})
    commands.append({"op": "call", "procedure": "refresh_pod_stats", "args": [2]})
    client.run_txn(commands)
    client.drain()
    duration = _now_us() - start
    if report is not None:
        report.add_phase("seed", duration)
    return duration


def _pod_rollups(client: DbnetClient) -> tuple:
    scalers = {int(r[0]): r[1] for r in client.query(
        "SELECT podId, avgCpuUtil FROM scalers.autoscalers")["rows"]}
    balancers = {int(r[0]): r[1] for r in client.query(
        "SELECT podId, avgIngTraff FROM balancers.loadbalancers")["rows"]}
    return scalers, balancers


def run_example1(client: DbnetClient, cfg: ScenarioConfig,
                 report: Optional[BenchReport] = None) -> dict:
    """Push pod 1's ingress over the threshold and verify the autoscaling
    policy: new node provisioned, rollups recomputed, provenance chain
    matches the expected shape."""
    before_nodes = {int(r[0]) for r in client.query(
        "SELECT nodeId FROM net.nodes")["rows"]}
    busy_before = client.fleet_stats()["busy_us"]

    overload = cfg.ingress_threshold * 1.5
    start = _now_us()
    client.run_txn([{"op": "update", "table": "balancers.loadbalancers",
                     "set": {"avgIngTraff": overload},
                     "where": "podId = 1"}])
    e2e_us = _now_us() - start
    client.drain()

    device_us = client.fleet_stats()["busy_us"] - busy_before
    kernel_us = max(e2e_us - device_us, 0)

    after_nodes = {int(r[0]) for r in client.query(
        "SELECT nodeId FROM net.nodes")["rows"]}
    created = sorted(after_nodes - before_nodes)
    _require(len(created) == 1, f"expected exactly one new node, got {created}")
    new_node = created[0]
    stats = client.fleet_stats()
    _require(new_node in stats["alive_nodes"],
             f"node {new_node} missing from the fleet")

    scalers, balancers = _pod_rollups(client)
    pod1_cpus = [r[0] for r in client.query(
        "SELECT cpuUtil FROM net.nodes WHERE podId = 1")["rows"]]
    expected_cpu = sum(pod1_cpus) / len(pod1_cpus)
    _require(abs(scalers[1] - expected_cpu) < 1e-9,
             f"autoscaler rollup {scalers[1]} != recomputed {expected_cpu}")
    pod1_ing = [r[0] for r in client.query(
        "SELECT ingressTraff FROM net.nodes WHERE podId = 1")["rows"]]
    expected_ing = sum(pod1_ing) / len(pod1_ing)
    _require(abs(balancers[1] - expected_ing) < 1e-9,
             f"balancer rollup {balancers[1]} != recomputed {expected_ing}")

    insert_entries = [e for e in client.log(table="net.nodes", kind="Insert")
                      if e["new_cells"]["nodeId"] == new_node]
    _require(len(insert_entries) == 1,
             f"expected one Insert entry for node {new_node}")
    chain = client.trace(insert_entries[0]["log_id"])
    kinds = [e["kind"] for e in chain] + [chain[-1]["cause"]["kind"]]
    _require(kinds == EXPECTED_EX1_CHAIN,
             f"provenance chain {kinds} != {EXPECTED_EX1_CHAIN}")

    result = {"e2e_us": e2e_us, "kernel_us": kernel_us,
              "device_us": device_us, "new_node": new_node,
              "chain_kinds": kinds}
    if report is not None:
        report.add_phase("ex1_e2e", e2e_us)
        report.add_phase("ex1_kernel", kernel_us)
        report.add_phase("ex1_device", device_us)
    return result


def _span(rng: random.Random, node_id: int, status: str, latency_us: int,
          name: str = "op") -> dict:
    start_ts = 1_700_000_000_000_000 + rng.randrange(10**9)
    return {
        "trace_id": f"{rng.getrandbits(128):032x}",
        "span_id": f"{rng.getrandbits(64):016x}",
        "parent_span_id": None,
        "name": name,
        "node_id": node_id,
        "start_ts": start_ts,
        "end_ts": start_ts + latency_us,
        "status": status,
        "attributes": [],
    }


def run_example2(client: DbnetClient, cfg: ScenarioConfig,
                 report: Optional[BenchReport] = None) -> dict:
    """Stream anomalous telemetry for one node and verify the replacement
    policy: the offender is killed, a replacement is provisioned, and its
    metrics are reset."""
    rng = random.Random(cfg.seed)
    target = 3  # pod 2's only node, so deleting it cannot re-trip scenario 1
    before_nodes = {int(r[0]) for r in client.query(
        "SELECT nodeId FROM net.nodes")["rows"]}
    _require(target in before_nodes, f"target node {target} not seeded")
    busy_before = client.fleet_stats()["busy_us"]

    # healthy traffic for the other nodes, then one clearly anomalous span
    batch = [_span(rng, node_id, "Ok", rng.randrange(1_000, 50_000))
             for node_id in sorted(before_nodes - {target}) for _ in range(3)]
    batch.append(_span(rng, target, "Error",
                       cfg.latency_threshold_us * 2, name="anomaly"))

    start = _now_us()
    accepted = client.ingest_spans(batch)
    e2e_us = _now_us() - start
    client.drain()

    _require(accepted == len(batch), f"ingested {accepted} != {len(batch)}")
    device_us = client.fleet_stats()["busy_us"] - busy_before
    kernel_us = max(e2e_us - device_us, 0)

    after_nodes = {int(r[0]) for r in client.query(
        "SELECT nodeId FROM net.nodes")["rows"]}
    _require(target not in after_nodes, f"offending node {target} still present")
    created = sorted(after_nodes - before_nodes)
    _require(len(created) == 1, f"expected one replacement node, got {created}")
    replacement = created[0]

    stats = client.fleet_stats()
    _require(target not in stats["alive_nodes"],
             f"offending node {target} still alive in the fleet")
    _require(replacement in stats["alive_nodes"],
             f"replacement {replacement} not alive in the fleet")
    for other in before_nodes - {target}:
        _require(other in stats["alive_nodes"],
                 f"non-offending node {other} was touched")

    metrics = client.metrics(target)
    _require(metrics["span_count"] == 0 and metrics["error_count"] == 0,
             f"metrics for node {target} not reset: {metrics}")

    result = {"e2e_us": e2e_us, "kernel_us": kernel_us,
              "device_us": device_us, "killed": target,
              "replacement": replacement}
    if report is not None:
        report.add_phase("ex2_e2e", e2e_us)
        report.add_phase("ex2_kernel", kernel_us)
        report.add_phase("ex2_device", device_us)
    return result


def load_test(make_client: Callable[[], DbnetClient], clients: int,
              spans_per_client: int, seed: int = 7, batch_size: int = 10,
              base_node_id: int = 101,
              report: Optional[BenchReport] = None) -> dict:
    """Concurrent span ingestion: ``clients`` submitters each stream
    ``spans_per_client`` spans, then metrics are checked against
    client-side expected tallies."""
    if clients <= 0 or spans_per_client <= 0:
        if report is not None:
            report.add_phase("load", 0)
        return {"wall_us": 0, "spans": 0}

    # pre-generate per-client spans so worker threads only do I/O
    expected: dict = {}  # node_id -> [count, errors, latency_sum]
    plans = []
    for c in range(clients):
        rng = random.Random(seed * 10_007 + c)
        node_id = base_node_id + c
        spans = []
        for _ in range(spans_per_client):
            status = "Error" if rng.random() < 0.1 else "Ok"
            latency = rng.randrange(1_000, 200_000)
            spans.append(_span(rng, node_id, status, latency))
            tally = expected.setdefault(node_id, [0, 0, 0])
            tally[0] += 1
            tally[1] += status == "Error"
            tally[2] += latency
        plans.append(spans)

    errors: list = []

    def worker(spans: list) -> None:
        try:
            client = make_client()
            for i in range(0, len(spans), batch_size):
                client.ingest_spans(spans[i:i + batch_size])
        except Exception as exc:  # surfaced below as a failure
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(p,)) for p in plans]
    start = _now_us()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall_us = _now_us() - start

    _require(not errors, f"{len(errors)} client(s) failed: {errors[:3]}")

    checker = make_client()
    total = clients * spans_per_client
    stored = checker.query(
        f"SELECT COUNT(spanKey) FROM traces.spans "
        f"WHERE nodeId >= {base_node_id}")["rows"][0][0]
    _require(stored == total, f"stored {stored} spans, expected {total}")
    for node_id, (count, errs, lsum) in sorted(expected.items()):
        m = checker.metrics(node_id)
        _require(m["span_count"] == count and m["error_count"] == errs
                 and m["latency_sum"] == lsum,
                 f"metrics for node {node_id} inconsistent: {m}, "
                 f"expected ({count}, {errs}, {lsum})")
        _require(abs(m["error_rate"] - errs / count) < 1e-9
                 and abs(m["avg_latency"] - lsum / count) < 1e-9,
                 f"derived metrics for node {node_id} inconsistent: {m}")

    if report is not None:
        report.add_phase("load", wall_us)
    return {"wall_us": wall_us, "spans": total}


# -- reporting ----------------------------------------------------------------------


def write_report(report: BenchReport, out_path: str) -> None:
    """CSV of (phase,duration_us) plus a text summary next to it."""
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase", "duration_us"])
        for phase in sorted(report.phases):
            writer.writerow([phase, report.phases[phase]])

    lines = ["phase breakdown (microseconds):"]
    for phase in sorted(report.phases):
        us = report.phases[phase]
        line = f"  {phase:<12} {us:>10}"
        bound = REFERENCE_BOUNDS_US.get(phase)
        if bound is not None:
            verdict = "within" if us < bound else "EXCEEDS"
            line += f"  ({verdict} reference bound {bound} us)"
        lines.append(line)
    lines.append("thresholds are synthetic configuration defaults")
    for note in report.notes:
        lines.append(f"note: {note}")
    for failure in report.failures:
        lines.append(f"FAIL: {failure}")
    summary = "\n".join(lines) + "\n"
    with open(out_path + ".txt", "w") as fh:
        fh.write(summary)
    logger.info("report written to %s", out_path)

"""Telemetry span validation, ingestion, and per-node metric reads.

Spans land in ``traces.spans`` (attributes flattened into
``traces.spanattrs``); trigger-maintained rollups live in
``metrics.metrics``. The tables themselves are provisioned by scenario
setup, not at kernel start.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .errors import MalformedSpan, UnknownNode

TRACES_SCHEMA = "traces"
SPANS_TABLE = "spans"
ATTRS_TABLE = "spanattrs"
METRICS_SCHEMA = "metrics"
METRICS_TABLE = "metrics"

SPANS_REF = f"{TRACES_SCHEMA}.{SPANS_TABLE}"
METRICS_REF = f"{METRICS_SCHEMA}.{METRICS_TABLE}"

_TRACE_ID_RE = re.compile(r"^[0-9a-f]{32}$")
_SPAN_ID_RE = re.compile(r"^[0-9a-f]{16}$")

STATUSES = ("Ok", "Error")


@dataclass(frozen=True)
class Span:
    trace_id: str
    span_id: str
    parent_span_id: Optional[str]
    name: str
    node_id: int
    start_ts: int
    end_ts: int
    status: str
    attributes: tuple  # of (key, value) text pairs

    @property
    def latency_us(self) -> int:
        return self.end_ts - self.start_ts


def parse_span(obj: dict) -> Span:
    """Validate one wire-format span object."""
    if not isinstance(obj, dict):
        raise MalformedSpan("span must be an object")

    def need(field, types):
        if field not in obj or not isinstance(obj[field], types) \
                or isinstance(obj[field], bool):
            raise MalformedSpan(f"span field {field!r} missing or mistyped")
        return obj[field]

    trace_id = need("trace_id", str)
    if not _TRACE_ID_RE.match(trace_id):
        raise MalformedSpan(f"bad trace_id {trace_id!r}")
    span_id = need("span_id", str)
    if not _SPAN_ID_RE.match(span_id):
        raise MalformedSpan(f"bad span_id {span_id!r}")
    parent = obj.get("parent_span_id")
    if parent is not None and (not isinstance(parent, str) or not _SPAN_ID_RE.match(parent)):
        raise MalformedSpan(f"bad parent_span_id {parent!r}")
    name = need("name", str)
    node_id = need("node_id", int)
    start_ts = need("start_ts", int)
    end_ts = need("end_ts", int)
    if end_ts < start_ts:
        raise MalformedSpan(f"span {span_id}: end_ts precedes start_ts")
    status = need("status", str)
    if status not in STATUSES:
        raise MalformedSpan(f"bad status {status!r}")
    raw_attrs = obj.get("attributes", [])
    attrs = []
    for item in raw_attrs:
        if (not isinstance(item, (list, tuple)) or len(item) != 2
                or not isinstance(item[0], str) or not isinstance(item[1], str)):
            raise MalformedSpan(f"span {span_id}: attributes must be text pairs")
        attrs.append((item[0], item[1]))
    return Span(trace_id, span_id, parent, name, node_id, start_ts, end_ts,
                status, tuple(attrs))


def parse_batch(objs: list) -> list:
    if not isinstance(objs, list):
        raise MalformedSpan("span batch must be a JSON array")
    spans = [parse_span(o) for o in objs]
    seen = set()
    for s in spans:
        key = (s.trace_id, s.span_id)
        if key in seen:
            raise MalformedSpan(f"duplicate span {s.span_id} in trace {s.trace_id}")
        seen.add(key)
    return spans


def insert_span(kernel, txn, span: Span, user: str) -> int:
    row_id = kernel.txn_insert(txn, TRACES_SCHEMA, SPANS_TABLE, {
        "spanKey": span.trace_id + ":" + span.span_id,
        "traceId": span.trace_id,
        "spanId": span.span_id,
        "parentSpanId": span.parent_span_id,
        "name": span.name,
        "nodeId": span.node_id,
        "startTs": span.start_ts,
        "endTs": span.end_ts,
        "status": span.status,
        "latencyUs": span.latency_us,
    }, user)
    for key, value in span.attributes:
        kernel.txn_insert(txn, TRACES_SCHEMA, ATTRS_TABLE, {
            "spanRef": row_id, "attrKey": key, "attrValue": value,
        }, user)
    return row_id


def read_metrics(kernel, node_id: int) -> dict:
    """Committed NodeMetrics for a node, or UnknownNode."""
    labels, rows = kernel.select_committed(
        f"SELECT nodeId, spanCount, errorCount, latencySum, errorRate, avgLatency "
        f"FROM {METRICS_REF} WHERE nodeId = {int(node_id)}")
    if not rows:
        _, spans = kernel.select_committed(
            f"SELECT COUNT(spanId) FROM {SPANS_REF} WHERE nodeId = {int(node_id)}")
        if spans[0][0] == 0:
            raise UnknownNode(f"no metrics or spans for node {node_id}")
        return {"node_id": node_id, "span_count": 0, "error_count": 0,
                "latency_sum": 0, "error_rate": None, "avg_latency": None}
    row = rows[0]
    return {
        "node_id": row[0],
        "span_count": row[1],
        "error_count": row[2],
        "latency_sum": row[3],
        "error_rate": row[4],
        "avg_latency": row[5],
    }

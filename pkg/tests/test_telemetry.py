"""Span validation, batch ingestion, and trigger-maintained metrics."""

import random

import pytest

from dbnet.bench import _span
from dbnet.errors import MalformedSpan, UnknownNode
from dbnet.telemetry import parse_batch, parse_span


_RNG = random.Random(1)


def _wire(**overrides):
    span = _span(_RNG, 1, "Ok", 5_000)
    span.update(overrides)
    return span


def test_parse_span_accepts_valid():
    span = parse_span(_wire(attributes=[["k", "v"]]))
    assert span.latency_us == 5_000
    assert span.attributes == (("k", "v"),)


@pytest.mark.parametrize("overrides", [
    {"trace_id": "short"},
    {"trace_id": "G" * 32},                    # not lowercase hex
    {"span_id": "0" * 15},
    {"parent_span_id": "zz"},
    {"name": None},
    {"node_id": "1"},                          # must be an int
    {"node_id": True},                         # bools are not ints here
    {"start_ts": 1.5},
    {"end_ts": -1, "start_ts": 0},             # ends before it starts
    {"status": "ok"},                          # case-sensitive enum
    {"attributes": [["k", 1]]},                # values must be text
    {"attributes": ["loose"]},
])
def test_parse_span_rejects_invalid(overrides):
    with pytest.raises(MalformedSpan):
        parse_span(_wire(**overrides))


def test_parse_batch_rejects_duplicates():
    span = _wire()
    with pytest.raises(MalformedSpan):
        parse_batch([span, dict(span)])
    assert len(parse_batch([span, _wire()])) == 2
    with pytest.raises(MalformedSpan):
        parse_batch({"not": "a list"})


def test_malformed_span_rejects_whole_batch(kernel, client, scenario):
    batch = [_wire(), _wire(), _wire(status="broken")]
    with pytest.raises(Exception):
        client.ingest_spans(batch)
    stored = client.query("SELECT COUNT(spanKey) FROM traces.spans")
    assert stored["rows"][0][0] == 0


def test_batch_commits_as_one_txn_with_telemetry_root(kernel, client,
                                                      scenario):
    batch = [_wire(node_id=1) for _ in range(4)]
    assert client.ingest_spans(batch) == 4
    commits = [e for e in kernel.prov.all_entries() if e.kind == "Commit"]
    spans_inserts = [e for e in kernel.prov.all_entries()
                     if e.kind == "Insert" and e.table == "traces.spans"]
    assert len(spans_inserts) == 4
    # all four inserts share one transaction rooted in the batch
    assert len({e.txn for e in spans_inserts}) == 1
    assert commits[-1].txn == spans_inserts[0].txn
    chain = kernel.trace(spans_inserts[0].log_id, "root")
    assert chain[-1].cause.kind == "TelemetryBatch"
    assert client.ingest_spans([]) == 0


def test_trigger_metrics_match_recompute(kernel, client, scenario):
    rng = random.Random(9)
    # errors arrive late in each run so the rolling error rate never crosses
    # the anomaly threshold and restarts the node mid-test
    batch = [_span(rng, 1, "Error" if i % 3 == 2 else "Ok",
                   rng.randrange(1_000, 9_000)) for i in range(12)]
    client.ingest_spans(batch)
    live = client.metrics(1)
    client.call_procedure("recompute_metrics", [1])
    recomputed = client.metrics(1)
    assert live == recomputed
    assert live["span_count"] == 12 and live["error_count"] == 4
    assert abs(live["error_rate"] - 4 / 12) < 1e-9
    assert abs(live["avg_latency"] - live["latency_sum"] / 12) < 1e-9


def test_attributes_are_flattened(kernel, client, scenario):
    client.ingest_spans([_wire(attributes=[["http.method", "GET"],
                                           ["http.route", "/v1/health"]])])
    attrs = client.query(
        "SELECT attrKey, attrValue FROM traces.spanattrs")["rows"]
    assert sorted(map(tuple, attrs)) == [("http.method", "GET"),
                                         ("http.route", "/v1/health")]


def test_unknown_node_metrics(kernel, client, scenario):
    with pytest.raises(UnknownNode):
        kernel.get_metrics(424242, "root")

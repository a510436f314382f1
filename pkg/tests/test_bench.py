"""Benchmark harness: scenario programming, phase runs, and reporting."""

import csv

import pytest

from dbnet import bench
from dbnet.client import ApiError


def test_setup_counts_and_rerun_conflict(client):
    cfg = bench.ScenarioConfig(provisioning_delay=0.0)
    report = bench.BenchReport()
    bench.setup_example1(client, cfg, report)
    assert client.catalog() == {"schemas": 7, "tables": 7, "procedures": 9,
                                "triggers": 5}
    assert "setup" in report.phases
    with pytest.raises(ApiError) as exc:
        bench.setup_example1(client, cfg)
    assert exc.value.error_kind == "DuplicateSchema"


def test_seed_rollups(client, scenario):
    scalers, balancers = bench._pod_rollups(client)
    assert scalers == {1: pytest.approx(0.595, abs=1e-9),
                       2: pytest.approx(0.14, abs=1e-9)}
    assert balancers == {1: pytest.approx(301.5, abs=1e-9),
                         2: pytest.approx(67.0, abs=1e-9)}


def test_example1_provisions_and_traces(client, scenario):
    result = bench.run_example1(client, scenario)
    assert result["new_node"] == 4
    assert result["chain_kinds"] == bench.EXPECTED_EX1_CHAIN
    assert result["e2e_us"] >= result["kernel_us"]


def test_example2_replaces_offender(client, scenario):
    bench.run_example1(client, scenario)
    result = bench.run_example2(client, scenario)
    assert result["killed"] == 3
    assert result["replacement"] not in (1, 2, 3)
    assert client.metrics(3)["span_count"] == 0


def test_load_test_consistency(client, make_client, scenario):
    result = bench.load_test(make_client, clients=4, spans_per_client=10,
                             seed=3)
    assert result["spans"] == 40
    stored = client.query("SELECT COUNT(spanKey) FROM traces.spans "
                          "WHERE nodeId >= 101")["rows"][0][0]
    assert stored == 40


def test_load_test_zero_clients(make_client):
    report = bench.BenchReport()
    result = bench.load_test(make_client, clients=0, spans_per_client=10,
                             report=report)
    assert result == {"wall_us": 0, "spans": 0}
    assert report.phases["load"] == 0


def test_write_report(tmp_path):
    report = bench.BenchReport()
    report.add_phase("setup", 1234)
    report.add_phase("ex1_kernel", 999_999_999)  # over the reference bound
    report.notes.append("sample note")
    report.failures.append("sample failure")
    out = str(tmp_path / "report.csv")
    bench.write_report(report, out)

    with open(out) as fh:
        got = list(csv.reader(fh))
    assert got[0] == ["phase", "duration_us"]
    assert ["setup", "1234"] in got

    summary = open(out + ".txt").read()
    assert "EXCEEDS" in summary and "within" in summary
    assert "synthetic" in summary
    assert "sample note" in summary and "FAIL: sample failure" in summary
    assert not report.ok


def test_require_raises():
    with pytest.raises(bench.BenchAssertion, match="boom"):
        bench._require(False, "boom")
    bench._require(True, "fine")

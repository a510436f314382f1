"""Command-line entry points: run the HTTP service, or drive the benchmark
scenarios against a live server or an in-process instance.
"""

from __future__ import annotations

import logging
import os
import sys

import click

from . import bench as benchmod
from .bench import BenchAssertion, BenchReport, ScenarioConfig
from .client import DbnetClient
from .server import DEFAULT_ADDR, create_app, kernel_from_env

logger = logging.getLogger(__name__)


@click.group()
def main() -> None:
    """Data-centric network automation control plane."""
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")


@main.command()
@click.option("--addr", default=None, help="host:port to bind "
              f"(default {DEFAULT_ADDR}, env DBNET_ADDR)")
@click.option("--journal", default=None,
              help="journal file path (env DBNET_JOURNAL)")
@click.option("--fleet-mode", default=None, type=click.Choice(["inproc", "http"]),
              help="device fleet transport (env DBNET_FLEET_MODE)")
def serve(addr, journal, fleet_mode) -> None:
    """Run the HTTP service."""
    import uvicorn

    if journal:
        os.environ["DBNET_JOURNAL"] = journal
    if fleet_mode:
        os.environ["DBNET_FLEET_MODE"] = fleet_mode
    addr = addr or os.environ.get("DBNET_ADDR", DEFAULT_ADDR)
    host, _, port = addr.partition(":")
    kernel = kernel_from_env()
    app = create_app(kernel)
    try:
        uvicorn.run(app, host=host, port=int(port or 8484), log_level="info")
    finally:
        kernel.close()


class _BenchContext:
    """Either a thin client to a live server or a fully in-process stack."""

    def __init__(self, url, user, delay):
        self.kernel = None
        if url:
            self._make = lambda: DbnetClient(url, user)
        else:
            from fastapi.testclient import TestClient

            from .kernel import Kernel

            self.kernel = Kernel(provisioning_delay=delay)
            app = create_app(self.kernel)
            self._make = lambda: DbnetClient(
                TestClient(app, raise_server_exceptions=False), user)
        self.client = self._make()

    def make_client(self) -> DbnetClient:
        return self._make()

    def close(self) -> None:
        if self.kernel is not None:
            self.kernel.close()


def _bench_options(fn):
    fn = click.option("--url", default=None,
                      help="server URL; omitted = in-process instance")(fn)
    fn = click.option("--user", default="root", help="acting user id")(fn)
    fn = click.option("--seed", default=7, type=int)(fn)
    fn = click.option("--delay", default=0.1, type=float,
                      help="simulated provisioning delay, seconds "
                      "(in-process mode only)")(fn)
    fn = click.option("--out", default="bench_report.csv",
                      help="report CSV path")(fn)
    return fn


def _finish(ctx: _BenchContext, report: BenchReport, out: str) -> None:
    benchmod.write_report(report, out)
    ctx.close()
    with open(out + ".txt") as fh:
        click.echo(fh.read(), nl=False)
    if not report.ok:
        sys.exit(1)


@main.group()
def bench() -> None:
    """Benchmark scenarios."""


@bench.command()
@_bench_options
def setup(url, user, seed, delay, out) -> None:
    """Program the scenario objects and seed the canonical data."""
    ctx = _BenchContext(url, user, delay)
    cfg = ScenarioConfig(seed=seed, provisioning_delay=delay)
    report = BenchReport()
    try:
        benchmod.setup_example1(ctx.client, cfg, report)
        benchmod.seed_table1(ctx.client, report)
    except BenchAssertion as exc:
        report.failures.append(str(exc))
    _finish(ctx, report, out)


def _run_scenario(url, user, seed, delay, out, which: str) -> None:
    ctx = _BenchContext(url, user, delay)
    cfg = ScenarioConfig(seed=seed, provisioning_delay=delay)
    report = BenchReport()
    try:
        if ctx.kernel is not None:
            benchmod.setup_example1(ctx.client, cfg, report)
            benchmod.seed_table1(ctx.client, report)
        if which in ("ex1", "both"):
            benchmod.run_example1(ctx.client, cfg, report)
        if which in ("ex2", "both"):
            benchmod.run_example2(ctx.client, cfg, report)
    except BenchAssertion as exc:
        report.failures.append(str(exc))
    _finish(ctx, report, out)


@bench.command()
@_bench_options
def ex1(url, user, seed, delay, out) -> None:
    """Capacity scenario: ingress overload provisions a node."""
    _run_scenario(url, user, seed, delay, out, "ex1")


@bench.command()
@_bench_options
def ex2(url, user, seed, delay, out) -> None:
    """Anomaly scenario: bad telemetry replaces a node."""
    _run_scenario(url, user, seed, delay, out, "ex2")


@bench.command()
@_bench_options
@click.option("--clients", default=20, type=int)
@click.option("--spans", default=100, type=int)
def load(url, user, seed, delay, out, clients, spans) -> None:
    """Concurrent telemetry ingestion load test."""
    ctx = _BenchContext(url, user, delay)
    cfg = ScenarioConfig(seed=seed, provisioning_delay=delay,
                         clients=clients, spans_per_client=spans)
    report = BenchReport()
    try:
        if ctx.kernel is not None:
            benchmod.setup_example1(ctx.client, cfg, report)
            benchmod.seed_table1(ctx.client, report)
        benchmod.load_test(ctx.make_client, clients, spans, seed=seed,
                           report=report)
    except BenchAssertion as exc:
        report.failures.append(str(exc))
    _finish(ctx, report, out)


if __name__ == "__main__":
    main()

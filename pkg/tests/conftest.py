import logging

import pytest
from fastapi.testclient import TestClient

from dbnet import bench
from dbnet.client import DbnetClient
from dbnet.kernel import Kernel
from dbnet.server import create_app

logging.getLogger("httpx").setLevel(logging.WARNING)
logging.getLogger("httpcore").setLevel(logging.WARNING)


@pytest.fixture
def kernel():
    k = Kernel(provisioning_delay=0.0)
    yield k
    k.close()


@pytest.fixture
def make_client(kernel):
    """Factory for in-process HTTP clients against one kernel."""
    app = create_app(kernel)

    def make(user: str = "root") -> DbnetClient:
        return DbnetClient(TestClient(app, raise_server_exceptions=False), user)

    return make


@pytest.fixture
def client(make_client):
    return make_client()


@pytest.fixture
def scenario(client):
    """Programmed and seeded automation scenario (zero device delay)."""
    cfg = bench.ScenarioConfig(provisioning_delay=0.0)
    bench.setup_example1(client, cfg)
    bench.seed_table1(client)
    return cfg

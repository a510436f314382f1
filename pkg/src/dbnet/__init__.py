"""Data-centric network automation: an embedded relational store with
stored-procedure policies, triggers, full change-data-capture provenance,
and a reconciled simulated device fleet, exposed over an HTTP API.
"""

from .kernel import Kernel

__version__ = "0.1.0"

__all__ = ["Kernel", "__version__"]

from __future__ import annotations

import os

import pytest

from vitalgate.gateway_core import PatientRegistry
from vitalgate.model import Patient


@pytest.fixture
def registry() -> PatientRegistry:
    return PatientRegistry(
        [
            Patient(1, "P001", "+15551230001"),
            Patient(2, "P002", "+15551230002"),
            Patient(3, "P003", "+15551230003"),
        ]
    )


@pytest.fixture
def reading_store(tmp_path, registry):
    from vitalgate.store import ReadingStore

    store = ReadingStore(str(tmp_path / "vitals.log"), known_patients=registry.ids())
    yield store
    store.close()


@pytest.fixture
def alert_store(tmp_path):
    from vitalgate.store import AlertStore

    store = AlertStore(str(tmp_path / "alerts.log"))
    yield store
    store.close()


@pytest.fixture
def gateway(registry, reading_store, alert_store):
    from vitalgate.gateway_core import Gateway

    gw = Gateway(registry, reading_store, alert_store)
    yield gw
    gw.stop()


@pytest.fixture(autouse=True)
def _fixed_columns(monkeypatch):
    # argparse wraps help text to the terminal; pin it for golden files.
    monkeypatch.setenv("COLUMNS", "80")
    for name in list(os.environ):
        if name.startswith("VITALGATE_"):
            monkeypatch.delenv(name)

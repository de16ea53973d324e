"""HTTP endpoint and SSE stream tests against an in-process gateway."""

from __future__ import annotations

import json
import threading
import time
from datetime import datetime, timedelta, timezone

import httpx
import pytest

from vitalgate.clock import format_iso
from vitalgate.http_api import ApiServer, series_to_json
from vitalgate.model import METRIC_UNIT, SensorReading
from vitalgate.store import SeriesQuery
from vitalgate.wire_codec import Metric

T0 = datetime(2026, 8, 10, 12, 0, 0, tzinfo=timezone.utc)


def reading(value, offset_s=0.0, metric=Metric.TEMPERATURE, patient=1, seq=0):
    return SensorReading(
        patient_id=patient,
        metric=metric,
        value=value,
        unit=METRIC_UNIT[metric],
        timestamp=T0 + timedelta(seconds=offset_s),
        sequence=seq,
        source_addr64=0x0013A200_00000001,
    )


@pytest.fixture
def api(gateway):
    server = ApiServer(gateway)
    address = server.start(("127.0.0.1", 0))
    yield server, f"http://{address[0]}:{address[1]}"
    server.stop()


class StreamReader:
    """Background SSE consumer collecting parsed events."""

    def __init__(self, base: str, last_event_id: int | None = None):
        self.events: list[tuple[int, str, dict]] = []
        self._stop = threading.Event()
        headers = {}
        if last_event_id is not None:
            headers["Last-Event-ID"] = str(last_event_id)
        self._thread = threading.Thread(
            target=self._run, args=(base, headers), daemon=True
        )
        self._thread.start()

    def _run(self, base, headers):
        try:
            with httpx.stream("GET", base + "/api/stream", headers=headers, timeout=10) as resp:
                event_id, event_type = None, None
                for line in resp.iter_lines():
                    if self._stop.is_set():
                        return
                    if line.startswith("id: "):
                        event_id = int(line[4:])
                    elif line.startswith("event: "):
                        event_type = line[7:]
                    elif line.startswith("data: "):
                        self.events.append((event_id, event_type, json.loads(line[6:])))
        except httpx.HTTPError:
            pass

    def stop(self):
        self._stop.set()

    def wait_for(self, count: int, timeout: float = 5.0) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if len(self.events) >= count:
                return True
            time.sleep(0.02)
        return False


# -- REST endpoints ----------------------------------------------------------------


def test_list_patients(api, gateway):
    _, base = api
    body = httpx.get(base + "/api/patients").json()
    assert [p["patient_id"] for p in body["patients"]] == [1, 2, 3]
    assert body["patients"][0]["thresholds"]["temperature"]["high"] == 38.0


def test_latest_reflects_store(api, gateway):
    _, base = api
    gateway.process_reading(reading(36.9, 0, seq=5))
    gateway.process_reading(reading(37.4, 10, seq=6))
    body = httpx.get(base + "/api/patients/1/latest").json()
    assert body["latest"]["temperature"]["value"] == 37.4
    assert body["latest"]["temperature"]["sequence"] == 6


def test_latest_unknown_patient_404(api):
    _, base = api
    resp = httpx.get(base + "/api/patients/99/latest")
    assert resp.status_code == 404
    assert resp.json()["code"] == "unknown_patient"


def test_series_matches_store_serialization(api, gateway):
    _, base = api
    for i in range(30):
        gateway.process_reading(reading(36.5 + 0.01 * i, i, seq=i))
    params = {
        "metric": "temperature",
        "from": format_iso(T0),
        "to": format_iso(T0 + timedelta(seconds=30)),
    }
    resp = httpx.get(base + "/api/patients/1/series", params=params)
    assert resp.status_code == 200
    query = SeriesQuery(1, Metric.TEMPERATURE, T0, T0 + timedelta(seconds=30))
    expected = series_to_json(1, Metric.TEMPERATURE, gateway.store.query_series(query))
    assert resp.json() == expected
    assert len(resp.json()["points"]) == 30


def test_series_validation_422(api):
    _, base = api
    resp = httpx.get(base + "/api/patients/1/series", params={"metric": "temperature"})
    assert resp.status_code == 422
    resp = httpx.get(
        base + "/api/patients/1/series",
        params={"metric": "nope", "from": format_iso(T0), "to": format_iso(T0)},
    )
    assert resp.status_code == 422


def test_put_thresholds_validates_and_applies(api, gateway):
    _, base = api
    bad = httpx.put(base + "/api/patients/1/thresholds", json={"temperature": {"low": 38, "high": 36}})
    assert bad.status_code == 422
    assert "low" in bad.json()["message"]

    good = httpx.put(
        base + "/api/patients/1/thresholds",
        json={"temperature": {"low": 36.0, "high": 37.5}},
    )
    assert good.status_code == 200
    assert good.json()["thresholds"]["temperature"]["high"] == 37.5
    # applies on the next evaluation
    decision = gateway.process_reading(reading(37.8, 0, seq=1))
    assert decision.value == "new_alert"


def test_put_thresholds_flat_body(api, gateway):
    _, base = api
    resp = httpx.put(
        base + "/api/patients/2/thresholds",
        json={"metric": "heart_rate", "low": 50, "high": 110},
    )
    assert resp.status_code == 200
    assert resp.json()["thresholds"]["heart_rate"]["low"] == 50.0


def test_alert_list_and_ack_conflict(api, gateway):
    _, base = api
    gateway.process_reading(reading(39.5, 0, seq=1))
    alerts = httpx.get(base + "/api/alerts").json()["alerts"]
    assert len(alerts) == 1
    alert_id = alerts[0]["alert_id"]

    only_open = httpx.get(base + "/api/alerts", params={"state": "open"}).json()["alerts"]
    assert len(only_open) == 1

    first = httpx.post(base + f"/api/alerts/{alert_id}/ack", json={"operator": "nurse"})
    assert first.status_code == 200
    assert first.json()["state"] == "acknowledged"
    assert first.json()["acknowledged_by"] == "nurse"

    second = httpx.post(base + f"/api/alerts/{alert_id}/ack", json={})
    assert second.status_code == 409

    missing = httpx.post(base + "/api/alerts/ffffffffffff/ack", json={})
    assert missing.status_code == 404


def test_unknown_route_404(api):
    _, base = api
    resp = httpx.get(base + "/api/nope")
    assert resp.status_code == 404


# -- SSE stream --------------------------------------------------------------------------


def test_stream_carries_readings_in_order(api, gateway):
    _, base = api
    stream = StreamReader(base)
    time.sleep(0.2)
    for i in range(20):
        gateway.process_reading(reading(37.0, i, seq=i))
    assert stream.wait_for(20)
    stream.stop()
    reading_events = [e for e in stream.events if e[1] == "reading"]
    sequences = [e[2]["sequence"] for e in reading_events]
    assert sequences == list(range(20))
    ids = [e[0] for e in reading_events]
    assert ids == sorted(ids)
    assert len(set(ids)) == len(ids)


def test_stream_alert_events(api, gateway):
    _, base = api
    stream = StreamReader(base)
    time.sleep(0.2)
    gateway.process_reading(reading(39.9, 0, seq=0))
    assert stream.wait_for(2)
    stream.stop()
    alert_events = [e for e in stream.events if e[1] == "alert"]
    assert alert_events
    assert alert_events[0][2]["state"] == "open"
    assert alert_events[0][2]["previous_state"] is None


def test_slow_stream_consumer_is_cut_off():
    from vitalgate.http_api import EventBroker, STREAM_CLIENT_BUFFER

    broker = EventBroker()
    q, backlog = broker.subscribe()
    assert backlog == []
    for i in range(STREAM_CLIENT_BUFFER + 10):
        broker.publish("reading", {"sequence": i})
    # the overflowing client got poisoned and unsubscribed
    drained = []
    while not q.empty():
        drained.append(q.get_nowait())
    assert drained[-1] is EventBroker._OVERFLOW
    broker.publish("reading", {"sequence": -1})
    assert q.empty()  # no longer fed


def test_stream_resume_with_last_event_id(api, gateway):
    _, base = api
    first = StreamReader(base)
    time.sleep(0.2)
    for i in range(5):
        gateway.process_reading(reading(37.0, i, seq=i))
    assert first.wait_for(5)
    first.stop()
    last_id = first.events[-1][0]
    # events published while nobody listens
    for i in range(5, 10):
        gateway.process_reading(reading(37.0, i, seq=i))
    resumed = StreamReader(base, last_event_id=last_id)
    assert resumed.wait_for(5)
    resumed.stop()
    sequences = [e[2]["sequence"] for e in resumed.events if e[1] == "reading"]
    assert sequences[:5] == [5, 6, 7, 8, 9]

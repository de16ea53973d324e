"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL line with its runtime. Tolerances and budgets are pinned here.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines.
"""

from __future__ import annotations

import json
import os
import random
import signal
import subprocess
import sys
import time
from contextlib import contextmanager
from datetime import timedelta

import httpx
import numpy as np

from helpers import golden_sms_dialogue, merge_directions, oracle_checksum
from vitalgate import sensor_models as sm
from vitalgate import wire_codec as wc
from vitalgate.clock import SimClock, format_iso, parse_iso
from vitalgate.gateway_core import Gateway, PatientRegistry
from vitalgate.http_api import ApiServer, series_to_json
from vitalgate.model import Patient
from vitalgate.simulator import TcpSink, load_scenario, run_scenario
from vitalgate.sms_alerting import MockModem
from vitalgate.store import AlertStore, ReadingStore, SeriesQuery
from vitalgate.wire_codec import Metric


@contextmanager
def criterion(name: str, budget_s: float | None = None):
    t0 = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL ({time.monotonic() - t0:.2f}s)")
        raise
    elapsed = time.monotonic() - t0
    print(f"ACCEPTANCE {name}: PASS ({elapsed:.2f}s)")
    if budget_s is not None:
        assert elapsed < budget_s, f"{name} exceeded its {budget_s}s budget: {elapsed:.2f}s"


# -- 1. Codec soundness -----------------------------------------------------------


def test_codec_soundness():
    with criterion("codec-soundness", budget_s=10.0):
        rng = random.Random(20260810)

        # 10,000 randomized frames round-trip in both escaping modes.
        for _ in range(10_000):
            frame = wc.ApiFrame(
                rng.randrange(256), rng.randbytes(rng.randrange(0, 48))
            )
            for escaped in (False, True):
                frames, consumed, errors = wc.decode_stream(
                    wc.encode_frame(frame, escaped=escaped), escaped=escaped
                )
                assert frames == [frame] and not errors

        # 10,000 randomized payloads round-trip.
        metrics = list(wc.Metric)
        for _ in range(10_000):
            payload = wc.TelemetryPayload(
                rng.randrange(0x10000),
                rng.choice(metrics),
                rng.randrange(0x10000),
                rng.randrange(-0x8000, 0x8000),
            )
            assert wc.decode_payload(wc.encode_payload(payload)) == payload

        # checksum equals the independent oracle on 10,000 random bodies.
        for _ in range(10_000):
            body = rng.randbytes(rng.randrange(1, 64))
            assert wc.compute_checksum(body) == oracle_checksum(body)

        # chunking invariance across every split point of 100 fixture streams.
        for i in range(100):
            parts = [
                wc.encode_frame(
                    wc.ApiFrame(rng.randrange(256), rng.randbytes(rng.randrange(0, 12))),
                    escaped=bool(i % 2),
                )
                for _ in range(3)
            ]
            stream = rng.randbytes(rng.randrange(0, 4)) + b"".join(parts)
            reference = wc.decode_stream(stream, escaped=bool(i % 2))
            for split in range(len(stream) + 1):
                decoder = wc.StreamDecoder(escaped=bool(i % 2))
                got = decoder.feed(stream[:split]) + decoder.feed(stream[split:])
                decoder.finish()
                assert (got, decoder.consumed, decoder.errors) == reference


# -- 2. LM35 accuracy band ---------------------------------------------------------


def test_lm35_accuracy_band():
    with criterion("lm35-accuracy-band"):
        for temp in (36.0, 38.5, 40.0):
            rng = np.random.default_rng(906)
            draws = np.array([sm.simulate_lm35(temp, rng) for _ in range(10_000)])
            within = np.mean(np.abs(draws / 10.0 - temp) <= 0.4)
            assert within >= 0.93, f"{temp} C: only {within:.3f} within the band"
        # conversion itself exact to 1e-9
        for mv in (0.0, 123.456, 370.0, 1500.0):
            assert abs(sm.lm35_celsius_from_millivolts(mv) - mv / 10.0) < 1e-9


# -- 3. Heart-rate closed loop --------------------------------------------------------


def test_heart_rate_closed_loop():
    with criterion("heart-rate-closed-loop", budget_s=20.0):
        for bpm in (40, 60, 80, 100, 140, 180):
            signal_trace = sm.synth_pulse_signal(bpm, 30.0, 100.0, bpm)
            estimate = sm.bpm_from_beats(sm.detect_beats(signal_trace))
            assert abs(estimate - bpm) <= 2.0, f"{bpm} -> {estimate:.2f}"

        from scipy.signal import find_peaks

        for bpm in (40, 60, 80, 100, 140, 180):
            for duration in (10.0, 30.0):
                trace = sm.synth_ecg(bpm, duration, 250.0, bpm)
                distance = max(1, int(0.5 * (60.0 / bpm) * 250.0))
                peaks, _ = find_peaks(
                    trace.samples, height=0.5 * trace.samples.max(), distance=distance
                )
                expected = round(bpm * duration / 60.0)
                assert abs(len(peaks) - expected) <= 1


# -- 4. Flow-chart fidelity -------------------------------------------------------------

FLOWCHART_SCENARIO = """
duration = 120
seed = 42
accel = 60

[patient 1]
name = P001
baseline_temp = 37.0
baseline_bpm = 75

[patient 2]
name = P002
baseline_temp = 36.8
baseline_bpm = 80

[patient 3]
name = P003
baseline_temp = 37.2
baseline_bpm = 70

[episode fever]
patient = 1
metric = temperature
start = 20
duration = 40
target = 39.5

[episode tachycardia]
patient = 2
metric = heart_rate
start = 60
duration = 40
target = 130
"""


def test_flowchart_fidelity(tmp_path):
    with criterion("flow-chart-fidelity", budget_s=15.0):
        scenario = load_scenario(FLOWCHART_SCENARIO)
        clock = SimClock(accel=60.0)
        registry = PatientRegistry(
            [
                Patient(1, "P001", "+15551230001"),
                Patient(2, "P002", "+15551230002"),
                Patient(3, "P003", "+15551230003"),
            ]
        )
        store = ReadingStore(str(tmp_path / "vitals.log"), known_patients=registry.ids())
        alert_store = AlertStore(str(tmp_path / "alerts.log"))
        with MockModem(clock=clock) as modem:
            gateway = Gateway(
                registry, store, alert_store, clock=clock, modem_address=modem.address
            )
            listen = gateway.start(("127.0.0.1", 0))
            sink = TcpSink(listen)
            report = run_scenario(scenario, sink, clock=clock)
            sink.close()
            assert not report.aborted
            assert gateway.wait_idle(expected_readings=report.count(), timeout_wall_s=10)

            # stored reading count equals simulator-reported emission count
            assert store.count() == report.count() == 720

            # exactly 2 alerts: the fever and the tachycardia
            alerts = alert_store.alerts()
            assert len(alerts) == 2
            by_key = {(a.patient_id, a.metric) for a in alerts}
            assert by_key == {(1, Metric.TEMPERATURE), (2, Metric.HEART_RATE)}

            # exactly 2 SMS dialogues, each matching the golden sequence
            assert len(modem.dialogues) == 2
            assert gateway.counters.sms_sent == 2
            alerts_by_ref = sorted(alerts, key=lambda a: a.sms_status.reference)
            from vitalgate.sms_alerting import format_alert_message

            for alert, dialogue in zip(alerts_by_ref, modem.dialogues):
                patient = registry.get(alert.patient_id)
                expected = golden_sms_dialogue(
                    patient.doctor_phone,
                    format_alert_message(alert, patient),
                    alert.sms_status.reference,
                )
                assert merge_directions(dialogue.entries) == expected

            gateway.stop()
        store.close()
        alert_store.close()


# -- 5. Durability ------------------------------------------------------------------------


def bruteforce_readings(path: str):
    """Parse complete log lines by hand (the oracle side of the check)."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        data = fh.read()
    lines = data.split("\n")
    if lines and lines[-1] != "":
        lines.pop()  # torn tail
    for line in lines:
        if not line:
            continue
        parts = line.split(",")
        assert len(parts) == 6
        rows.append(
            {
                "timestamp": parts[0],
                "patient_id": int(parts[1]),
                "metric": parts[2],
                "value": float(parts[3]),
                "sequence": int(parts[4]),
            }
        )
    return rows


DURABILITY_SCENARIO = """
duration = 60
seed = 7
accel = 60

[patient 1]
baseline_temp = 37.0
baseline_bpm = 75

[patient 2]
baseline_temp = 36.9
baseline_bpm = 82
"""


def test_durability_kill_and_restart(tmp_path):
    with criterion("durability"):
        store_path = tmp_path / "vitals.log"
        patients = {
            "patients": [
                {"patient_id": 1, "display_name": "P001", "doctor_phone": "+15551230001"},
                {"patient_id": 2, "display_name": "P002", "doctor_phone": "+15551230002"},
            ]
        }
        patients_path = tmp_path / "patients.json"
        patients_path.write_text(json.dumps(patients))

        proc = subprocess.Popen(
            [
                sys.executable, "-m", "vitalgate", "gateway", "run",
                "--listen", "127.0.0.1:0", "--http", "127.0.0.1:0",
                "--store", str(store_path), "--patients", str(patients_path),
                "--clock-accel", "60",
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )
        try:
            banner = proc.stdout.readline()
            assert banner.startswith("gateway: nodes on "), banner
            host_port = banner.split("nodes on ")[1].split(",")[0].strip()
            host, port = host_port.rsplit(":", 1)

            scenario = load_scenario(DURABILITY_SCENARIO)
            sink = TcpSink((host, int(port)))

            import threading

            sim_clock = SimClock(accel=60.0)
            sim_thread = threading.Thread(
                target=run_scenario, args=(scenario, sink, sim_clock), daemon=True
            )
            sim_thread.start()

            # wait until some readings are durably on disk, then kill -9
            deadline = time.monotonic() + 5.0
            while time.monotonic() < deadline:
                if store_path.exists() and store_path.stat().st_size > 2000:
                    break
                time.sleep(0.02)
            os.kill(proc.pid, signal.SIGKILL)
            proc.wait(timeout=5)
            sim_thread.join(timeout=5)
            sink.close()
        finally:
            if proc.poll() is None:
                proc.kill()

        raw = bruteforce_readings(str(store_path))
        assert len(raw) > 0

        # restart: the rebuilt index holds exactly the durable rows
        reopened = ReadingStore(str(store_path))
        assert reopened.count() == len(raw)

        for patient_id in (1, 2):
            for metric, name in ((Metric.TEMPERATURE, "temperature"), (Metric.HEART_RATE, "heart_rate")):
                expected = [
                    (parse_iso(row["timestamp"]), row["value"])
                    for row in raw
                    if row["patient_id"] == patient_id and row["metric"] == name
                ]
                expected.sort(key=lambda pair: pair[0])
                got = reopened.query_series(
                    SeriesQuery(
                        patient_id,
                        metric,
                        parse_iso("2000-01-01T00:00:00Z"),
                        parse_iso("2100-01-01T00:00:00Z"),
                    )
                )
                assert got == expected
        reopened.close()


# -- 6. API coherence ------------------------------------------------------------------------


API_SCENARIO = """
duration = 60
seed = 3
accel = 60

[patient 1]
baseline_temp = 37.0
baseline_bpm = 75
"""


def test_api_coherence(tmp_path):
    with criterion("api-coherence"):
        registry = PatientRegistry([Patient(1, "P001", "+15551230001")])
        store = ReadingStore(str(tmp_path / "v.log"), known_patients=registry.ids())
        alert_store = AlertStore(str(tmp_path / "a.log"))
        clock = SimClock(accel=60.0)
        gateway = Gateway(registry, store, alert_store, clock=clock)
        api = ApiServer(gateway)
        listen = gateway.start(("127.0.0.1", 0))
        http_addr = api.start(("127.0.0.1", 0))
        base = f"http://{http_addr[0]}:{http_addr[1]}"

        scenario = load_scenario(API_SCENARIO)
        sink = TcpSink(listen)
        report = run_scenario(scenario, sink, clock=clock)
        sink.close()
        assert gateway.wait_idle(expected_readings=report.count(), timeout_wall_s=10)

        # /series equals store.query_series for 50 randomized windows
        rng = random.Random(99)
        latest = store.latest(1)
        t_lo = min(r.timestamp for r in latest.values()) - timedelta(seconds=90)
        t_hi = max(r.timestamp for r in latest.values()) + timedelta(seconds=5)
        span = (t_hi - t_lo).total_seconds()
        for _ in range(50):
            a = t_lo + timedelta(seconds=rng.uniform(0, span))
            b = t_lo + timedelta(seconds=rng.uniform(0, span))
            # the wire format carries milliseconds; compare like for like
            start, end = sorted((parse_iso(format_iso(a)), parse_iso(format_iso(b))))
            metric = rng.choice([Metric.TEMPERATURE, Metric.HEART_RATE])
            max_points = rng.choice([None, 5, 10])
            params = {"metric": "temperature" if metric is Metric.TEMPERATURE else "heart_rate",
                      "from": format_iso(start), "to": format_iso(end)}
            if max_points:
                params["max_points"] = str(max_points)
            resp = httpx.get(base + "/api/patients/1/series", params=params)
            assert resp.status_code == 200
            query = SeriesQuery(1, metric, start, end, max_points)
            expected = series_to_json(1, metric, store.query_series(query))
            assert resp.json() == expected

        # PUT thresholds, then a breach raises an alert on the next evaluation
        resp = httpx.put(
            base + "/api/patients/1/thresholds",
            json={"temperature": {"low": 36.0, "high": 37.3}},
        )
        assert resp.status_code == 200
        from vitalgate.model import METRIC_UNIT, SensorReading

        breach = SensorReading(
            patient_id=1,
            metric=Metric.TEMPERATURE,
            value=37.8,
            unit=METRIC_UNIT[Metric.TEMPERATURE],
            timestamp=clock.now() + timedelta(seconds=400),
            sequence=999,
            source_addr64=0x1,
        )
        decision = gateway.process_reading(breach)
        assert decision is not None and decision.value == "new_alert"

        # double-ack conflicts
        alerts = httpx.get(base + "/api/alerts", params={"state": "open"}).json()["alerts"]
        assert alerts
        alert_id = alerts[0]["alert_id"]
        first = httpx.post(base + f"/api/alerts/{alert_id}/ack", json={"operator": "t"})
        assert first.status_code == 200
        second = httpx.post(base + f"/api/alerts/{alert_id}/ack", json={"operator": "t"})
        assert second.status_code == 409

        api.stop()
        gateway.stop()
        store.close()
        alert_store.close()

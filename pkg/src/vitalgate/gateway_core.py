"""Coordinator-side pipeline.

Ingests byte streams, decodes frames and payloads, stamps readings at
arrival, appends them to the store, evaluates normal-range rules and drives
the alert lifecycle including SMS dispatch. Every decode error and alert
transition is emitted as one structured key=value log line.

Rule semantics: a reading outside [low, high] opens an alert unless one is
already open or the previous alert is younger than the debounce window; an
open alert resolves on the Nth consecutive in-range reading. ECG samples are
stored but never threshold-evaluated.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading
from dataclasses import dataclass
from datetime import datetime
from enum import Enum

from .clock import Clock
from .model import (
    Alert,
    AlertState,
    BreachBound,
    Patient,
    SensorReading,
    SmsState,
    UnitMismatchError,
    VitalThresholds,
    default_thresholds,
    metric_from_name,
    metric_name,
    reading_from_payload,
    METRIC_UNIT,
)
from .sms_alerting import SocketTransport, format_alert_message, send_sms
from .store import AlertStore, ReadingStore
from .wire_codec import (
    FRAME_TYPE_RECEIVE_PACKET,
    Metric,
    PayloadError,
    ReceivePacket,
    StreamDecoder,
    decode_payload,
)

logger = logging.getLogger(__name__)

SMS_QUEUE_SIZE = 64


class Decision(Enum):
    NORMAL = "normal"
    NEW_ALERT = "new_alert"
    SUPPRESSED_DUPLICATE = "suppressed_duplicate"
    RESOLVES_ALERT = "resolves_alert"


@dataclass
class RuleState:
    """Per-(patient, metric) evaluation memory."""

    open_alert_id: str | None = None
    last_alert_at: datetime | None = None
    consecutive_in_range: int = 0


def evaluate(reading: SensorReading, thresholds: VitalThresholds, state: RuleState) -> Decision:
    """Classify one reading against its thresholds and rule state.

    Updates the consecutive-in-range counter; opening and resolving alerts
    (and the matching state fields) are the caller's job.
    """
    if METRIC_UNIT[thresholds.metric] is not reading.unit or thresholds.metric is not reading.metric:
        raise UnitMismatchError(
            f"reading {metric_name(reading.metric)}/{reading.unit.value} does not "
            f"match thresholds for {metric_name(thresholds.metric)}"
        )
    in_range = thresholds.low <= reading.value <= thresholds.high
    if not in_range:
        state.consecutive_in_range = 0
        if state.open_alert_id is not None:
            return Decision.SUPPRESSED_DUPLICATE
        if state.last_alert_at is not None:
            age = (reading.timestamp - state.last_alert_at).total_seconds()
            if age < thresholds.debounce_window_s:
                return Decision.SUPPRESSED_DUPLICATE
        return Decision.NEW_ALERT
    if state.open_alert_id is not None:
        state.consecutive_in_range += 1
        if state.consecutive_in_range >= thresholds.resolve_after:
            return Decision.RESOLVES_ALERT
    return Decision.NORMAL


# -- Patient registry ------------------------------------------------------------


class RegistryError(ValueError):
    pass


class PatientRegistry:
    """Thread-safe patient table with per-metric thresholds."""

    def __init__(self, patients: list[Patient] | None = None):
        self._lock = threading.Lock()
        self._patients: dict[int, Patient] = {}
        for p in patients or []:
            self.add(p)

    def add(self, patient: Patient) -> None:
        with self._lock:
            self._patients[patient.patient_id] = patient

    def get(self, patient_id: int) -> Patient | None:
        with self._lock:
            return self._patients.get(patient_id)

    def all(self) -> list[Patient]:
        with self._lock:
            return sorted(self._patients.values(), key=lambda p: p.patient_id)

    def ids(self) -> set[int]:
        with self._lock:
            return set(self._patients)

    def update_thresholds(self, patient_id: int, thresholds: VitalThresholds) -> Patient:
        """Replace one metric's thresholds; takes effect on the next evaluation."""
        with self._lock:
            patient = self._patients.get(patient_id)
            if patient is None:
                raise KeyError(patient_id)
            patient.thresholds[thresholds.metric] = thresholds
            return patient


def load_patient_registry(path: str) -> PatientRegistry:
    """Read the JSON patient file (see docs/PATIENTS_FORMAT.md)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise RegistryError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "patients" not in doc:
        raise RegistryError(f"{path}: expected an object with a 'patients' list")
    patients = []
    for i, entry in enumerate(doc["patients"]):
        try:
            thresholds = default_thresholds()
            for name, spec in entry.get("thresholds", {}).items():
                metric = metric_from_name(name)
                thresholds[metric] = VitalThresholds(
                    metric=metric,
                    low=float(spec["low"]),
                    high=float(spec["high"]),
                    debounce_window_s=float(spec.get("debounce_window_s", 300.0)),
                    resolve_after=int(spec.get("resolve_after", 3)),
                )
            patients.append(
                Patient(
                    patient_id=int(entry["patient_id"]),
                    display_name=str(entry["display_name"]),
                    doctor_phone=str(entry["doctor_phone"]),
                    thresholds=thresholds,
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise RegistryError(f"{path}: patients[{i}]: {exc}") from exc
    return PatientRegistry(patients)


# -- Counters and events ------------------------------------------------------------


@dataclass
class GatewayCounters:
    frames_ok: int = 0
    frame_errors: int = 0
    payload_errors: int = 0
    unknown_patient: int = 0
    ignored_frames: int = 0
    readings_stored: int = 0
    store_errors: int = 0
    alerts_opened: int = 0
    sms_sent: int = 0
    sms_failed: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class UnknownAlertError(KeyError):
    pass


# -- SMS dispatch --------------------------------------------------------------------


class SmsDispatcher:
    """Serializes alert SMS sends through one worker and a bounded queue.

    Enqueueing never blocks ingestion: when the queue is full the job is
    parked and re-queued as soon as the worker drains, so jobs back up
    rather than drop.
    """

    def __init__(self, gateway: "Gateway"):
        self._gateway = gateway
        self._queue: queue.Queue = queue.Queue(maxsize=SMS_QUEUE_SIZE)
        self._deferred: list[str] = []
        self._lock = threading.Lock()
        self._worker = threading.Thread(target=self._run, daemon=True, name="sms-worker")
        self._stop = threading.Event()
        self._worker.start()

    def enqueue(self, alert_id: str) -> bool:
        try:
            self._queue.put_nowait(alert_id)
            return True
        except queue.Full:
            with self._lock:
                self._deferred.append(alert_id)
            logger.warning("event=sms_queue_full alert_id=%s action=deferred", alert_id)
            return False

    def idle(self) -> bool:
        with self._lock:
            backlog = bool(self._deferred)
        return self._queue.unfinished_tasks == 0 and not backlog

    def stop(self) -> None:
        self._stop.set()
        try:
            self._queue.put_nowait(None)  # wake a blocked worker
        except queue.Full:
            pass  # worker has plenty to wake up on already

    def _run(self) -> None:
        while not self._stop.is_set():
            alert_id = self._queue.get()
            try:
                if alert_id is not None:
                    self._gateway._deliver_sms(alert_id)
            finally:
                self._queue.task_done()
            with self._lock:
                while self._deferred and not self._queue.full():
                    self._queue.put_nowait(self._deferred.pop(0))


# -- Gateway -----------------------------------------------------------------------


class Gateway:
    """The coordinator: ingest, rules, persistence, alerting, event fan-out.

    Listeners registered via add_listener receive ("reading", SensorReading)
    and ("alert", Alert, old_state) events; they must be fast and non-blocking
    (the HTTP stream broker hands off to per-client queues).
    """

    def __init__(
        self,
        registry: PatientRegistry,
        store: ReadingStore,
        alert_store: AlertStore,
        clock: Clock | None = None,
        modem_address: tuple[str, int] | None = None,
        escaped: bool = False,
        sms_stage_timeout_s: float = 5.0,
        sms_max_attempts: int = 3,
        sms_backoff_s: float = 2.0,
    ):
        self.registry = registry
        self.store = store
        self.alert_store = alert_store
        self.clock = clock or Clock()
        self.modem_address = modem_address
        self.escaped = escaped
        self.sms_stage_timeout_s = sms_stage_timeout_s
        self.sms_max_attempts = sms_max_attempts
        self.sms_backoff_s = sms_backoff_s
        self.counters = GatewayCounters()
        self._rule_states: dict[tuple[int, Metric], RuleState] = {}
        self._rule_lock = threading.Lock()
        # Serializes rule evaluation and every alert state mutation; SMS I/O
        # itself runs outside it.
        self._eval_lock = threading.Lock()
        self._counter_lock = threading.Lock()
        self._listeners: list = []
        self._dispatcher = SmsDispatcher(self)
        self._server_socket: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._running = False
        self._restore_rule_state()

    # - events -

    def add_listener(self, callback) -> None:
        self._listeners.append(callback)

    def _notify(self, *event) -> None:
        for callback in list(self._listeners):
            try:
                callback(*event)
            except Exception:
                logger.exception("event=listener_error")

    def _count(self, name: str, delta: int = 1) -> None:
        with self._counter_lock:
            setattr(self.counters, name, getattr(self.counters, name) + delta)

    # - rule state bootstrap -

    def _restore_rule_state(self) -> None:
        """Rebuild open-alert linkage after a restart."""
        for alert in self.alert_store.alerts():
            state = self._rule_state(alert.patient_id, alert.metric)
            if alert.is_open:
                state.open_alert_id = alert.alert_id
                state.consecutive_in_range = 0
            if state.last_alert_at is None or alert.created_at > state.last_alert_at:
                state.last_alert_at = alert.created_at

    def _rule_state(self, patient_id: int, metric: Metric) -> RuleState:
        with self._rule_lock:
            return self._rule_states.setdefault((patient_id, metric), RuleState())

    # - ingest -

    def ingest_session(self) -> "IngestSession":
        """One per transport connection; feed raw bytes into it."""
        return IngestSession(self)

    def process_reading(self, reading: SensorReading) -> Decision | None:
        """Store one reading and run the flow-chart evaluation.

        Returns the decision, or None when the metric carries no thresholds
        (ECG samples are stored and displayed, never evaluated).
        """
        try:
            self.store.append(reading)
        except Exception as exc:
            self._count("store_errors")
            logger.error("event=store_error detail=%s", exc)
            return None
        self._count("readings_stored")
        self._notify("reading", reading)

        patient = self.registry.get(reading.patient_id)
        thresholds = patient.thresholds.get(reading.metric) if patient else None
        if thresholds is None:
            return None

        state = self._rule_state(reading.patient_id, reading.metric)
        with self._eval_lock:
            decision = evaluate(reading, thresholds, state)
            if decision is Decision.NEW_ALERT:
                self._open_alert(reading, thresholds, state)
            elif decision is Decision.RESOLVES_ALERT:
                self._resolve_alert(reading, state)
        return decision

    # - alert lifecycle -

    def _open_alert(self, reading: SensorReading, t: VitalThresholds, state: RuleState) -> Alert:
        bound = BreachBound.LOW if reading.value < t.low else BreachBound.HIGH
        limit = t.low if bound is BreachBound.LOW else t.high
        alert = Alert(
            patient_id=reading.patient_id,
            metric=reading.metric,
            observed_value=reading.value,
            breached_bound=bound,
            breached_limit=limit,
            created_at=reading.timestamp,
        )
        state.open_alert_id = alert.alert_id
        state.last_alert_at = reading.timestamp
        state.consecutive_in_range = 0
        self.alert_store.record("created", alert)
        self._count("alerts_opened")
        logger.info(
            "event=alert_opened alert_id=%s patient=%d metric=%s value=%s bound=%s",
            alert.alert_id, alert.patient_id, metric_name(alert.metric),
            alert.observed_value, alert.breached_bound.value,
        )
        self._notify("alert", alert, None)
        if not self._dispatcher.enqueue(alert.alert_id):
            # Queue full: the job is parked for retry; make that visible.
            alert.sms_status.state = SmsState.FAILED
            alert.sms_status.attempts = 0
            self.alert_store.record("sms", alert, deferred=True)
        return alert

    def _resolve_alert(self, reading: SensorReading, state: RuleState) -> None:
        alert = self.alert_store.get(state.open_alert_id) if state.open_alert_id else None
        state.open_alert_id = None
        state.consecutive_in_range = 0
        if alert is None or not alert.is_open:
            return
        old_state = alert.state
        alert.transition(AlertState.RESOLVED)
        alert.resolved_at = reading.timestamp
        self.alert_store.record("state", alert)
        logger.info(
            "event=alert_transition alert_id=%s from=%s to=%s",
            alert.alert_id, old_state.value, alert.state.value,
        )
        self._notify("alert", alert, old_state)

    def acknowledge_alert(self, alert_id: str, operator: str) -> Alert:
        """Operator workflow: mark an open or notified alert as acknowledged."""
        alert = self.alert_store.get(alert_id)
        if alert is None:
            raise UnknownAlertError(alert_id)
        with self._eval_lock:
            old_state = alert.state
            alert.transition(AlertState.ACKNOWLEDGED)  # raises on illegal moves
            alert.acknowledged_by = operator
            alert.acknowledged_at = self.clock.now()
        self.alert_store.record("state", alert, operator=operator)
        logger.info(
            "event=alert_transition alert_id=%s from=%s to=%s operator=%s",
            alert.alert_id, old_state.value, alert.state.value, operator,
        )
        self._notify("alert", alert, old_state)
        return alert

    # - SMS -

    def _connect_modem(self):
        if self.modem_address is None:
            return None
        return SocketTransport(socket.create_connection(self.modem_address, timeout=5.0))

    def _deliver_sms(self, alert_id: str) -> None:
        alert = self.alert_store.get(alert_id)
        if alert is None:
            return
        patient = self.registry.get(alert.patient_id)
        if patient is None:
            return
        body = format_alert_message(alert, patient)
        transport = None
        try:
            transport = self._connect_modem()
            if transport is None:
                raise ConnectionError("no modem configured")
            result = send_sms(
                patient.doctor_phone,
                body,
                transport,
                clock=self.clock,
                stage_timeout_s=self.sms_stage_timeout_s,
                max_attempts=self.sms_max_attempts,
                backoff_s=self.sms_backoff_s,
            )
        except OSError as exc:
            logger.error("event=sms_transport_error alert_id=%s detail=%s", alert_id, exc)
            result = None
        finally:
            if transport is not None:
                transport.close()

        with self._eval_lock:
            old_state = alert.state
            if result is not None and result.sent:
                alert.sms_status.state = SmsState.SENT
                alert.sms_status.attempts = result.attempts
                alert.sms_status.reference = result.reference
                # If an operator already acknowledged (or the breach resolved)
                # while the dialogue ran, keep that state; never step backward.
                if alert.state is AlertState.OPEN:
                    alert.transition(AlertState.NOTIFIED)
            else:
                alert.sms_status.state = SmsState.FAILED
                alert.sms_status.attempts = result.attempts if result else 0
        if result is not None and result.sent:
            self._count("sms_sent")
            transcript_dump = result.transcripts[-1].to_hex_dump()
            self.alert_store.record("sms", alert, transcript=transcript_dump)
            logger.info(
                "event=sms_sent alert_id=%s reference=%s attempts=%d",
                alert_id, result.reference, result.attempts,
            )
        else:
            self._count("sms_failed")
            self.alert_store.record(
                "sms", alert, failed_stage=result.failed_stage if result else "CONNECT"
            )
            logger.warning(
                "event=sms_failed alert_id=%s stage=%s attempts=%d",
                alert_id,
                result.failed_stage if result else "CONNECT",
                alert.sms_status.attempts,
            )
        if alert.state is not old_state:
            logger.info(
                "event=alert_transition alert_id=%s from=%s to=%s",
                alert.alert_id, old_state.value, alert.state.value,
            )
        self._notify("alert", alert, old_state)

    # - TCP listener -

    def start(self, listen_address: tuple[str, int]) -> tuple[str, int]:
        """Bind the node-stream listener; returns the bound address."""
        self._server_socket = socket.create_server(listen_address)
        self._running = True
        self._accept_thread = threading.Thread(
            target=self._accept_loop, daemon=True, name="ingest-accept"
        )
        self._accept_thread.start()
        bound = self._server_socket.getsockname()
        logger.info("event=gateway_listening address=%s:%d", bound[0], bound[1])
        return bound

    def stop(self) -> None:
        self._running = False
        if self._server_socket is not None:
            try:
                self._server_socket.close()
            except OSError:
                pass
        self._dispatcher.stop()

    def wait_idle(self, expected_readings: int, timeout_wall_s: float = 30.0) -> bool:
        """Test/ops helper: block until N readings are stored and SMS drained."""
        import time

        deadline = time.monotonic() + timeout_wall_s
        while time.monotonic() < deadline:
            if self.counters.readings_stored >= expected_readings and self._dispatcher.idle():
                return True
            time.sleep(0.02)
        return False

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, peer = self._server_socket.accept()
            except OSError:
                return
            threading.Thread(
                target=self._serve_connection, args=(conn, peer), daemon=True
            ).start()

    def _serve_connection(self, conn: socket.socket, peer) -> None:
        session = self.ingest_session()
        logger.info("event=stream_connected peer=%s:%d", peer[0], peer[1])
        try:
            while True:
                try:
                    chunk = conn.recv(4096)
                except OSError:
                    break
                if not chunk:
                    break
                session.feed(chunk)
        finally:
            session.finish()
            try:
                conn.close()
            except OSError:
                pass
            logger.info(
                "event=stream_disconnected peer=%s:%d frames=%d errors=%d",
                peer[0], peer[1], session.frames, session.errors,
            )


class IngestSession:
    """Per-connection decode state; turns raw bytes into stored readings."""

    def __init__(self, gateway: Gateway):
        self._gateway = gateway
        self._decoder = StreamDecoder(escaped=gateway.escaped)
        self._errors_seen = 0
        self.frames = 0
        self.errors = 0

    def feed(self, data: bytes) -> None:
        for frame in self._decoder.feed(data):
            self.frames += 1
            self._handle_frame(frame)
        self._drain_errors()

    def finish(self) -> None:
        self._decoder.finish()
        self._drain_errors()

    def _drain_errors(self) -> None:
        new = self._decoder.errors[self._errors_seen:]
        self._errors_seen = len(self._decoder.errors)
        for err in new:
            self.errors += 1
            self._gateway._count("frame_errors")
            logger.warning(
                "event=decode_error kind=%s offset=%d detail=%s",
                err.kind, err.offset, err.detail,
            )

    def _handle_frame(self, frame) -> None:
        gw = self._gateway
        if frame.frame_type != FRAME_TYPE_RECEIVE_PACKET:
            gw._count("ignored_frames")
            logger.info("event=frame_ignored frame_type=0x%02X", frame.frame_type)
            return
        try:
            packet = ReceivePacket.from_frame(frame)
            payload = decode_payload(packet.rf_data)
        except (PayloadError, ValueError) as exc:
            gw._count("payload_errors")
            logger.warning("event=payload_error detail=%s", exc)
            return
        gw._count("frames_ok")
        if gw.registry.get(payload.patient_id) is None:
            gw._count("unknown_patient")
            logger.warning("event=unknown_patient patient=%d", payload.patient_id)
            return
        reading = reading_from_payload(payload, packet.source_addr64, gw.clock.now())
        gw.process_reading(reading)

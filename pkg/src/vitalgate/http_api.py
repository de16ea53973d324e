"""HTTP facade over the gateway.

Plain HTTP/1.1 with JSON bodies (snake_case fields, ISO-8601 UTC
timestamps; see docs/API.md) and a server-sent-events stream carrying one
event per stored reading and per alert transition. Events carry
monotonically increasing ids so a client can resume with Last-Event-ID.
Static dashboard files are served from an optional directory at /.

No authentication by design: this mirrors the original open-LAN page and is
safe only for simulation. Any real deployment needs auth and TLS in front.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import queue
import re
import threading
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

from .clock import format_iso, parse_iso
from .gateway_core import Gateway, UnknownAlertError
from .model import (
    AlertState,
    AlertTransitionError,
    Patient,
    SensorReading,
    VitalThresholds,
    metric_from_name,
    metric_name,
)
from .store import SeriesQuery, StoreNotFoundError, alert_to_json
from .wire_codec import Metric

logger = logging.getLogger(__name__)

STREAM_CLIENT_BUFFER = 256   # events a slow consumer may lag before disconnect
STREAM_RESUME_BUFFER = 2048  # ring of recent events kept for Last-Event-ID resume
STREAM_KEEPALIVE_S = 5.0


class ApiError(Exception):
    """Maps straight onto a non-2xx JSON body: status, machine code, message."""

    def __init__(self, http_status: int, code: str, message: str):
        super().__init__(message)
        self.http_status = http_status
        self.code = code
        self.message = message


# -- JSON views ------------------------------------------------------------------


def reading_to_json(r: SensorReading) -> dict:
    return {
        "patient_id": r.patient_id,
        "metric": metric_name(r.metric),
        "value": r.value,
        "unit": r.unit.value,
        "timestamp": format_iso(r.timestamp),
        "sequence": r.sequence,
        "source_addr64": f"{r.source_addr64:016X}",
    }


def thresholds_to_json(t: VitalThresholds) -> dict:
    return {
        "low": t.low,
        "high": t.high,
        "debounce_window_s": t.debounce_window_s,
        "resolve_after": t.resolve_after,
    }


def patient_to_json(p: Patient) -> dict:
    return {
        "patient_id": p.patient_id,
        "display_name": p.display_name,
        "doctor_phone": p.doctor_phone,
        "thresholds": {
            metric_name(metric): thresholds_to_json(t) for metric, t in sorted(p.thresholds.items())
        },
    }


def series_to_json(patient_id: int, metric: Metric, points) -> dict:
    return {
        "patient_id": patient_id,
        "metric": metric_name(metric),
        "points": [{"timestamp": format_iso(ts), "value": value} for ts, value in points],
    }


# -- SSE broker -------------------------------------------------------------------


class EventBroker:
    """Fan-out of gateway events to SSE subscribers.

    publish() never blocks: each subscriber owns a bounded queue and is cut
    off when it overflows (the handler sees the poison marker and closes).
    A ring buffer of recent events supports reconnect-with-resume.
    """

    _OVERFLOW = object()

    def __init__(self):
        self._lock = threading.Lock()
        self._next_id = 1
        self._ring: deque = deque(maxlen=STREAM_RESUME_BUFFER)
        self._subscribers: list[queue.Queue] = []

    def publish(self, event_type: str, payload: dict) -> int:
        with self._lock:
            event_id = self._next_id
            self._next_id += 1
            event = (event_id, event_type, payload)
            self._ring.append(event)
            subscribers = list(self._subscribers)
        for q in subscribers:
            try:
                q.put_nowait(event)
            except queue.Full:
                # Slow consumer: poison it and stop feeding.
                self._drop(q)
        return event_id

    def _drop(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)
        try:
            q.put_nowait(self._OVERFLOW)
        except queue.Full:
            # Make room so the marker always lands.
            try:
                q.get_nowait()
            except queue.Empty:
                pass
            q.put_nowait(self._OVERFLOW)

    def subscribe(self, last_event_id: int | None = None):
        """Returns (queue, backlog) where backlog replays missed events."""
        q: queue.Queue = queue.Queue(maxsize=STREAM_CLIENT_BUFFER)
        with self._lock:
            backlog = []
            if last_event_id is not None:
                backlog = [e for e in self._ring if e[0] > last_event_id]
            self._subscribers.append(q)
        return q, backlog

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)


# -- Server -----------------------------------------------------------------------


class ApiServer:
    """Hosts the REST endpoints, the SSE stream and the static bundle."""

    def __init__(self, gateway: Gateway, static_dir: str | None = None):
        self.gateway = gateway
        self.static_dir = Path(static_dir).resolve() if static_dir else None
        self.broker = EventBroker()
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None
        gateway.add_listener(self._on_gateway_event)

    def _on_gateway_event(self, kind: str, *args) -> None:
        if kind == "reading":
            (reading,) = args
            self.broker.publish("reading", reading_to_json(reading))
        elif kind == "alert":
            alert, old_state = args
            payload = alert_to_json(alert)
            payload["previous_state"] = old_state.value if old_state else None
            self.broker.publish("alert", payload)

    def start(self, address: tuple[str, int]) -> tuple[str, int]:
        server = self

        class Handler(_ApiHandler):
            api = server

        self._httpd = ThreadingHTTPServer(address, Handler)
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True, name="http-api")
        self._thread.start()
        bound = self._httpd.server_address
        logger.info("event=http_listening address=%s:%d", bound[0], bound[1])
        return bound

    def stop(self) -> None:
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()


_ROUTES = [
    ("GET", re.compile(r"^/api/patients$"), "list_patients"),
    ("GET", re.compile(r"^/api/patients/(?P<id>\d+)/latest$"), "patient_latest"),
    ("GET", re.compile(r"^/api/patients/(?P<id>\d+)/series$"), "patient_series"),
    ("PUT", re.compile(r"^/api/patients/(?P<id>\d+)/thresholds$"), "put_thresholds"),
    ("GET", re.compile(r"^/api/alerts$"), "list_alerts"),
    ("POST", re.compile(r"^/api/alerts/(?P<id>[0-9a-f]+)/ack$"), "ack_alert"),
    ("GET", re.compile(r"^/api/stream$"), "stream"),
]


class _ApiHandler(BaseHTTPRequestHandler):
    api: ApiServer
    protocol_version = "HTTP/1.1"

    # - plumbing -

    def log_message(self, fmt, *args):
        logger.debug("event=http %s", fmt % args)

    def _send_json(self, status: int, payload) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_api_error(self, err: ApiError) -> None:
        self._send_json(err.http_status, {"code": err.code, "message": err.message})

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0) or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return {}
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ApiError(422, "invalid_json", f"body is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            raise ApiError(422, "invalid_json", "body must be a JSON object")
        return doc

    def _dispatch(self, method: str) -> None:
        url = urlsplit(self.path)
        try:
            for verb, pattern, name in _ROUTES:
                match = pattern.match(url.path)
                if match:
                    if verb != method:
                        raise ApiError(405, "method_not_allowed", f"{method} not allowed here")
                    getattr(self, name)(match, parse_qs(url.query))
                    return
            if method == "GET" and self.api.static_dir is not None:
                self._serve_static(url.path)
                return
            raise ApiError(404, "not_found", f"no such resource: {url.path}")
        except ApiError as err:
            self._send_api_error(err)
        except BrokenPipeError:
            pass
        except Exception:
            logger.exception("event=http_internal_error path=%s", self.path)
            try:
                self._send_api_error(ApiError(500, "internal_error", "internal error"))
            except OSError:
                pass

    def do_GET(self):
        self._dispatch("GET")

    def do_PUT(self):
        self._dispatch("PUT")

    def do_POST(self):
        self._dispatch("POST")

    # - endpoints -

    def _patient_or_404(self, match) -> Patient:
        patient = self.api.gateway.registry.get(int(match.group("id")))
        if patient is None:
            raise ApiError(404, "unknown_patient", f"no patient {match.group('id')}")
        return patient

    def list_patients(self, match, query) -> None:
        patients = [patient_to_json(p) for p in self.api.gateway.registry.all()]
        self._send_json(200, {"patients": patients})

    def patient_latest(self, match, query) -> None:
        patient = self._patient_or_404(match)
        latest = self.api.gateway.store.latest(patient.patient_id)
        self._send_json(
            200,
            {
                "patient_id": patient.patient_id,
                "latest": {
                    metric_name(metric): reading_to_json(r) for metric, r in sorted(latest.items())
                },
            },
        )

    def patient_series(self, match, query) -> None:
        patient = self._patient_or_404(match)
        try:
            metric = metric_from_name(self._param(query, "metric"))
            start = parse_iso(self._param(query, "from"))
            end = parse_iso(self._param(query, "to"))
            max_points = query.get("max_points")
            max_points = int(max_points[0]) if max_points else None
            q = SeriesQuery(patient.patient_id, metric, start, end, max_points)
        except ValueError as exc:
            raise ApiError(422, "validation", str(exc))
        try:
            points = self.api.gateway.store.query_series(q)
        except StoreNotFoundError:
            points = []  # registered patient without data yet
        self._send_json(200, series_to_json(patient.patient_id, metric, points))

    def _param(self, query: dict, name: str) -> str:
        values = query.get(name)
        if not values:
            raise ApiError(422, "validation", f"missing query parameter '{name}'")
        return values[0]

    def put_thresholds(self, match, query) -> None:
        patient = self._patient_or_404(match)
        body = self._read_body()
        if "metric" in body:
            body = {body.pop("metric"): body}
        if not body:
            raise ApiError(422, "validation", "no thresholds given")
        updated = []
        for name, spec in body.items():
            try:
                metric = metric_from_name(name)
            except ValueError as exc:
                raise ApiError(422, "validation", str(exc))
            if not isinstance(spec, dict):
                raise ApiError(422, "validation", f"{name}: expected an object")
            current = patient.thresholds.get(metric)
            try:
                thresholds = VitalThresholds(
                    metric=metric,
                    low=float(spec.get("low", current.low if current else None)),
                    high=float(spec.get("high", current.high if current else None)),
                    debounce_window_s=float(
                        spec.get(
                            "debounce_window_s",
                            current.debounce_window_s if current else 300.0,
                        )
                    ),
                    resolve_after=int(
                        spec.get("resolve_after", current.resolve_after if current else 3)
                    ),
                )
            except (TypeError, ValueError) as exc:
                raise ApiError(422, "validation", f"low/high: {exc}")
            updated.append(thresholds)
        for thresholds in updated:
            self.api.gateway.registry.update_thresholds(patient.patient_id, thresholds)
        self._send_json(200, patient_to_json(self.api.gateway.registry.get(patient.patient_id)))

    def list_alerts(self, match, query) -> None:
        state = None
        if "state" in query:
            try:
                state = AlertState(query["state"][0])
            except ValueError:
                raise ApiError(422, "validation", f"unknown state {query['state'][0]!r}")
        alerts = [alert_to_json(a) for a in self.api.gateway.alert_store.alerts(state)]
        self._send_json(200, {"alerts": alerts})

    def ack_alert(self, match, query) -> None:
        body = self._read_body()
        operator = str(body.get("operator", "api"))
        try:
            alert = self.api.gateway.acknowledge_alert(match.group("id"), operator)
        except UnknownAlertError:
            raise ApiError(404, "unknown_alert", f"no alert {match.group('id')}")
        except AlertTransitionError as exc:
            raise ApiError(409, "illegal_transition", str(exc))
        self._send_json(200, alert_to_json(alert))

    # - SSE -

    def stream(self, match, query) -> None:
        last_id = None
        header = self.headers.get("Last-Event-ID")
        if header is None and "last_event_id" in query:
            header = query["last_event_id"][0]
        if header is not None:
            try:
                last_id = int(header)
            except ValueError:
                raise ApiError(422, "validation", "Last-Event-ID must be an integer")
        q, backlog = self.api.broker.subscribe(last_id)
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Connection", "close")
        self.end_headers()
        try:
            for event in backlog:
                self._write_event(event)
            while True:
                try:
                    event = q.get(timeout=STREAM_KEEPALIVE_S)
                except queue.Empty:
                    self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
                    continue
                if event is EventBroker._OVERFLOW:
                    logger.warning("event=stream_client_overflow")
                    break
                self._write_event(event)
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            self.api.broker.unsubscribe(q)
            self.close_connection = True

    def _write_event(self, event) -> None:
        event_id, event_type, payload = event
        chunk = f"id: {event_id}\nevent: {event_type}\ndata: {json.dumps(payload)}\n\n"
        self.wfile.write(chunk.encode("utf-8"))
        self.wfile.flush()

    # - static files -

    def _serve_static(self, path: str) -> None:
        rel = path.lstrip("/") or "index.html"
        target = (self.api.static_dir / rel).resolve()
        if not target.is_relative_to(self.api.static_dir) or not target.is_file():
            raise ApiError(404, "not_found", f"no such resource: {path}")
        content_type = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

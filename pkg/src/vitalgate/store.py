"""Append-only, timestamped persistence for readings and alerts.

Readings go to a plain-text log, one CSV line per reading::

    timestamp,patient_id,metric,value,sequence,source_addr64

The in-memory index is rebuilt by a full scan on startup; a torn final line
(crash mid-write) is skipped. Alerts go to a separate JSON-lines log that
keeps the full state-transition history. See docs/STORE_FORMAT.md.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import threading
from bisect import bisect_left
from dataclasses import dataclass
from datetime import datetime

from .clock import format_iso, parse_iso, utc_from_unix
from .model import (
    METRIC_UNIT,
    Alert,
    AlertState,
    BreachBound,
    SensorReading,
    SmsState,
    SmsStatus,
    metric_from_name,
    metric_name,
)
from .wire_codec import Metric

logger = logging.getLogger(__name__)

READING_COLUMNS = ("timestamp", "patient_id", "metric", "value", "sequence", "source_addr64")

FSYNC_ALWAYS = "always"
FSYNC_NEVER = "never"


class StoreError(Exception):
    pass


class StoreNotFoundError(StoreError):
    """Query referenced a patient the store has never heard of."""


@dataclass(frozen=True)
class SeriesQuery:
    """Time-range query over one (patient, metric) series.

    The window is half-open: start <= t < end. When max_points is set and
    the window holds more raw points, the series is downsampled by bucket
    mean over max_points equal-width buckets anchored at the window start.
    """

    patient_id: int
    metric: Metric
    start: datetime
    end: datetime
    max_points: int | None = None

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("query start must not be after end")
        if self.max_points is not None and self.max_points < 2:
            raise ValueError(f"max_points must be >= 2, got {self.max_points}")


def format_reading_line(r: SensorReading) -> str:
    """One CSV line, newline-terminated."""
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(
        [
            format_iso(r.timestamp),
            r.patient_id,
            metric_name(r.metric),
            repr(r.value),
            r.sequence,
            f"{r.source_addr64:016X}",
        ]
    )
    return buf.getvalue()


def parse_reading_line(line: str) -> SensorReading:
    """Inverse of format_reading_line. Raises ValueError on malformed rows."""
    row = next(csv.reader([line]))
    if len(row) != len(READING_COLUMNS):
        raise ValueError(f"expected {len(READING_COLUMNS)} fields, got {len(row)}")
    metric = metric_from_name(row[2])
    return SensorReading(
        patient_id=int(row[1]),
        metric=metric,
        value=float(row[3]),
        unit=METRIC_UNIT[metric],
        timestamp=parse_iso(row[0]),
        sequence=int(row[4]),
        source_addr64=int(row[5], 16),
    )


def iter_log_readings(path: str, on_bad_line=None):
    """Yield readings from a log file, skipping a torn last line.

    Complete-but-malformed lines are skipped and reported through
    on_bad_line(line_number, text, error) when given.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        data = fh.read()
    lines = data.split("\n")
    # No trailing newline means the final piece never finished writing.
    torn = lines.pop() if lines and lines[-1] != "" else None
    if torn:
        logger.warning("store: ignoring torn final line in %s", path)
    for lineno, line in enumerate(lines, start=1):
        if not line or line.startswith("timestamp,"):
            continue  # blank or an exported-CSV header
        try:
            yield parse_reading_line(line)
        except (ValueError, KeyError) as exc:
            logger.warning("store: skipping bad line %d in %s: %s", lineno, path, exc)
            if on_bad_line is not None:
                on_bad_line(lineno, line, exc)


class ReadingStore:
    """Single-writer reading log with an in-memory index.

    append() is durable before returning under the default "always" fsync
    policy. Readers take the same lock briefly to snapshot, so they always
    see a consistent state no older than the last durable append.
    """

    def __init__(self, path: str, fsync: str = FSYNC_ALWAYS, known_patients=None):
        if fsync not in (FSYNC_ALWAYS, FSYNC_NEVER):
            raise ValueError(f"unknown fsync policy: {fsync!r}")
        self.path = path
        self.fsync = fsync
        self._lock = threading.Lock()
        # (patient, metric) -> list of (unix_seconds, append_index, value)
        self._series: dict[tuple[int, Metric], list[tuple[float, int, float]]] = {}
        self._latest: dict[int, dict[Metric, SensorReading]] = {}
        self._patients: set[int] = set(known_patients or ())
        self._count = 0
        self._load()
        self._fh = open(path, "a", encoding="utf-8", newline="")

    def _load(self) -> None:
        if not os.path.exists(self.path):
            return
        for reading in iter_log_readings(self.path):
            self._index(reading)

    def _index(self, r: SensorReading) -> None:
        key = (r.patient_id, r.metric)
        row = (r.timestamp.timestamp(), self._count, r.value)
        series = self._series.setdefault(key, [])
        if series and row < series[-1]:
            # Out-of-order append (merged logs); keep the index sorted.
            series.insert(bisect_left(series, row), row)
        else:
            series.append(row)
        self._patients.add(r.patient_id)
        per_patient = self._latest.setdefault(r.patient_id, {})
        current = per_patient.get(r.metric)
        if current is None or r.timestamp >= current.timestamp:
            per_patient[r.metric] = r
        self._count += 1

    def append(self, r: SensorReading) -> int:
        """Write one reading; returns its zero-based position in the log."""
        line = format_reading_line(r)
        with self._lock:
            try:
                self._fh.write(line)
                self._fh.flush()
                if self.fsync == FSYNC_ALWAYS:
                    os.fsync(self._fh.fileno())
            except OSError as exc:
                raise StoreError(f"append failed: {exc}") from exc
            position = self._count
            self._index(r)
        return position

    def count(self) -> int:
        with self._lock:
            return self._count

    def patients(self) -> set[int]:
        with self._lock:
            return set(self._patients)

    def _require_patient(self, patient_id: int) -> None:
        if patient_id not in self._patients:
            raise StoreNotFoundError(f"unknown patient: {patient_id}")

    def query_series(self, q: SeriesQuery) -> list[tuple[datetime, float]]:
        """Points with start <= t < end, ascending; downsampled when asked."""
        with self._lock:
            self._require_patient(q.patient_id)
            series = self._series.get((q.patient_id, q.metric), [])
            lo = bisect_left(series, (q.start.timestamp(), -1, 0.0))
            hi = bisect_left(series, (q.end.timestamp(), -1, 0.0))
            window = series[lo:hi]
        if q.max_points is None or len(window) <= q.max_points:
            return [(_dt(ts), value) for ts, _, value in window]
        return _downsample(window, q)

    def query_readings(
        self, patient_id: int, metric: Metric, start: datetime, end: datetime
    ) -> list[SensorReading]:
        """Full reading rows for export; same half-open window as query_series."""
        with self._lock:
            self._require_patient(patient_id)
        out = []
        for r in iter_log_readings(self.path):
            if r.patient_id == patient_id and r.metric is metric and start <= r.timestamp < end:
                out.append(r)
        out.sort(key=lambda r: r.timestamp)
        return out

    def latest(self, patient_id: int) -> dict[Metric, SensorReading]:
        """Most recent reading per metric; empty dict when there is no data."""
        with self._lock:
            return dict(self._latest.get(patient_id, {}))

    def close(self) -> None:
        with self._lock:
            try:
                self._fh.flush()
                if self.fsync == FSYNC_ALWAYS:
                    os.fsync(self._fh.fileno())
            finally:
                self._fh.close()


def _dt(unix_seconds: float) -> datetime:
    return utc_from_unix(unix_seconds)


def _downsample(
    window: list[tuple[float, int, float]], q: SeriesQuery
) -> list[tuple[datetime, float]]:
    """Bucket-mean downsampling with boundaries anchored at the query window."""
    start = q.start.timestamp()
    span = q.end.timestamp() - start
    n = q.max_points
    width = span / n
    sums = [0.0] * n
    counts = [0] * n
    for ts, _, value in window:
        idx = min(int((ts - start) / width), n - 1) if width > 0 else 0
        sums[idx] += value
        counts[idx] += 1
    out = []
    for i in range(n):
        if counts[i]:
            out.append((_dt(start + i * width), sums[i] / counts[i]))
    return out


# -- Alert persistence -------------------------------------------------------------


class AlertStore:
    """JSON-lines alert log: creation plus every later transition.

    Each line is a full snapshot tagged with the event that produced it, so
    the history stays greppable and the latest state is just the last line
    per alert id.
    """

    def __init__(self, path: str, fsync: str = FSYNC_ALWAYS):
        self.path = path
        self.fsync = fsync
        self._lock = threading.Lock()
        self._alerts: dict[str, Alert] = {}
        self._order: list[str] = []
        self._load()
        self._fh = open(path, "a", encoding="utf-8", newline="")

    def _load(self) -> None:
        if not os.path.exists(self.path):
            return
        with open(self.path, "r", encoding="utf-8") as fh:
            data = fh.read()
        lines = data.split("\n")
        if lines and lines[-1] != "":
            lines.pop()  # torn tail
        for line in lines:
            if not line:
                continue
            try:
                record = json.loads(line)
                alert = alert_from_json(record["alert"])
            except (ValueError, KeyError) as exc:
                logger.warning("alert store: skipping bad line in %s: %s", self.path, exc)
                continue
            if alert.alert_id not in self._alerts:
                self._order.append(alert.alert_id)
            self._alerts[alert.alert_id] = alert

    def record(self, event: str, alert: Alert, **extra) -> None:
        """Persist a snapshot for 'created', 'state' or 'sms' events."""
        record = {"event": event, "alert": alert_to_json(alert)}
        record.update(extra)
        line = json.dumps(record, sort_keys=True) + "\n"
        with self._lock:
            self._fh.write(line)
            self._fh.flush()
            if self.fsync == FSYNC_ALWAYS:
                os.fsync(self._fh.fileno())
            if alert.alert_id not in self._alerts:
                self._order.append(alert.alert_id)
            self._alerts[alert.alert_id] = alert

    def get(self, alert_id: str) -> Alert | None:
        with self._lock:
            return self._alerts.get(alert_id)

    def alerts(self, state: AlertState | None = None) -> list[Alert]:
        with self._lock:
            items = [self._alerts[a] for a in self._order]
        if state is not None:
            items = [a for a in items if a.state is state]
        return items

    def close(self) -> None:
        with self._lock:
            self._fh.close()


def alert_to_json(a: Alert) -> dict:
    return {
        "alert_id": a.alert_id,
        "patient_id": a.patient_id,
        "metric": metric_name(a.metric),
        "observed_value": a.observed_value,
        "breached_bound": a.breached_bound.value,
        "breached_limit": a.breached_limit,
        "state": a.state.value,
        "created_at": format_iso(a.created_at),
        "sms_status": {
            "state": a.sms_status.state.value,
            "attempts": a.sms_status.attempts,
            "reference": a.sms_status.reference,
        },
        "acknowledged_by": a.acknowledged_by,
        "acknowledged_at": format_iso(a.acknowledged_at) if a.acknowledged_at else None,
        "resolved_at": format_iso(a.resolved_at) if a.resolved_at else None,
    }


def alert_from_json(d: dict) -> Alert:
    sms = d.get("sms_status", {})
    return Alert(
        patient_id=d["patient_id"],
        metric=metric_from_name(d["metric"]),
        observed_value=d["observed_value"],
        breached_bound=BreachBound(d["breached_bound"]),
        breached_limit=d["breached_limit"],
        created_at=parse_iso(d["created_at"]),
        alert_id=d["alert_id"],
        state=AlertState(d["state"]),
        sms_status=SmsStatus(
            state=SmsState(sms.get("state", "pending")),
            attempts=sms.get("attempts", 0),
            reference=sms.get("reference"),
        ),
        acknowledged_by=d.get("acknowledged_by"),
        acknowledged_at=parse_iso(d["acknowledged_at"]) if d.get("acknowledged_at") else None,
        resolved_at=parse_iso(d["resolved_at"]) if d.get("resolved_at") else None,
    )

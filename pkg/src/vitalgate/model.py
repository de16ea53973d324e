"""Domain records shared across the gateway pipeline.

Readings, thresholds, alerts and patients live here so the store, the rule
engine, the SMS path and the HTTP layer all agree on one vocabulary.
"""

from __future__ import annotations

import math
import re
import uuid
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum

from .wire_codec import Metric, TelemetryPayload

E164_RE = re.compile(r"^\+[1-9][0-9]{1,14}$")


class Unit(str, Enum):
    CELSIUS = "C"
    BPM = "BPM"
    MILLIVOLT = "mV"


METRIC_UNIT = {
    Metric.TEMPERATURE: Unit.CELSIUS,
    Metric.HEART_RATE: Unit.BPM,
    Metric.ECG_SAMPLE: Unit.MILLIVOLT,
}

_METRIC_NAMES = {
    Metric.TEMPERATURE: "temperature",
    Metric.HEART_RATE: "heart_rate",
    Metric.ECG_SAMPLE: "ecg",
}
_METRICS_BY_NAME = {name: metric for metric, name in _METRIC_NAMES.items()}

# Per-metric short labels for SMS bodies.
METRIC_SMS_LABEL = {Metric.TEMPERATURE: "TEMP", Metric.HEART_RATE: "HR", Metric.ECG_SAMPLE: "ECG"}


def metric_name(metric: Metric) -> str:
    return _METRIC_NAMES[metric]


def metric_from_name(name: str) -> Metric:
    try:
        return _METRICS_BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown metric name: {name!r}") from None


class UnitMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SensorReading:
    """One decoded measurement in engineering units, stamped at ingestion."""

    patient_id: int
    metric: Metric
    value: float
    unit: Unit
    timestamp: datetime
    sequence: int
    source_addr64: int

    def __post_init__(self):
        if METRIC_UNIT[self.metric] is not self.unit:
            raise UnitMismatchError(
                f"unit {self.unit.value} does not match metric {metric_name(self.metric)}"
            )
        if not math.isfinite(self.value):
            raise ValueError(f"reading value must be finite, got {self.value}")
        # Millisecond precision is the contract; keep memory and disk equal.
        truncated = self.timestamp.replace(
            microsecond=(self.timestamp.microsecond // 1000) * 1000
        )
        object.__setattr__(self, "timestamp", truncated)


def reading_from_payload(
    payload: TelemetryPayload, source_addr64: int, timestamp: datetime
) -> SensorReading:
    """Convert a wire payload to engineering units and stamp it.

    Fixed-point scaling: centi-C for temperature, whole BPM, microvolts for
    ECG samples (stored as millivolts).
    """
    if payload.metric is Metric.TEMPERATURE:
        value = payload.raw_value / 100.0
    elif payload.metric is Metric.HEART_RATE:
        value = float(payload.raw_value)
    else:
        value = payload.raw_value / 1000.0
    return SensorReading(
        patient_id=payload.patient_id,
        metric=payload.metric,
        value=value,
        unit=METRIC_UNIT[payload.metric],
        timestamp=timestamp,
        sequence=payload.sequence,
        source_addr64=source_addr64,
    )


@dataclass
class VitalThresholds:
    """Per-metric normal range plus debounce/resolve policy."""

    metric: Metric
    low: float
    high: float
    debounce_window_s: float = 300.0
    resolve_after: int = 3

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(
                f"low must be below high, got low={self.low} high={self.high}"
            )
        if self.debounce_window_s < 0:
            raise ValueError(f"debounce_window_s must be >= 0, got {self.debounce_window_s}")
        if self.resolve_after < 1:
            raise ValueError(f"resolve_after must be >= 1, got {self.resolve_after}")


DEFAULT_THRESHOLDS = {
    Metric.TEMPERATURE: (36.0, 38.0),
    Metric.HEART_RATE: (60.0, 100.0),
}


def default_thresholds() -> dict[Metric, VitalThresholds]:
    """Artifact-default normal ranges, overridable per patient."""
    return {
        metric: VitalThresholds(metric, low, high)
        for metric, (low, high) in DEFAULT_THRESHOLDS.items()
    }


class BreachBound(str, Enum):
    LOW = "low"
    HIGH = "high"


class AlertState(str, Enum):
    OPEN = "open"
    NOTIFIED = "notified"
    ACKNOWLEDGED = "acknowledged"
    RESOLVED = "resolved"


class SmsState(str, Enum):
    PENDING = "pending"
    SENT = "sent"
    FAILED = "failed"


# Legal lifecycle moves. The nominal chains are open->notified->acknowledged
# ->resolved and open->notified->resolved; acknowledging straight from open
# and resolving an alert whose SMS never went out are also allowed.
ALERT_TRANSITIONS = {
    AlertState.OPEN: {AlertState.NOTIFIED, AlertState.ACKNOWLEDGED, AlertState.RESOLVED},
    AlertState.NOTIFIED: {AlertState.ACKNOWLEDGED, AlertState.RESOLVED},
    AlertState.ACKNOWLEDGED: {AlertState.RESOLVED},
    AlertState.RESOLVED: set(),
}


class AlertTransitionError(ValueError):
    """Requested lifecycle move is not in the transition table."""


@dataclass
class SmsStatus:
    state: SmsState = SmsState.PENDING
    attempts: int = 0
    reference: int | None = None


@dataclass
class Alert:
    """A breach event with lifecycle state and SMS delivery status."""

    patient_id: int
    metric: Metric
    observed_value: float
    breached_bound: BreachBound
    breached_limit: float
    created_at: datetime
    alert_id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])
    state: AlertState = AlertState.OPEN
    sms_status: SmsStatus = field(default_factory=SmsStatus)
    acknowledged_by: str | None = None
    acknowledged_at: datetime | None = None
    resolved_at: datetime | None = None

    def transition(self, new_state: AlertState) -> None:
        if new_state not in ALERT_TRANSITIONS[self.state]:
            raise AlertTransitionError(
                f"illegal alert transition {self.state.value} -> {new_state.value}"
            )
        self.state = new_state

    @property
    def is_open(self) -> bool:
        """Open in the rule-engine sense: not yet resolved."""
        return self.state is not AlertState.RESOLVED


@dataclass
class Patient:
    """Registry entry: identity, SMS recipient and per-metric thresholds."""

    patient_id: int
    display_name: str
    doctor_phone: str
    thresholds: dict[Metric, VitalThresholds] = field(default_factory=default_thresholds)

    def __post_init__(self):
        if not 0 <= self.patient_id <= 0xFFFF:
            raise ValueError(f"patient_id out of range: {self.patient_id}")
        if not E164_RE.match(self.doctor_phone):
            raise ValueError(f"doctor_phone is not E.164: {self.doctor_phone!r}")
        for metric, t in self.thresholds.items():
            if t.metric is not metric:
                raise ValueError(
                    f"threshold metric mismatch under {metric_name(metric)}"
                )

"""Scripted fleet of virtual sensor nodes.

A scenario file (see docs/SCENARIO_FORMAT.md) names patients with baseline
vitals and optional abnormal episodes. Each node samples its sensor models
once per report interval, packs the value into the 8-byte telemetry payload
inside a receive frame, and writes whole frames to a byte sink. Runs are
deterministic for a fixed seed: per-(patient, metric) RNG substreams make
the emitted byte sequence independent of pacing.

Episodes ramp linearly to the target over the first tenth of the episode,
hold, and ramp back over the last tenth.
"""

from __future__ import annotations

import logging
import socket
from dataclasses import dataclass, field

import numpy as np

from .clock import Clock, SimClock
from . import sensor_models
from .wire_codec import Metric, ReceivePacket, TelemetryPayload, encode_frame, encode_payload

logger = logging.getLogger(__name__)

# 64-bit source addresses mimic a Digi OUI prefix with the patient id in the
# low bits; purely cosmetic but keeps frame dumps realistic.
NODE_ADDR64_BASE = 0x0013A200_00000000

DEFAULT_REPORT_INTERVAL_S = 1.0
DEFAULT_METRICS = (Metric.TEMPERATURE, Metric.HEART_RATE)

# Heart-rate nodes synthesize a short pulse window and count beats in it,
# mirroring how the reflectance sensor derives BPM.
HR_WINDOW_S = 10.0
HR_SAMPLE_RATE = 50.0

EPISODE_RAMP_FRACTION = 0.1

METRIC_KEYWORDS = {
    "temperature": Metric.TEMPERATURE,
    "heart_rate": Metric.HEART_RATE,
    "ecg": Metric.ECG_SAMPLE,
}


class ScenarioError(ValueError):
    """Scenario document violation, carrying the field and line at fault."""

    def __init__(self, message: str, field_name: str | None = None, line: int | None = None):
        place = []
        if field_name:
            place.append(f"field {field_name!r}")
        if line is not None:
            place.append(f"line {line}")
        suffix = f" ({', '.join(place)})" if place else ""
        super().__init__(message + suffix)
        self.field = field_name
        self.line = line


@dataclass
class PatientScript:
    patient_id: int
    baseline_temp_c: float
    baseline_bpm: float
    report_interval_s: float = DEFAULT_REPORT_INTERVAL_S
    metrics: tuple[Metric, ...] = DEFAULT_METRICS
    warmup_s: float = 0.0  # pulse sensor settling; readings inside are flagged
    name: str | None = None


@dataclass
class Episode:
    patient_id: int
    metric: Metric
    start_s: float
    duration_s: float
    target_value: float
    label: str = ""

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


@dataclass
class Scenario:
    patients: list[PatientScript]
    episodes: list[Episode] = field(default_factory=list)
    duration_s: float = 60.0
    accel: float = 1.0
    seed: int = 0
    escaped: bool = False
    applied_defaults: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if self.duration_s <= 0:
            raise ScenarioError(f"duration must be positive, got {self.duration_s}", "duration")
        if self.accel < 1.0:
            raise ScenarioError(f"acceleration factor must be >= 1, got {self.accel}", "accel")
        if not self.patients:
            raise ScenarioError("scenario needs at least one patient")
        ids = set()
        for p in self.patients:
            if p.patient_id in ids:
                raise ScenarioError(f"duplicate patient id {p.patient_id}", "patient")
            ids.add(p.patient_id)
            if p.report_interval_s <= 0:
                raise ScenarioError(
                    f"report_interval must be positive, got {p.report_interval_s}",
                    "report_interval",
                )
            if not sensor_models.LM35_MIN_C <= p.baseline_temp_c <= sensor_models.LM35_MAX_C:
                raise ScenarioError(
                    f"baseline_temp {p.baseline_temp_c} outside 0..150", "baseline_temp"
                )
            if not sensor_models.BPM_MIN <= p.baseline_bpm <= sensor_models.BPM_MAX:
                raise ScenarioError(
                    f"baseline_bpm {p.baseline_bpm} outside 30..220", "baseline_bpm"
                )
        by_series: dict[tuple[int, Metric], list[Episode]] = {}
        for ep in self.episodes:
            if ep.patient_id not in ids:
                raise ScenarioError(f"episode names unknown patient {ep.patient_id}", "patient")
            if ep.duration_s <= 0:
                raise ScenarioError("episode duration must be positive", "duration")
            if ep.start_s < 0 or ep.end_s > self.duration_s:
                raise ScenarioError(
                    f"episode window {ep.start_s}..{ep.end_s} outside scenario duration",
                    "start",
                )
            if ep.metric is Metric.TEMPERATURE and not (
                sensor_models.LM35_MIN_C <= ep.target_value <= sensor_models.LM35_MAX_C
            ):
                raise ScenarioError(f"target {ep.target_value} outside 0..150", "target")
            if ep.metric is Metric.HEART_RATE and not (
                sensor_models.BPM_MIN <= ep.target_value <= sensor_models.BPM_MAX
            ):
                raise ScenarioError(f"target {ep.target_value} outside 30..220", "target")
            by_series.setdefault((ep.patient_id, ep.metric), []).append(ep)
        for (pid, metric), eps in by_series.items():
            eps = sorted(eps, key=lambda e: e.start_s)
            for a, b in zip(eps, eps[1:]):
                if b.start_s < a.end_s:
                    raise ScenarioError(
                        f"overlapping episodes on patient {pid} metric "
                        f"{metric.name.lower()}: {a.label or a.start_s} and {b.label or b.start_s}",
                        "start",
                    )


# -- Scenario file parsing ----------------------------------------------------------


def _convert(raw: str, kind: type, key: str, line: int):
    try:
        if kind is bool:
            if raw.lower() in ("true", "yes", "on", "1"):
                return True
            if raw.lower() in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ScenarioError(f"cannot parse {raw!r} as {kind.__name__}", key, line) from None


def load_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document.

    Grammar: `key = value` pairs, `#` comments, and `[patient <id>]` /
    `[episode <label>]` sections. Defaults that kick in are listed in
    Scenario.applied_defaults.
    """
    top: dict[str, tuple[str, int]] = {}
    patients: list[tuple[int, dict[str, tuple[str, int]], int]] = []
    episodes: list[tuple[str, dict[str, tuple[str, int]], int]] = []
    current: dict[str, tuple[str, int]] = top

    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioError("unterminated section header", line=lineno)
            header = line[1:-1].split()
            if len(header) == 2 and header[0] == "patient":
                pid = _convert(header[1], int, "patient", lineno)
                current = {}
                patients.append((pid, current, lineno))
            elif len(header) >= 1 and header[0] == "episode":
                label = " ".join(header[1:])
                current = {}
                episodes.append((label, current, lineno))
            else:
                raise ScenarioError(f"unknown section {line!r}", line=lineno)
            continue
        if "=" not in line:
            raise ScenarioError(f"expected key = value, got {line!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key in current:
            raise ScenarioError(f"duplicate key {key!r}", key, lineno)
        current[key] = (value, lineno)

    defaults: list[str] = []

    def take(section: dict, key: str, kind: type, default=None, required=False, where=""):
        if key in section:
            value, lineno = section.pop(key)
            return _convert(value, kind, key, lineno)
        if required:
            raise ScenarioError(f"missing required key {key!r}{where}", key)
        if default is not None:
            defaults.append(f"{where or 'scenario'}: {key} defaulted to {default}")
        return default

    def reject_unknown(section: dict, where: str):
        for key, (_, lineno) in section.items():
            raise ScenarioError(f"unknown key {key!r}{where}", key, lineno)

    duration = take(top, "duration", float, required=True)
    seed = take(top, "seed", int, default=0)
    accel = take(top, "accel", float, default=1.0)
    escaped = take(top, "escaped", bool, default=False)
    reject_unknown(top, "")

    patient_scripts = []
    for pid, section, lineno in patients:
        where = f" in [patient {pid}]"
        metrics_raw = None
        if "metrics" in section:
            metrics_raw, metrics_line = section.pop("metrics")
        metrics = DEFAULT_METRICS
        if metrics_raw is not None:
            parsed = []
            for word in metrics_raw.replace(",", " ").split():
                if word not in METRIC_KEYWORDS:
                    raise ScenarioError(f"unknown metric {word!r}", "metrics", metrics_line)
                parsed.append(METRIC_KEYWORDS[word])
            metrics = tuple(parsed)
        script = PatientScript(
            patient_id=pid,
            name=str(section.pop("name", (f"P{pid:03d}", lineno))[0]),
            baseline_temp_c=take(section, "baseline_temp", float, required=True, where=where),
            baseline_bpm=take(section, "baseline_bpm", float, required=True, where=where),
            report_interval_s=take(
                section, "report_interval", float, default=DEFAULT_REPORT_INTERVAL_S, where=where
            ),
            warmup_s=take(section, "warmup", float, default=0.0, where=where),
            metrics=metrics,
        )
        reject_unknown(section, where)
        patient_scripts.append(script)

    episode_list = []
    for label, section, lineno in episodes:
        where = f" in [episode {label}]" if label else " in [episode]"
        metric_raw, metric_line = section.pop("metric", (None, lineno))
        if metric_raw is None:
            raise ScenarioError(f"missing required key 'metric'{where}", "metric", lineno)
        if metric_raw not in METRIC_KEYWORDS:
            raise ScenarioError(f"unknown metric {metric_raw!r}", "metric", metric_line)
        episode_list.append(
            Episode(
                patient_id=take(section, "patient", int, required=True, where=where),
                metric=METRIC_KEYWORDS[metric_raw],
                start_s=take(section, "start", float, required=True, where=where),
                duration_s=take(section, "duration", float, required=True, where=where),
                target_value=take(section, "target", float, required=True, where=where),
                label=label,
            )
        )
        reject_unknown(section, where)

    scenario = Scenario(
        patients=patient_scripts,
        episodes=episode_list,
        duration_s=duration,
        accel=accel,
        seed=seed,
        escaped=escaped,
        applied_defaults=defaults,
    )
    scenario.validate()
    return scenario


# -- Value synthesis -----------------------------------------------------------------


def episode_value(baseline: float, episode: Episode, t: float) -> float:
    """Ramp-hold-ramp modulation inside an episode window."""
    ramp = episode.duration_s * EPISODE_RAMP_FRACTION
    if t < episode.start_s or t >= episode.end_s:
        return baseline
    into = t - episode.start_s
    if into < ramp:
        return baseline + (episode.target_value - baseline) * (into / ramp)
    if into >= episode.duration_s - ramp:
        remaining = episode.end_s - t
        return baseline + (episode.target_value - baseline) * (remaining / ramp)
    return episode.target_value


def true_value_at(scenario: Scenario, patient: PatientScript, metric: Metric, t: float) -> float:
    if metric is Metric.TEMPERATURE:
        baseline = patient.baseline_temp_c
    else:
        baseline = patient.baseline_bpm
    for ep in scenario.episodes:
        if ep.patient_id == patient.patient_id and ep.metric is metric:
            if ep.start_s <= t < ep.end_s:
                return episode_value(baseline, ep, t)
    return baseline


# -- Transports -----------------------------------------------------------------------


class MemorySink:
    """Collects emitted bytes in-process (tests, frame fixtures)."""

    def __init__(self):
        self.data = bytearray()

    def write(self, data: bytes) -> None:
        self.data.extend(data)

    def close(self) -> None:
        pass


class TcpSink:
    """TCP client writing whole frames to the gateway's listen port."""

    def __init__(self, address: tuple[str, int], connect_timeout_s: float = 5.0):
        self._sock = socket.create_connection(address, timeout=connect_timeout_s)
        self._sock.settimeout(None)

    def write(self, data: bytes) -> None:
        self._sock.sendall(data)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


# -- Scenario execution ------------------------------------------------------------------


@dataclass(frozen=True)
class EmittedReading:
    time_s: float
    patient_id: int
    metric: Metric
    sequence: int
    raw_value: int
    value: float
    reliable: bool = True


@dataclass
class SimulationReport:
    emitted: list[EmittedReading] = field(default_factory=list)
    frames: int = 0
    bytes_sent: int = 0
    aborted: bool = False
    error: str | None = None

    def count(self, metric: Metric | None = None) -> int:
        if metric is None:
            return len(self.emitted)
        return sum(1 for r in self.emitted if r.metric is metric)


class _Node:
    """Per-patient emitter state: RNG substreams and sequence counters."""

    def __init__(self, scenario: Scenario, patient: PatientScript):
        self.patient = patient
        self.sequences = {metric: 0 for metric in patient.metrics}
        self.rngs = {
            metric: np.random.default_rng([scenario.seed, patient.patient_id, int(metric)])
            for metric in patient.metrics
        }

    def sample(self, scenario: Scenario, metric: Metric, t: float) -> tuple[int, float, bool]:
        """Measure one value; returns (wire raw, engineering value, reliable)."""
        patient = self.patient
        rng = self.rngs[metric]
        reliable = True
        if metric is Metric.TEMPERATURE:
            true_temp = true_value_at(scenario, patient, metric, t)
            mv = sensor_models.simulate_lm35(true_temp, rng)
            celsius = sensor_models.lm35_celsius_from_millivolts(mv)
            raw = int(round(celsius * 100.0))
            value = raw / 100.0
        elif metric is Metric.HEART_RATE:
            true_bpm = true_value_at(scenario, patient, metric, t)
            signal = sensor_models.synth_pulse_signal(true_bpm, HR_WINDOW_S, HR_SAMPLE_RATE, rng)
            beats = sensor_models.detect_beats(signal)
            if len(beats) >= 2:
                bpm = sensor_models.bpm_from_beats(beats)
            else:
                bpm = true_bpm  # detector found nothing usable this window
                reliable = False
            if t < patient.warmup_s:
                reliable = False
            raw = int(round(bpm))
            value = float(raw)
        else:  # ECG sample: instantaneous template amplitude in microvolts
            true_bpm = true_value_at(scenario, patient, Metric.HEART_RATE, t)
            phase = (t / (60.0 / true_bpm)) % 1.0
            mv = float(sensor_models.ecg_cycle_amplitude(phase)) + rng.normal(0.0, 0.01)
            raw = int(np.clip(round(mv * 1000.0), -32768, 32767))
            value = raw / 1000.0
        raw = int(np.clip(raw, -32768, 32767))
        return raw, value, reliable

    def frame_bytes(self, scenario: Scenario, metric: Metric, raw: int) -> bytes:
        sequence = self.sequences[metric]
        self.sequences[metric] = (sequence + 1) & 0xFFFF
        payload = TelemetryPayload(
            patient_id=self.patient.patient_id,
            metric=metric,
            sequence=sequence,
            raw_value=raw,
        )
        packet = ReceivePacket(
            source_addr64=NODE_ADDR64_BASE | self.patient.patient_id,
            source_addr16=self.patient.patient_id,
            receive_options=0x01,
            rf_data=encode_payload(payload),
        )
        return encode_frame(packet.to_frame(), escaped=scenario.escaped)


def run_scenario(
    scenario: Scenario,
    sink,
    clock: Clock | None = None,
    pace: bool = True,
) -> SimulationReport:
    """Drive the node fleet against a byte sink.

    Emissions are ordered by (time, patient, metric) and written whole-frame.
    With pace=True the run sleeps on the clock (scenario.accel by default)
    so wall duration is scenario duration divided by the acceleration factor.
    A transport failure aborts and returns the partial report.
    """
    scenario.validate()
    clock = clock or SimClock(accel=scenario.accel)
    nodes = {p.patient_id: _Node(scenario, p) for p in scenario.patients}

    schedule: list[tuple[float, int]] = []
    for p in scenario.patients:
        emissions = int(scenario.duration_s / p.report_interval_s)
        for k in range(emissions):
            schedule.append((k * p.report_interval_s, p.patient_id))
    schedule.sort(key=lambda item: (item[0], item[1]))

    report = SimulationReport()
    started = clock.unix()
    for t, patient_id in schedule:
        node = nodes[patient_id]
        if pace:
            clock.sleep(t - (clock.unix() - started))
        for metric in node.patient.metrics:
            raw, value, reliable = node.sample(scenario, metric, t)
            sequence = node.sequences[metric]
            frame = node.frame_bytes(scenario, metric, raw)
            try:
                sink.write(frame)
            except OSError as exc:
                report.aborted = True
                report.error = str(exc)
                logger.error("event=sim_transport_error t=%.1f detail=%s", t, exc)
                return report
            report.emitted.append(
                EmittedReading(t, patient_id, metric, sequence, raw, value, reliable)
            )
            report.frames += 1
            report.bytes_sent += len(frame)
    return report

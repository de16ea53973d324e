"""Wall-clock and accelerated-clock plumbing shared by the whole pipeline.

Every component that stamps, sleeps or times out goes through a Clock so a
scenario can run faster than real time without touching any other code.
Timestamps are timezone-aware UTC datetimes truncated to millisecond
precision; the on-disk and on-wire text form is ISO-8601 with a Z suffix.
"""

from __future__ import annotations

import time
from datetime import datetime, timezone


def utc_from_unix(ts: float) -> datetime:
    """Unix seconds -> aware UTC datetime, truncated to milliseconds."""
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    return dt.replace(microsecond=(dt.microsecond // 1000) * 1000)


def format_iso(dt: datetime) -> str:
    """ISO-8601 UTC with millisecond precision, e.g. 2026-08-10T12:00:00.123Z."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    dt = dt.astimezone(timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.") + f"{dt.microsecond // 1000:03d}Z"


def format_iso_seconds(dt: datetime) -> str:
    """ISO-8601 UTC truncated to whole seconds (SMS bodies, human output)."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_iso(text: str) -> datetime:
    """Parse ISO-8601 text into an aware UTC datetime.

    Accepts a trailing Z or an explicit offset; a naive timestamp is taken
    as UTC. (Python 3.10's fromisoformat does not understand Z itself.)
    """
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise ValueError(f"bad ISO-8601 timestamp: {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


class Clock:
    """Real-time clock. Base class for the accelerated variant."""

    def now(self) -> datetime:
        return utc_from_unix(self.unix())

    def unix(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)

    def to_wall(self, seconds: float) -> float:
        """Scale a duration in clock seconds to wall seconds."""
        return seconds


class SimClock(Clock):
    """Clock that runs ``accel`` times faster than wall time.

    now() advances accel seconds per wall second from the moment of
    construction; sleep(s) blocks s/accel wall seconds. accel=1 behaves
    like the real clock.
    """

    def __init__(self, accel: float = 1.0, start_unix: float | None = None):
        if accel < 1.0:
            raise ValueError(f"acceleration factor must be >= 1, got {accel}")
        self.accel = float(accel)
        self._start_unix = time.time() if start_unix is None else float(start_unix)
        self._t0 = time.monotonic()

    def unix(self) -> float:
        return self._start_unix + (time.monotonic() - self._t0) * self.accel

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds / self.accel)

    def to_wall(self, seconds: float) -> float:
        return seconds / self.accel

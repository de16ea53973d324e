"""Software stand-ins for the body sensors.

Covers the linear LM35DZ temperature conversion with its accuracy noise,
reflectance pulse (PPG) synthesis plus a threshold beat detector, and a
Gaussian-bump PQRST ECG generator. Everything is deterministic for a fixed
seed, so the simulated fleet replays byte-identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

# -- Sensor constants ----------------------------------------------------------

LM35_MV_PER_C = 10.0
LM35_MIN_C = 0.0
LM35_MAX_C = 150.0
# Sigma 0.2 C puts ~95% of draws inside the datasheet's +-0.4 C accuracy band.
LM35_NOISE_SD_C = 0.2

BPM_MIN = 30.0
BPM_MAX = 220.0

# Adaptive beat detector: threshold = mean + 0.5*sd over a sliding 2 s window,
# refractory 0.25 s (caps detection at 240 BPM).
BEAT_WINDOW_S = 2.0
BEAT_THRESHOLD_SD = 0.5
BEAT_REFRACTORY_S = 0.25

# PQRST bumps as (phase offset from the R peak, phase width, amplitude mV).
# One cardiac cycle spans phase 0..1 with R at 0.5; offsets/widths scale with
# the beat period. Amplitudes give the R peak 1.0 mV, the per-beat maximum.
ECG_WAVES = (
    (-0.194, 0.035, 0.15),   # P
    (-0.042, 0.012, -0.25),  # Q
    (0.000, 0.015, 1.00),    # R
    (0.042, 0.012, -0.35),   # S
    (0.278, 0.055, 0.30),    # T
)

# PPG pulse shape: systolic Gaussian plus a small dicrotic bump that stays
# safely below the detector threshold. The systolic peak is kept narrow and
# the noise floor low so the falling flank crosses the threshold crisply
# (no double-crossings outside the refractory window).
PULSE_BASELINE = 0.15
PULSE_SYSTOLIC_AMP = 0.65
PULSE_SYSTOLIC_WIDTH = 0.06    # fraction of the beat period
PULSE_DICROTIC_AMP = 0.10
PULSE_DICROTIC_OFFSET = 0.40   # fraction of the beat period after the peak
PULSE_DICROTIC_WIDTH = 0.10
PULSE_JITTER_SD = 0.004        # per-beat timing jitter, fraction of period


class SensorRangeError(ValueError):
    """Input outside the physical range the sensor can produce or accept."""


class InsufficientDataError(ValueError):
    """Not enough beats to derive a rate."""


@dataclass(frozen=True)
class PulseSignal:
    """Reflected-light intensity trace, normalized to 0..1."""

    sample_rate: float
    samples: np.ndarray

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class EcgTrace:
    """Millivolt ECG samples at a fixed rate."""

    sample_rate: float
    samples: np.ndarray

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if len(self.samples) and not np.all(np.isfinite(self.samples)):
            raise ValueError("ECG samples must all be finite")


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# -- LM35 temperature -----------------------------------------------------------


def lm35_celsius_from_millivolts(mv: float) -> float:
    """Exact linear conversion: 10 mV per degree C over the 0-150 C span."""
    if not 0.0 <= mv <= LM35_MAX_C * LM35_MV_PER_C:
        raise SensorRangeError(f"LM35 output out of range: {mv} mV (0..1500)")
    return mv / LM35_MV_PER_C


def simulate_lm35(
    true_temp_c: float,
    rng_seed=None,
    noise_sd_c: float = LM35_NOISE_SD_C,
) -> float:
    """Millivolt output for a true temperature, with accuracy-band noise.

    Noise is zero-mean Gaussian with sigma noise_sd_c (degree-equivalent);
    pass 0 to disable. Output is clamped to the sensor's physical span.
    """
    if not LM35_MIN_C <= true_temp_c <= LM35_MAX_C:
        raise SensorRangeError(
            f"temperature out of LM35 span: {true_temp_c} C (0..150)"
        )
    mv = true_temp_c * LM35_MV_PER_C
    if noise_sd_c > 0:
        mv += _as_rng(rng_seed).normal(0.0, noise_sd_c * LM35_MV_PER_C)
    return float(min(max(mv, 0.0), LM35_MAX_C * LM35_MV_PER_C))


# -- Reflectance pulse ------------------------------------------------------------


def _check_bpm(bpm: float) -> None:
    if not BPM_MIN <= bpm <= BPM_MAX:
        raise SensorRangeError(f"bpm out of range: {bpm} ({BPM_MIN:.0f}..{BPM_MAX:.0f})")


def synth_pulse_signal(
    bpm: float,
    duration_s: float,
    sample_rate: float,
    rng_seed=None,
    noise_sd: float = 0.004,
) -> PulseSignal:
    """Quasi-periodic reflected-light waveform with one dominant peak per beat.

    Beats sit at (k + 0.5) * period with a little seeded timing jitter; the
    trace is clipped to the 0..1 intensity range.
    """
    _check_bpm(bpm)
    if duration_s < 0:
        raise ValueError(f"duration must be non-negative, got {duration_s}")
    rng = _as_rng(rng_seed)
    n = int(round(duration_s * sample_rate))
    if n == 0:
        return PulseSignal(sample_rate, np.zeros(0))
    period = 60.0 / bpm
    t = np.arange(n) / sample_rate
    signal = np.full(n, PULSE_BASELINE)
    n_beats = int(duration_s / period + 1.5)
    centers = (np.arange(n_beats) + 0.5) * period
    centers = centers + rng.normal(0.0, PULSE_JITTER_SD * period, size=n_beats)
    sys_w = PULSE_SYSTOLIC_WIDTH * period
    dic_w = PULSE_DICROTIC_WIDTH * period
    for c in centers:
        signal += PULSE_SYSTOLIC_AMP * np.exp(-0.5 * ((t - c) / sys_w) ** 2)
        signal += PULSE_DICROTIC_AMP * np.exp(
            -0.5 * ((t - c - PULSE_DICROTIC_OFFSET * period) / dic_w) ** 2
        )
    if noise_sd > 0:
        signal += rng.normal(0.0, noise_sd, size=n)
    return PulseSignal(sample_rate, np.clip(signal, 0.0, 1.0))


def detect_beats(signal: PulseSignal) -> list[float]:
    """Beat times from rising crossings of an adaptive threshold.

    Threshold is the sliding-window mean plus half a standard deviation;
    crossings inside the refractory period are rejected. A flat signal has
    no crossings and yields an empty list.
    """
    x = np.asarray(signal.samples, dtype=float)
    if len(x) == 0:
        raise ValueError("cannot detect beats in an empty signal")
    if len(x) < 2:
        return []
    window = max(1, int(round(BEAT_WINDOW_S * signal.sample_rate)))
    mean = uniform_filter1d(x, window, mode="nearest")
    sq = uniform_filter1d(x * x, window, mode="nearest")
    sd = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    threshold = mean + BEAT_THRESHOLD_SD * sd
    above = x > threshold
    rising = np.flatnonzero(~above[:-1] & above[1:]) + 1
    beats: list[float] = []
    refractory = BEAT_REFRACTORY_S
    for idx in rising:
        t = idx / signal.sample_rate
        if beats and t - beats[-1] < refractory:
            continue
        beats.append(t)
    return beats


def bpm_from_beats(beat_times: list[float]) -> float:
    """60 over the mean inter-beat interval."""
    if len(beat_times) < 2:
        raise InsufficientDataError(
            f"need at least 2 beats to compute a rate, got {len(beat_times)}"
        )
    intervals = np.diff(np.asarray(beat_times, dtype=float))
    return float(60.0 / intervals.mean())


# -- Synthetic ECG -----------------------------------------------------------------


def ecg_cycle_amplitude(phase) -> np.ndarray:
    """Noise-free PQRST amplitude (mV) at cardiac phase 0..1 (R at 0.5)."""
    phase = np.asarray(phase, dtype=float)
    value = np.zeros_like(phase)
    for offset, width, amp in ECG_WAVES:
        # Wrap-aware distance on the unit circle relative to the R position.
        d = np.mod(phase - 0.5 - offset + 0.5, 1.0) - 0.5
        value += amp * np.exp(-0.5 * (d / width) ** 2)
    return value


def synth_ecg(
    bpm: float,
    duration_s: float,
    sample_rate: float,
    rng_seed=None,
    amplitude_scale: float = 1.0,
    noise_sd_mv: float = 0.01,
) -> EcgTrace:
    """PQRST trace built from five Gaussian bumps per beat.

    The R peak is the per-beat maximum, located at (k + 0.5) * period.
    amplitude_scale multiplies the whole trace (0 gives an all-zero trace).
    """
    _check_bpm(bpm)
    if duration_s < 0:
        raise ValueError(f"duration must be non-negative, got {duration_s}")
    n = int(round(duration_s * sample_rate))
    if n == 0:
        return EcgTrace(sample_rate, np.zeros(0))
    period = 60.0 / bpm
    t = np.arange(n) / sample_rate
    phase = np.mod(t / period, 1.0)
    samples = ecg_cycle_amplitude(phase)
    if noise_sd_mv > 0:
        samples = samples + _as_rng(rng_seed).normal(0.0, noise_sd_mv, size=n)
    return EcgTrace(sample_rate, samples * amplitude_scale)

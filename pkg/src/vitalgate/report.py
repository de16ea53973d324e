"""Series reports: delimited export plus a rendered figure per series.

Mirrors the front-end's temperature graph for offline use: each selected
(patient, metric) series is written as a CSV file and a PNG line plot in
the output directory.
"""

from __future__ import annotations

import csv
from datetime import datetime, timezone
from pathlib import Path

from .clock import format_iso
from .model import METRIC_UNIT, metric_name
from .store import ReadingStore
from .wire_codec import Metric


def render_series_report(
    store: ReadingStore,
    out_dir: str,
    patient_ids: list[int] | None = None,
    metrics: list[Metric] | None = None,
    start: datetime | None = None,
    end: datetime | None = None,
) -> list[Path]:
    """Write series_p<ID>_<metric>.{csv,png} per non-empty series.

    Returns the created paths. Matplotlib's Agg backend keeps this headless.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.dates as mdates
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    patients = sorted(patient_ids if patient_ids is not None else store.patients())
    metrics = metrics or [Metric.TEMPERATURE, Metric.HEART_RATE, Metric.ECG_SAMPLE]
    lo = start or datetime.fromtimestamp(0, tz=timezone.utc)
    hi = end or datetime.max.replace(tzinfo=timezone.utc)

    written: list[Path] = []
    for patient_id in patients:
        for metric in metrics:
            readings = store.query_readings(patient_id, metric, lo, hi)
            if not readings:
                continue
            stem = f"series_p{patient_id}_{metric_name(metric)}"
            csv_path = out / f"{stem}.csv"
            with open(csv_path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["timestamp", "value", "unit", "sequence"])
                for r in readings:
                    writer.writerow([format_iso(r.timestamp), repr(r.value), r.unit.value, r.sequence])
            written.append(csv_path)

            fig, ax = plt.subplots(figsize=(10, 4))
            ax.plot([r.timestamp for r in readings], [r.value for r in readings], lw=1.2)
            ax.set_xlabel("time (UTC)")
            ax.set_ylabel(f"{metric_name(metric)} ({METRIC_UNIT[metric].value})")
            ax.set_title(f"patient {patient_id}: {metric_name(metric)}")
            ax.grid(True, alpha=0.3)
            ax.xaxis.set_major_formatter(mdates.DateFormatter("%H:%M:%S"))
            fig.autofmt_xdate()
            png_path = out / f"{stem}.png"
            fig.savefig(png_path, dpi=110, bbox_inches="tight")
            plt.close(fig)
            written.append(png_path)
    return written

"""JSON and CSV output for a MetricsReport."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .ablation import MetricsReport

CSV_COLUMNS = ("cell", "scan_mode", "fusion", "acc_mean", "acc_std",
               "f_mean", "f_std", "miou_mean", "miou_std")


def csv_rows(report: MetricsReport) -> list[list[str]]:
    rows = []
    for c in report.cells:
        stats = (c.acc_mean, c.acc_std, c.f_mean, c.f_std, c.miou_mean, c.miou_std)
        rows.append([c.name, c.scan_mode, c.fusion, *(repr(float(v)) for v in stats)])
    return rows


def write_csv(report: MetricsReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(csv_rows(report))
    return path


def write_json(report: MetricsReport, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text()))


def emit_report(report: MetricsReport, out_dir, formats=("json", "csv"), stem: str = "report") -> list[Path]:
    """Write ``<stem>.json`` and/or ``<stem>.csv`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "json":
            written.append(write_json(report, out / f"{stem}.json"))
        elif fmt == "csv":
            written.append(write_csv(report, out / f"{stem}.csv"))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    return written

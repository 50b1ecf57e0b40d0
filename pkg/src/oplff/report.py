"""Plot-ready CSV files and the JSON run summary."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np


class OutputCollision(FileExistsError):
    pass


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)):
        return ";".join(str(x) for x in v)
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def sweep_rows(report):
    """Suppression-vs-frequency table: injected frequency, measured and oracle dB."""
    header = ("frequency_hz", "measured_db", "oracle_db", "flags")
    return header, [(e.frequency, e.measured_db, e.oracle_db, e.flags) for e in report.entries]


def drift_rows(result):
    """Suppression-vs-time table, plus loop telemetry."""
    header = ("time_s", "suppression_db", "attenuation", "theta_e_rad", "flags")
    rows = zip(result.times, result.suppression, result.attenuation, result.theta_e, result.flags)
    return header, list(rows)


def spectrum_rows(spectra: dict, span: float):
    """Spectrum table: offset from carrier vs dBc, one block per run label."""
    header = ("offset_hz", "dbc", "run")
    rows = []
    for label, spec in spectra.items():
        keep = np.abs(spec.freqs) <= span
        rows += [(f, p, label) for f, p in zip(spec.freqs[keep], spec.power[keep])]
    return header, rows


def calibration_rows(log: list[dict]):
    keys = []
    for entry in log:
        keys += [k for k in entry if k not in keys]
    header = ("evaluation", *keys)
    return header, [(i, *(entry.get(k, "") for k in keys)) for i, entry in enumerate(log)]


def emit_report(out_dir, stem: str, files: dict[str, str], overwrite: bool = False) -> list[Path]:
    """Write ``{stem}{suffix}`` for each ``suffix -> text`` in ``files``.

    Nothing is written if any target exists and ``overwrite`` is false.
    """
    out = Path(out_dir)
    targets = {out / f"{stem}{suffix}": text for suffix, text in files.items()}
    if not overwrite:
        taken = [str(p) for p in targets if p.exists()]
        if taken:
            raise OutputCollision(f"refusing to overwrite {', '.join(taken)} (use --overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    for path, text in targets.items():
        path.write_text(text, encoding="utf-8")
    return list(targets)


def summary_text(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"not serializable: {type(v).__name__}")

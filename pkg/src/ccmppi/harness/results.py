"""Result persistence: per-run CSV, summary JSON, scatter CSVs, manifest.

Float cells use shortest round-trip repr, so identical runs produce
byte-identical files (the manifest's timestamp is the one excluded field).
"""

from __future__ import annotations

import csv
import io
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from .config import ScenarioConfig
from .scenario import LapRecord, RunMetrics

CSV_COLUMNS = (
    "controller",
    "c1",
    "c2",
    "seed",
    "laps_completed",
    "avg_lap_time_s",
    "collisions_per_lap",
    "success",
    "failure_reason",
)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def runs_csv_text(rows: Sequence[RunMetrics]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow(
            [
                r.controller,
                _cell(float(r.c1)),
                _cell(float(r.c2)),
                r.seed,
                r.completed_laps,
                _cell(r.avg_lap_time_s),
                _cell(r.collisions_per_lap),
                _cell(r.success),
                _cell(r.failure_reason),
            ]
        )
    return buf.getvalue()


def read_runs_csv(path: str | Path) -> list[RunMetrics]:
    """Parse a runs CSV back into metrics (lap details are not persisted;
    completed laps are reconstructed as uniform laps for round-tripping)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            n_laps = int(rec["laps_completed"])
            avg = float(rec["avg_lap_time_s"]) if rec["avg_lap_time_s"] else None
            cpl = float(rec["collisions_per_lap"]) if rec["collisions_per_lap"] else None
            laps = [
                LapRecord(index=i, lap_time_s=avg, collisions=0) for i in range(n_laps)
            ] if avg is not None else []
            m = RunMetrics(
                controller=rec["controller"],
                c1=float(rec["c1"]),
                c2=float(rec["c2"]),
                seed=int(rec["seed"]),
                laps=laps,
                total_collisions=int(round(cpl * n_laps)) if cpl is not None else 0,
                success=rec["success"] == "true",
                failure_reason=rec["failure_reason"] or None,
            )
            out.append(m)
    return out


def emit_results(
    rows: Sequence[RunMetrics],
    summary: dict,
    out_dir: str | Path,
    config: ScenarioConfig,
) -> dict[str, Path]:
    """Write runs.csv, summary.json, per-controller scatter CSVs, and the
    manifest; returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OSError(f"cannot create output directory {out}: {err}") from err

    paths: dict[str, Path] = {}

    runs_path = out / "runs.csv"
    runs_path.write_text(runs_csv_text(rows))
    paths["runs"] = runs_path

    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths["summary"] = summary_path

    for controller in sorted({r.controller for r in rows}):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("avg_lap_time_s", "collisions_per_lap"))
        for r in rows:
            if r.controller != controller or r.avg_lap_time_s is None:
                continue
            writer.writerow((_cell(r.avg_lap_time_s), _cell(r.collisions_per_lap)))
        p = out / f"scatter_{controller}.csv"
        p.write_text(buf.getvalue())
        paths[f"scatter_{controller}"] = p

    from .. import __version__
    from ..backend import BACKEND

    manifest = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "version": __version__,
        "backend": BACKEND,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    paths["manifest"] = manifest_path
    return paths

"""Grid search over cost weights and controllers, run in parallel.

Runs are independent and individually seeded, so results are byte-identical
regardless of worker count; rows come back in canonical sorted order.
"""

from __future__ import annotations

import multiprocessing as mp
import os
from typing import Sequence

from .config import ScenarioConfig
from .scenario import RunMetrics, run_scenario


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, requested)
    env = os.environ.get("SIM_WORKERS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"SIM_WORKERS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _run_one(values: dict) -> RunMetrics:
    return run_scenario(ScenarioConfig(values=values))


def run_grid_search(
    base: ScenarioConfig,
    c1_values: Sequence[float],
    c2_values: Sequence[float],
    controllers: Sequence[str] = ("mppi", "ccmppi"),
    seeds: Sequence[int] | None = None,
    workers: int | None = None,
) -> list[RunMetrics]:
    """Run every (controller, c1, c2, seed) combination of the grid.

    Individual run failures are recorded as data points, not raised. Returns
    rows sorted by (controller, c1, c2, seed).
    """
    if not c1_values or not c2_values:
        raise ValueError("grid ranges must be non-empty")
    if seeds is None:
        seeds = [base.seed]
    combos = []
    for controller in controllers:
        for c1 in c1_values:
            for c2 in c2_values:
                for seed in seeds:
                    combos.append(
                        base.with_overrides(
                            {
                                "controller.type": controller,
                                "cost.c1": float(c1),
                                "cost.c2": float(c2),
                                "sim.seed": int(seed),
                            }
                        ).values
                    )
    n_workers = worker_count(workers)
    if n_workers == 1 or len(combos) == 1:
        rows = [_run_one(values) for values in combos]
    else:
        ctx = mp.get_context("fork")
        with ctx.Pool(processes=min(n_workers, len(combos))) as pool:
            rows = pool.map(_run_one, combos)
    rows.sort(key=lambda r: (r.controller, r.c1, r.c2, r.seed))
    return rows


def compute_aggregates(rows: Sequence[RunMetrics]) -> dict:
    """Per-controller pooled statistics over a collection of runs.

    Mean lap time pools every completed lap; collisions per lap divides the
    total collision count by the total completed laps (runs with no completed
    lap contribute to neither); success rate is successes over runs.
    """
    if not rows:
        raise ValueError("cannot aggregate an empty collection of runs")
    summary: dict[str, dict] = {}
    for controller in sorted({r.controller for r in rows}):
        sub = [r for r in rows if r.controller == controller]
        lap_times = [lap.lap_time_s for r in sub for lap in r.laps]
        total_laps = sum(r.completed_laps for r in sub)
        total_collisions = sum(r.total_collisions for r in sub if r.completed_laps)
        successes = sum(1 for r in sub if r.success)
        failures: dict[str, int] = {}
        for r in sub:
            if r.failure_reason is not None:
                key = r.failure_reason.split(":", 1)[0]
                failures[key] = failures.get(key, 0) + 1
        summary[controller] = {
            "runs": len(sub),
            "successes": successes,
            "success_rate": successes / len(sub),
            "avg_lap_time_s": (sum(lap_times) / len(lap_times)) if lap_times else None,
            "collisions_per_lap": (total_collisions / total_laps) if total_laps else None,
            "completed_laps": total_laps,
            "failures": failures,
        }
    return summary

"""Command-line interface: run one scenario, sweep a grid, or validate a
config. Exit codes: 0 success, 1 run failure, 2 config error."""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, ScenarioConfig
from .grid import compute_aggregates, run_grid_search
from .results import emit_results
from .scenario import run_scenario


def parse_range(spec: str, name: str) -> list[float]:
    """Inclusive MIN:MAX:STEP range; MAX is kept when it lands on the grid."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"--{name} expects MIN:MAX:STEP, got {spec!r}")
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"--{name}: non-numeric range {spec!r}") from None
    if step <= 0 or hi < lo:
        raise ConfigError(f"--{name}: need MIN <= MAX and STEP > 0")
    count = int(round((hi - lo) / step))
    if abs(lo + count * step - hi) > 1e-9 * max(1.0, abs(hi)):
        count = int((hi - lo) / step + 1e-12)
    return [lo + i * step for i in range(count + 1)]


def _print_metrics(m) -> None:
    lap = f"{m.avg_lap_time_s:.3f}" if m.avg_lap_time_s is not None else "-"
    cpl = f"{m.collisions_per_lap:.3f}" if m.collisions_per_lap is not None else "-"
    status = "success" if m.success else f"FAILURE ({m.failure_reason})"
    print(
        f"{m.controller} c1={m.c1} c2={m.c2} seed={m.seed}: "
        f"{m.completed_laps} laps, avg lap {lap} s, {cpl} collisions/lap -> {status}"
    )


def cmd_run(args) -> int:
    config = ScenarioConfig.from_file(args.config)
    if args.seed is not None:
        config = config.with_overrides({"sim.seed": args.seed})
    metrics = run_scenario(config)
    _print_metrics(metrics)
    if args.out:
        summary = compute_aggregates([metrics])
        paths = emit_results([metrics], summary, args.out, config)
        print(f"results written to {paths['runs'].parent}")
    return 0 if metrics.success else 1


def cmd_grid(args) -> int:
    config = ScenarioConfig.from_file(args.config)
    c1_values = parse_range(args.c1, "c1") if args.c1 else [float(config.get("cost.c1"))]
    c2_values = parse_range(args.c2, "c2") if args.c2 else [float(config.get("cost.c2"))]
    controllers = [c.strip() for c in args.controllers.split(",") if c.strip()]
    for c in controllers:
        if c not in ("mppi", "ccmppi"):
            raise ConfigError(f"unknown controller {c!r}")
    seeds = None
    if args.seeds:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"--seeds expects a comma-separated integer list") from None
    rows = run_grid_search(config, c1_values, c2_values, controllers, seeds=seeds)
    summary = compute_aggregates(rows)
    for m in rows:
        _print_metrics(m)
    for controller, stats in summary.items():
        lap = f"{stats['avg_lap_time_s']:.3f}" if stats["avg_lap_time_s"] is not None else "-"
        print(
            f"== {controller}: success {stats['successes']}/{stats['runs']}, "
            f"avg lap {lap} s, {stats['collisions_per_lap']} collisions/lap"
        )
    if args.out:
        paths = emit_results(rows, summary, args.out, config)
        print(f"results written to {paths['runs'].parent}")
    return 0


def cmd_validate(args) -> int:
    ScenarioConfig.from_file(args.config)
    print(f"{args.config}: ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccmppi-sim",
        description="MPPI / CC-MPPI race-track simulation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=cmd_run)

    p_grid = sub.add_parser("grid", help="sweep cost weights over controllers")
    p_grid.add_argument("--config", required=True)
    p_grid.add_argument("--c1", default=None, help="MIN:MAX:STEP (inclusive)")
    p_grid.add_argument("--c2", default=None, help="MIN:MAX:STEP (inclusive)")
    p_grid.add_argument("--controllers", default="mppi,ccmppi")
    p_grid.add_argument("--seeds", default=None, help="comma-separated seed list")
    p_grid.add_argument("--out", default=None)
    p_grid.set_defaults(func=cmd_grid)

    p_val = sub.add_parser("validate", help="schema-check a config file")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

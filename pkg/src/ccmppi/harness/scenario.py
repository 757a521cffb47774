"""Closed-loop scenario simulation.

One controller iteration per plant step: update the mean control sequence,
execute its first command, advance the vehicle one dt, shift the mean. Laps
are detected by progress wrap, collisions by CoM/disk intersection, and a
run fails when the vehicle stops, strays more than the configured distance
from the centerline, errors out, or exceeds the simulated-time cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..ccmppi import ccmppi_iteration
from ..dynamics import BicycleModel
from ..environment import make_cost_functions, obstacle_arrays
from ..mppi import mppi_iteration, noise_stream, receding_horizon_shift
from .config import ScenarioConfig


@dataclass(frozen=True)
class LapRecord:
    index: int
    lap_time_s: float
    collisions: int


@dataclass
class RunMetrics:
    """Outcome of one scenario run; collisions_per_lap and avg_lap_time_s are
    None until at least one lap completes."""

    controller: str
    c1: float
    c2: float
    seed: int
    laps: list[LapRecord] = field(default_factory=list)
    total_collisions: int = 0
    success: bool = False
    failure_reason: str | None = None
    sim_time_s: float = 0.0

    @property
    def completed_laps(self) -> int:
        return len(self.laps)

    @property
    def avg_lap_time_s(self) -> float | None:
        if not self.laps:
            return None
        return sum(l.lap_time_s for l in self.laps) / len(self.laps)

    @property
    def collisions_per_lap(self) -> float | None:
        if not self.laps:
            return None
        return self.total_collisions / len(self.laps)


def run_scenario(config: ScenarioConfig) -> RunMetrics:
    """Simulate one run of the configured controller on the configured track."""
    track = config.build_track()
    if not track.closed:
        from .config import ConfigError

        raise ConfigError("scenario tracks must close on themselves (lap accounting)")
    obstacles = config.build_obstacles()
    cost_w = config.cost_weights()
    model = BicycleModel(config.bicycle_params())
    controller = config.controller
    use_cc = controller == "ccmppi"
    mp = config.mppi_params()
    cc_params = config.ccmppi_params() if use_cc else None

    v = config.values
    dt = config.dt
    laps_target = config.laps
    seed = config.seed
    window = float(v["vehicle.v_max"]) * mp.N * dt
    stop_speed = float(v["sim.stop_speed"])
    stop_duration = float(v["sim.stop_duration"])
    stop_grace = float(v["sim.stop_grace"])
    off_track_limit = float(v["sim.off_track_limit"])
    max_time = float(v["sim.max_time"])
    lo, hi = config.control_limits()

    # vehicle starts on the centerline at arclength 0 with the configured speed
    sx, sy, sh = track.centerline_pose(0.0)
    state = np.array([sx, sy, sh, float(v["vehicle.v0"])])
    mean = np.zeros((mp.N, 2))
    prev_gain = None
    prev_multiplier = None

    metrics = RunMetrics(controller=controller, c1=cost_w.c1, c2=cost_w.c2, seed=seed)
    active = [ob.trigger_distance is None for ob in obstacles]
    inside = [False] * len(obstacles)
    unwrapped = 0.0
    s_prev = 0.0
    lap_start_t = 0.0
    lap_collisions = 0
    stop_since = None
    t = 0.0
    iteration = 0
    L = track.total_length

    while True:
        # obstacle activation (latched once triggered)
        for i, ob in enumerate(obstacles):
            if not active[i]:
                d = math.hypot(state[0] - ob.center[0], state[1] - ob.center[1])
                if d <= ob.trigger_distance:
                    active[i] = True
        live_obstacles = [ob for i, ob in enumerate(obstacles) if active[i]]

        s_ref, _ = track.locate(state[:2])
        state_cost_fn, terminal_cost_fn = make_cost_functions(
            track, live_obstacles, cost_w, s_ref, window
        )
        rng = noise_stream(seed, iteration)
        try:
            if use_cc:
                new_mean, diag = ccmppi_iteration(
                    state, mean, cc_params, state_cost_fn, terminal_cost_fn, model, rng,
                    gain_warm_start=prev_gain,
                    multiplier_warm_start=prev_multiplier,
                )
                prev_gain = diag.gain
                if diag.gain_info is not None:
                    prev_multiplier = diag.gain_info.multiplier
            else:
                new_mean, diag = mppi_iteration(
                    state, mean, mp, state_cost_fn, terminal_cost_fn, model, rng
                )
        except Exception as err:  # controller failure ends the run
            metrics.failure_reason = f"controller_error: {err}"
            metrics.sim_time_s = t
            return metrics

        command = np.clip(new_mean[0], lo, hi)
        state = model.step_array(state, command)
        mean = receding_horizon_shift(new_mean)
        t += dt
        iteration += 1

        # progress accounting (wrap-corrected delta)
        s_now, e_now = track.locate(state[:2])
        ds = s_now - s_prev
        ds = (ds + 0.5 * L) % L - 0.5 * L
        unwrapped += ds
        s_prev = s_now

        # collision events: one per obstacle entry
        for i, ob in enumerate(obstacles):
            if not active[i]:
                continue
            d = math.hypot(state[0] - ob.center[0], state[1] - ob.center[1])
            now_inside = d <= ob.radius
            if now_inside and not inside[i]:
                metrics.total_collisions += 1
                lap_collisions += 1
            inside[i] = now_inside

        if unwrapped >= (len(metrics.laps) + 1) * L:
            metrics.laps.append(
                LapRecord(index=len(metrics.laps), lap_time_s=t - lap_start_t,
                          collisions=lap_collisions)
            )
            lap_start_t = t
            lap_collisions = 0
            if len(metrics.laps) >= laps_target:
                metrics.success = True
                metrics.sim_time_s = t
                return metrics

        if e_now > off_track_limit:
            metrics.failure_reason = "off_track"
            metrics.sim_time_s = t
            return metrics
        if abs(state[3]) < stop_speed and t >= stop_grace:
            if stop_since is None:
                stop_since = t
            elif t - stop_since >= stop_duration:
                metrics.failure_reason = "stopped"
                metrics.sim_time_s = t
                return metrics
        else:
            stop_since = None
        if t >= max_time:
            metrics.failure_reason = "timeout"
            metrics.sim_time_s = t
            return metrics

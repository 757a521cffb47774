"""Scenario configuration: flat key-value files with dotted section names.

Lines are ``key = value`` with ``#`` comments. Values are JSON literals
(numbers, strings, nested lists for matrices in row-major order) plus the
bare words ``inf``, ``true``/``false``, and unquoted strings. Track segments
are compact strings: ``"straight:LENGTH"`` or ``"arc:RADIUS:ANGLE_DEG"``
(positive angles turn left). Obstacles are numbered keys ``obstacle.<i> =
[x, y, radius]`` or ``[x, y, radius, trigger_distance]``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..covsteer import CovCostWeights, GainSolveOptions
from ..dynamics import BicycleParams
from ..environment import CostWeights, Obstacle, Track
from ..mppi import MppiParams


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


# defaults for every tunable; controller values follow the reference
# experimental setup (horizon 15, temperature 1, 4096 samples, alpha 0.2,
# control cost 0.01*I)
_DEFAULTS: dict[str, object] = {
    "controller.type": "mppi",
    "controller.N": 15,
    "controller.M": 4096,
    "controller.lambda": 1.0,
    "controller.alpha": 0.2,
    "controller.nu": math.inf,
    "controller.R": [[0.01, 0.0], [0.0, 0.01]],
    "noise.sigma_eps": [[0.49, 0.0], [0.0, 0.12]],
    "gain.mode": "hard",
    "gain.sigma_f": None,
    "gain.sigma_f_scale": 0.5,
    "gain.Q": None,  # zeros
    "gain.Q_f": None,  # identity
    "gain.bracket_iters": 8,
    "gain.polish_iters": 6,
    "cost.c1": 150.0,
    "cost.c2": 2.0,
    "cost.obstacle_mode": "continuous",
    "cost.progress_mode": "normalized",
    "vehicle.l_f": 0.15,
    "vehicle.l_r": 0.15,
    "vehicle.v_max": 3.0,
    "vehicle.throttle_limit": 3.0,
    "vehicle.steer_limit": 0.45,
    "vehicle.v0": 0.0,
    "track.width": 0.6,
    "track.start": [0.0, 0.0, 0.0],
    "track.segments": ["straight:3.0"],
    "sim.dt": 0.02,
    "sim.laps": 20,
    "sim.seed": 0,
    "sim.max_time": 200.0,
    "sim.stop_speed": 1e-3,
    "sim.stop_duration": 1.0,
    "sim.stop_grace": 3.0,
    "sim.off_track_limit": 1.0,
}

_CONTROLLERS = ("mppi", "ccmppi")


def _parse_value(raw: str):
    raw = raw.strip()
    lowered = raw.lower()
    if lowered in ("inf", "+inf", "infinity"):
        return math.inf
    if lowered == "true":
        return True
    if lowered == "false":
        return False
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_kv_text(text: str) -> dict[str, object]:
    """Parse flat key-value lines into a dict; raises on malformed lines."""
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _parse_value(raw)
    return out


def _parse_segment(spec: str, index: int):
    parts = str(spec).split(":")
    try:
        if parts[0] == "straight" and len(parts) == 2:
            return ("straight", float(parts[1]))
        if parts[0] == "arc" and len(parts) == 3:
            return ("arc", float(parts[1]), math.radians(float(parts[2])))
    except ValueError:
        pass
    raise ConfigError(
        f"track.segments[{index}]: expected 'straight:LEN' or 'arc:RADIUS:ANGLE_DEG', got {spec!r}"
    )


def _matrix(value, key: str, shape: tuple[int, int]) -> np.ndarray:
    try:
        m = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a numeric matrix") from None
    if m.shape != shape:
        raise ConfigError(f"{key}: expected shape {shape}, got {m.shape}")
    return m


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario description; see module docstring for the schema."""

    values: dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        return cls.from_dict(parse_kv_text(text))

    @classmethod
    def from_dict(cls, values: dict[str, object]) -> "ScenarioConfig":
        merged = dict(_DEFAULTS)
        obstacles = {}
        for key, val in values.items():
            if key.startswith("obstacle."):
                obstacles[key] = val
                continue
            if key not in _DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = val
        merged.update(obstacles)
        cfg = cls(values=merged)
        cfg.validate()
        return cfg

    def get(self, key: str):
        return self.values[key]

    def with_overrides(self, overrides: dict[str, object]) -> "ScenarioConfig":
        """New config with the given dotted keys replaced."""
        merged = dict(self.values)
        for key, val in overrides.items():
            if key not in merged and not key.startswith("obstacle."):
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = val
        cfg = ScenarioConfig(values=merged)
        cfg.validate()
        return cfg

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        v = self.values
        if v["controller.type"] not in _CONTROLLERS:
            raise ConfigError(f"controller.type must be one of {_CONTROLLERS}")
        for key in ("controller.N", "controller.M", "sim.laps"):
            if not isinstance(v[key], int) or v[key] < 1:
                raise ConfigError(f"{key} must be a positive integer")
        for key in ("controller.lambda", "sim.dt", "track.width", "vehicle.l_f",
                    "vehicle.l_r", "vehicle.v_max", "sim.max_time"):
            if not isinstance(v[key], (int, float)) or v[key] <= 0:
                raise ConfigError(f"{key} must be a positive number")
        if not 0.0 <= v["controller.alpha"] <= 1.0:
            raise ConfigError("controller.alpha must lie in [0, 1]")
        if not isinstance(v["sim.seed"], int):
            raise ConfigError("sim.seed must be an integer")
        if v["gain.mode"] not in ("hard", "soft"):
            raise ConfigError("gain.mode must be 'hard' or 'soft'")
        if v["cost.obstacle_mode"] not in ("discontinuous", "continuous"):
            raise ConfigError("cost.obstacle_mode must be 'discontinuous' or 'continuous'")
        if v["cost.progress_mode"] not in ("normalized", "raw"):
            raise ConfigError("cost.progress_mode must be 'normalized' or 'raw'")
        if v["cost.c1"] < 0 or v["cost.c2"] < 0:
            raise ConfigError("cost.c1 and cost.c2 must be nonnegative")
        if (v["gain.sigma_f"] is None) == (v["gain.sigma_f_scale"] is None):
            raise ConfigError("set exactly one of gain.sigma_f and gain.sigma_f_scale")
        start = v["track.start"]
        if not (isinstance(start, list) and len(start) == 3):
            raise ConfigError("track.start must be [x, y, heading_deg]")
        segs = v["track.segments"]
        if not (isinstance(segs, list) and segs):
            raise ConfigError("track.segments must be a non-empty list")
        for i, seg in enumerate(segs):
            _parse_segment(seg, i)
        _matrix(v["controller.R"], "controller.R", (2, 2))
        _matrix(v["noise.sigma_eps"], "noise.sigma_eps", (2, 2))
        if v["gain.sigma_f"] is not None:
            _matrix(v["gain.sigma_f"], "gain.sigma_f", (4, 4))
        for key in ("gain.Q", "gain.Q_f"):
            if v[key] is not None:
                _matrix(v[key], key, (4, 4))
        for key, val in v.items():
            if key.startswith("obstacle."):
                if not (isinstance(val, list) and len(val) in (3, 4)):
                    raise ConfigError(f"{key} must be [x, y, radius] or [x, y, radius, trigger]")
                if val[2] <= 0:
                    raise ConfigError(f"{key}: radius must be positive")
        # constructing the track validates the segment chain
        self.build_track()

    # -- builders -----------------------------------------------------------

    @property
    def controller(self) -> str:
        return str(self.values["controller.type"])

    @property
    def seed(self) -> int:
        return int(self.values["sim.seed"])

    @property
    def dt(self) -> float:
        return float(self.values["sim.dt"])

    @property
    def laps(self) -> int:
        return int(self.values["sim.laps"])

    def build_track(self) -> Track:
        v = self.values
        x, y, heading_deg = v["track.start"]
        segments = [_parse_segment(s, i) for i, s in enumerate(v["track.segments"])]
        try:
            return Track.build((x, y, math.radians(heading_deg)), segments, v["track.width"])
        except ValueError as err:
            raise ConfigError(f"invalid track: {err}") from err

    def build_obstacles(self) -> list[Obstacle]:
        out = []
        keys = sorted(
            (k for k in self.values if k.startswith("obstacle.")),
            key=lambda k: int(k.split(".", 1)[1]),
        )
        for key in keys:
            val = self.values[key]
            trigger = float(val[3]) if len(val) == 4 else None
            out.append(Obstacle(center=(float(val[0]), float(val[1])), radius=float(val[2]),
                                trigger_distance=trigger))
        return out

    def bicycle_params(self) -> BicycleParams:
        v = self.values
        return BicycleParams(l_f=float(v["vehicle.l_f"]), l_r=float(v["vehicle.l_r"]),
                             dt=float(v["sim.dt"]))

    def control_limits(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.values
        thr = float(v["vehicle.throttle_limit"])
        st = float(v["vehicle.steer_limit"])
        return np.array([-thr, -st]), np.array([thr, st])

    def mppi_params(self) -> MppiParams:
        v = self.values
        return MppiParams(
            N=int(v["controller.N"]),
            M=int(v["controller.M"]),
            lam=float(v["controller.lambda"]),
            alpha=float(v["controller.alpha"]),
            nu=float(v["controller.nu"]),
            R=_matrix(v["controller.R"], "controller.R", (2, 2)),
            sigma_eps=_matrix(v["noise.sigma_eps"], "noise.sigma_eps", (2, 2)),
            control_limits=self.control_limits(),
        )

    def cov_weights(self) -> CovCostWeights:
        v = self.values
        Q = _matrix(v["gain.Q"], "gain.Q", (4, 4)) if v["gain.Q"] is not None else np.zeros((4, 4))
        Q_f = _matrix(v["gain.Q_f"], "gain.Q_f", (4, 4)) if v["gain.Q_f"] is not None else np.eye(4)
        return CovCostWeights(Q=Q, Q_f=Q_f, R=_matrix(v["controller.R"], "controller.R", (2, 2)))

    def gain_options(self) -> GainSolveOptions:
        v = self.values
        return GainSolveOptions(
            bracket_iters=int(v["gain.bracket_iters"]),
            polish_iters=int(v["gain.polish_iters"]),
        )

    def ccmppi_params(self):
        from ..ccmppi import CcMppiParams

        v = self.values
        sigma_f = None
        if v["gain.sigma_f"] is not None:
            sigma_f = _matrix(v["gain.sigma_f"], "gain.sigma_f", (4, 4))
        return CcMppiParams(
            mppi=self.mppi_params(),
            weights=self.cov_weights(),
            sigma_f=sigma_f,
            sigma_f_scale=v["gain.sigma_f_scale"],
            mode=str(v["gain.mode"]),
            solver=self.gain_options(),
        )

    def cost_weights(self) -> CostWeights:
        v = self.values
        return CostWeights(
            c1=float(v["cost.c1"]),
            c2=float(v["cost.c2"]),
            obstacle_mode=str(v["cost.obstacle_mode"]),
            progress_mode=str(v["cost.progress_mode"]),
        )

    def config_hash(self) -> str:
        lines = [f"{k}={json.dumps(self.values[k], sort_keys=True)}" for k in sorted(self.values)]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()

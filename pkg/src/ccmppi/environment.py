"""Race-track geometry and the state-dependent cost functions.

Tracks are ordered straight/arc centerline segments with a constant-width
corridor. Projection onto the centerline is exact per segment (no sampling),
with the global nearest segment chosen and ties resolved to the smallest
arclength.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kernels import track_locate_batch

BOUNDARY_PENALTY = 2000.0
OBSTACLE_PENALTY = 10.0
LATERAL_WEIGHT = 500.0

OBSTACLE_MODES = ("discontinuous", "continuous")
PROGRESS_MODES = ("normalized", "raw")


@dataclass(frozen=True)
class Obstacle:
    """Circular obstacle; trigger_distance, when set, keeps it inactive until
    the vehicle CoM first comes within that distance of the center."""

    center: tuple[float, float]
    radius: float
    trigger_distance: float | None = None

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")


@dataclass(frozen=True)
class CostWeights:
    c1: float
    c2: float
    obstacle_mode: str = "continuous"
    progress_mode: str = "normalized"

    def __post_init__(self):
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("cost weights c1, c2 must be nonnegative")
        if self.obstacle_mode not in OBSTACLE_MODES:
            raise ValueError(f"obstacle_mode must be one of {OBSTACLE_MODES}")
        if self.progress_mode not in PROGRESS_MODES:
            raise ValueError(f"progress_mode must be one of {PROGRESS_MODES}")


@dataclass(frozen=True)
class Track:
    """Piecewise straight/arc centerline with a constant-width corridor.

    seg_kind: 0 = straight, 1 = arc.
    seg_data rows: straight -> [ax, ay, dirx, diry, 0, length],
                   arc      -> [cx, cy, radius, theta_start, sweep, length].
    """

    width: float
    seg_kind: np.ndarray
    seg_data: np.ndarray
    seg_s0: np.ndarray
    total_length: float
    closed: bool

    @classmethod
    def build(
        cls,
        start: tuple[float, float, float],
        segments: Sequence[tuple],
        width: float,
    ) -> "Track":
        """Chain segments from a start pose (x, y, heading_rad).

        Segments are ("straight", length) or ("arc", radius, angle_rad) with
        positive angles turning left. Successive segments share position and
        tangent by construction.
        """
        if width <= 0:
            raise ValueError("track width must be positive")
        if not segments:
            raise ValueError("track needs at least one segment")
        x, y, heading = (float(c) for c in start)
        kinds = np.empty(len(segments), dtype=np.int8)
        data = np.zeros((len(segments), 6))
        s0 = np.zeros(len(segments))
        s = 0.0
        for i, seg in enumerate(segments):
            s0[i] = s
            if seg[0] == "straight":
                (_, length) = seg
                if length <= 0:
                    raise ValueError(f"segment {i}: straight length must be positive")
                dx, dy = math.cos(heading), math.sin(heading)
                kinds[i] = 0
                data[i] = (x, y, dx, dy, 0.0, length)
                x += length * dx
                y += length * dy
                s += length
            elif seg[0] == "arc":
                (_, radius, angle) = seg
                if radius <= 0 or angle == 0:
                    raise ValueError(f"segment {i}: arc needs positive radius and nonzero angle")
                dirn = 1.0 if angle > 0 else -1.0
                cx = x - dirn * radius * math.sin(heading)
                cy = y + dirn * radius * math.cos(heading)
                theta0 = math.atan2(y - cy, x - cx)
                sweep = angle
                length = radius * abs(angle)
                kinds[i] = 1
                data[i] = (cx, cy, radius, theta0, sweep, length)
                psi_end = theta0 + sweep
                x = cx + radius * math.cos(psi_end)
                y = cy + radius * math.sin(psi_end)
                heading += angle
                s += length
            else:
                raise ValueError(f"segment {i}: unknown kind {seg[0]!r}")
        sx, sy, sh = (float(c) for c in start)
        gap = math.hypot(x - sx, y - sy)
        heading_gap = abs((heading - sh + math.pi) % (2 * math.pi) - math.pi)
        closed = gap <= 1e-9 and heading_gap <= 1e-9
        return cls(
            width=float(width),
            seg_kind=kinds,
            seg_data=data,
            seg_s0=s0,
            total_length=float(s),
            closed=closed,
        )

    def locate_batch(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Arclength of the nearest centerline point and distance to it."""
        pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
        s, e = track_locate_batch(pts, self.seg_kind, self.seg_data, self.seg_s0)
        if self.closed:
            s = np.where(s >= self.total_length, s - self.total_length, s)
        return s, e

    def locate(self, position) -> tuple[float, float]:
        s, e = self.locate_batch(np.asarray(position, dtype=np.float64).reshape(1, 2))
        return float(s[0]), float(e[0])

    def centerline_pose(self, s: float) -> tuple[float, float, float]:
        """Point and tangent heading at arclength s (wrapped on closed tracks)."""
        if self.closed:
            s = s % self.total_length
        s = min(max(s, 0.0), self.total_length)
        i = int(np.searchsorted(self.seg_s0, s, side="right") - 1)
        i = max(i, 0)
        local = s - self.seg_s0[i]
        row = self.seg_data[i]
        if self.seg_kind[i] == 0:
            ax, ay, dx, dy, _, _ = row
            return ax + local * dx, ay + local * dy, math.atan2(dy, dx)
        cx, cy, radius, theta0, sweep, _ = row
        dirn = 1.0 if sweep >= 0 else -1.0
        psi = theta0 + dirn * local / radius
        return (
            cx + radius * math.cos(psi),
            cy + radius * math.sin(psi),
            psi + dirn * math.pi / 2,
        )


def progress(track: Track, position) -> float:
    """Arclength of the closest centerline point, in [0, total_length)."""
    return track.locate(position)[0]


def lateral_deviation(track: Track, position) -> float:
    """Unsigned distance from the position to its centerline projection."""
    return track.locate(position)[1]


def boundary_cost(track: Track, position) -> float:
    """0 inside the corridor (boundary inclusive), a flat penalty outside."""
    return 0.0 if lateral_deviation(track, position) <= track.width / 2 else BOUNDARY_PENALTY


def obstacle_cost(obstacles: Sequence[Obstacle], position, mode: str = "continuous") -> float:
    """Collision penalty; 'discontinuous' jumps at the edge, 'continuous'
    grows linearly with penetration depth."""
    if mode not in OBSTACLE_MODES:
        raise ValueError(f"obstacle_mode must be one of {OBSTACLE_MODES}")
    p = np.asarray(position, dtype=np.float64)
    total = 0.0
    for ob in obstacles:
        d = math.hypot(p[0] - ob.center[0], p[1] - ob.center[1])
        if mode == "discontinuous":
            if d <= ob.radius:
                return OBSTACLE_PENALTY
        else:
            total += max(ob.radius - d, 0.0)
    return total


def state_cost(track: Track, obstacles: Sequence[Obstacle], weights: CostWeights, state) -> float:
    """Boundary cost plus weighted obstacle cost at the state's position."""
    pos = np.asarray(state, dtype=np.float64)[:2]
    return boundary_cost(track, pos) + weights.c1 * obstacle_cost(
        obstacles, pos, weights.obstacle_mode
    )


def _progress_delta(track: Track, s: np.ndarray, s_ref: float) -> np.ndarray:
    """Signed progress past s_ref; wrapped to (-L/2, L/2] on closed tracks so
    positions behind the reference never read as a full lap of progress."""
    ds = s - s_ref
    if track.closed:
        L = track.total_length
        ds = (ds + 0.5 * L) % L - 0.5 * L
    return ds


def terminal_cost(
    track: Track,
    weights: CostWeights,
    state,
    s_ref: float = 0.0,
    window: float = 1.0,
) -> float:
    """Progress deficit plus quadratic lateral deviation at the horizon end.

    Normalized mode divides progress past s_ref by ``window`` (the maximum
    achievable progress over the horizon) and clips to [0, 1]; raw mode uses
    the progress in meters directly.
    """
    pos = np.asarray(state, dtype=np.float64)[:2]
    s, e = track.locate(pos)
    ds = float(_progress_delta(track, np.array([s]), s_ref)[0])
    if weights.progress_mode == "normalized":
        s_term = min(max(ds / window, 0.0), 1.0)
    else:
        s_term = ds
    return weights.c2 * (1.0 - s_term) + LATERAL_WEIGHT * e * e


def obstacle_arrays(obstacles: Sequence[Obstacle]) -> tuple[np.ndarray, np.ndarray]:
    """Pack obstacles into (centers (P, 2), radii (P,)) arrays."""
    if not obstacles:
        return np.zeros((0, 2)), np.zeros(0)
    centers = np.array([ob.center for ob in obstacles], dtype=np.float64)
    radii = np.array([ob.radius for ob in obstacles], dtype=np.float64)
    return centers, radii


def obstacle_cost_batch(
    points: np.ndarray, centers: np.ndarray, radii: np.ndarray, mode: str
) -> np.ndarray:
    if centers.shape[0] == 0:
        return np.zeros(points.shape[0])
    d = np.hypot(
        points[:, 0:1] - centers[None, :, 0], points[:, 1:2] - centers[None, :, 1]
    )
    if mode == "discontinuous":
        return np.where((d <= radii[None, :]).any(axis=1), OBSTACLE_PENALTY, 0.0)
    return np.maximum(radii[None, :] - d, 0.0).sum(axis=1)


def make_cost_functions(
    track: Track,
    obstacles: Sequence[Obstacle],
    weights: CostWeights,
    s_ref: float,
    window: float,
):
    """Batch state/terminal cost callables bound to one controller iteration.

    Both take state rows (L, n_x) and return (L,); only the position columns
    are read.
    """
    centers, radii = obstacle_arrays(obstacles)
    half_width = track.width / 2

    def state_cost_batch(states: np.ndarray) -> np.ndarray:
        pts = np.ascontiguousarray(states[:, :2], dtype=np.float64)
        _, e = track.locate_batch(pts)
        q = np.where(e <= half_width, 0.0, BOUNDARY_PENALTY)
        if centers.shape[0]:
            q = q + weights.c1 * obstacle_cost_batch(pts, centers, radii, weights.obstacle_mode)
        return q

    def terminal_cost_batch(states: np.ndarray) -> np.ndarray:
        pts = np.ascontiguousarray(states[:, :2], dtype=np.float64)
        s, e = track.locate_batch(pts)
        ds = _progress_delta(track, s, s_ref)
        if weights.progress_mode == "normalized":
            s_term = np.clip(ds / window, 0.0, 1.0)
        else:
            s_term = ds
        return weights.c2 * (1.0 - s_term) + LATERAL_WEIGHT * e * e

    return state_cost_batch, terminal_cost_batch

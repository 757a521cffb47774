"""Discrete-time vehicle dynamics: kinematic bicycle model, rollouts, and
linearization along a reference trajectory.

States are ``[x, y, phi, v]`` (position, yaw, speed at the CoM) and controls
are ``[throttle, steer]``. The yaw angle is kept unwrapped so the Jacobians
stay continuous across laps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .kernels import bicycle_rollout_batch

_STATE_FIELDS = ("x", "y", "phi", "v")


class DynamicsError(ValueError):
    """A dynamics evaluation left the valid domain (non-finite or bad input)."""


@dataclass(frozen=True)
class VehicleState:
    """Planar vehicle state: position (m), yaw (rad, unwrapped), speed (m/s)."""

    x: float
    y: float
    phi: float
    v: float

    def __post_init__(self):
        for name in _STATE_FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise DynamicsError(f"state field {name!r} is not finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.phi, self.v], dtype=np.float64)

    @staticmethod
    def from_array(arr) -> "VehicleState":
        x, y, phi, v = (float(a) for a in arr)
        return VehicleState(x, y, phi, v)


@dataclass(frozen=True)
class ControlInput:
    """Throttle (m/s^2) and steering angle (rad, |steer| < pi/2)."""

    throttle: float
    steer: float

    def __post_init__(self):
        if not (math.isfinite(self.throttle) and math.isfinite(self.steer)):
            raise DynamicsError("control input is not finite")
        if abs(self.steer) >= math.pi / 2:
            raise DynamicsError(
                f"steer angle {self.steer:.4f} rad outside (-pi/2, pi/2)"
            )

    def as_array(self) -> np.ndarray:
        return np.array([self.throttle, self.steer], dtype=np.float64)

    @staticmethod
    def from_array(arr) -> "ControlInput":
        t, s = (float(a) for a in arr)
        return ControlInput(t, s)


@dataclass(frozen=True)
class BicycleParams:
    """Geometry and integration step of the single-track bicycle model."""

    l_f: float = 0.15
    l_r: float = 0.15
    dt: float = 0.02

    def __post_init__(self):
        if self.l_f <= 0 or self.l_r <= 0:
            raise DynamicsError("axle distances l_f, l_r must be positive")
        if self.dt <= 0:
            raise DynamicsError("integration step dt must be positive")


@dataclass(frozen=True)
class LtvModel:
    """Per-step linearization: x_{k+1} ~= A_k x_k + B_k u_k + d_k."""

    A: np.ndarray  # (N, n_x, n_x)
    B: np.ndarray  # (N, n_x, n_u)
    d: np.ndarray  # (N, n_x)

    def __post_init__(self):
        A, B, d = self.A, self.B, self.d
        if A.ndim != 3 or B.ndim != 3 or d.ndim != 2:
            raise DynamicsError("LTV arrays must be stacked per step")
        if not (A.shape[0] == B.shape[0] == d.shape[0]):
            raise DynamicsError("LTV arrays disagree on the horizon length")
        if A.shape[1] != A.shape[2] or B.shape[1] != A.shape[1]:
            raise DynamicsError("LTV matrix shapes are inconsistent")
        for name, m in (("A", A), ("B", B), ("d", d)):
            if not np.all(np.isfinite(m)):
                k = int(np.argwhere(~np.isfinite(m).reshape(m.shape[0], -1).all(axis=1))[0])
                raise DynamicsError(f"non-finite {name} entries at step {k}")

    @property
    def horizon(self) -> int:
        return self.A.shape[0]

    @property
    def n_x(self) -> int:
        return self.A.shape[1]

    @property
    def n_u(self) -> int:
        return self.B.shape[2]

    @property
    def steps(self) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        return iter(zip(self.A, self.B, self.d))


class DiscreteDynamics:
    """Abstract discrete map x_{k+1} = F(x_k, u_k) of dimensions (n_x, n_u).

    Subclasses provide :meth:`step_array`; :meth:`jacobians` falls back to
    central finite differences so any model can be linearized.
    """

    n_x: int
    n_u: int

    def step_array(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def rollout_array(self, x0: np.ndarray, controls: np.ndarray) -> np.ndarray:
        """Chain step_array over a (N, n_u) control sequence; returns (N+1, n_x)."""
        controls = np.atleast_2d(np.asarray(controls, dtype=np.float64))
        out = np.empty((controls.shape[0] + 1, self.n_x))
        out[0] = x0
        for k, u in enumerate(controls):
            out[k + 1] = self.step_array(out[k], u)
        return out

    def rollout_batch(self, x0: np.ndarray, controls: np.ndarray) -> np.ndarray:
        """Roll out M control sequences (M, N, n_u) -> states (M, N+1, n_x)."""
        M = controls.shape[0]
        out = np.empty((M, controls.shape[1] + 1, self.n_x))
        for m in range(M):
            out[m] = self.rollout_array(x0, controls[m])
        return out

    def jacobians(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Central finite differences of F; step 1e-5 * max(1, |value|)."""
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        A = np.empty((self.n_x, self.n_x))
        B = np.empty((self.n_x, self.n_u))
        for j in range(self.n_x):
            h = 1e-5 * max(1.0, abs(x[j]))
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            A[:, j] = (self.step_array(xp, u) - self.step_array(xm, u)) / (2 * h)
        for j in range(self.n_u):
            h = 1e-5 * max(1.0, abs(u[j]))
            up, um = u.copy(), u.copy()
            up[j] += h
            um[j] -= h
            B[:, j] = (self.step_array(x, up) - self.step_array(x, um)) / (2 * h)
        return A, B

    def linearize_along(self, states: np.ndarray, controls: np.ndarray) -> LtvModel:
        """Linearize F along a reference (states (>=N+1, n_x), controls (N, n_u)).

        The residual d_k = F(x_k, u_k) - A_k x_k - B_k u_k holds exactly by
        construction, so an inconsistent reference is absorbed into d_k.
        """
        states = np.asarray(states, dtype=np.float64)
        controls = np.atleast_2d(np.asarray(controls, dtype=np.float64))
        N = controls.shape[0]
        if states.shape[0] < N + 1:
            raise DynamicsError(
                f"need at least {N + 1} reference states, got {states.shape[0]}"
            )
        A = np.empty((N, self.n_x, self.n_x))
        B = np.empty((N, self.n_x, self.n_u))
        d = np.empty((N, self.n_x))
        for k in range(N):
            Ak, Bk = self.jacobians(states[k], controls[k])
            if not (np.all(np.isfinite(Ak)) and np.all(np.isfinite(Bk))):
                raise DynamicsError(f"non-finite Jacobian entries at step {k}")
            A[k] = Ak
            B[k] = Bk
            d[k] = self.step_array(states[k], controls[k]) - Ak @ states[k] - Bk @ controls[k]
        return LtvModel(A=A, B=B, d=d)


class BicycleModel(DiscreteDynamics):
    """Euler-discretized kinematic single-track model with analytic Jacobians.

    Continuous rates, with slip angle beta = atan(l_r/(l_f+l_r) * tan(steer)):

        x'   = v * cos(phi + beta)
        y'   = v * sin(phi + beta)
        phi' = (v / l_r) * sin(beta)
        v'   = throttle
    """

    n_x = 4
    n_u = 2

    def __init__(self, params: BicycleParams):
        self.params = params

    def step_array(self, x, u):
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        p = self.params
        ratio = p.l_r / (p.l_f + p.l_r)
        beta = math.atan(ratio * math.tan(u[1]))
        heading = x[2] + beta
        out = np.array(
            [
                x[0] + p.dt * x[3] * math.cos(heading),
                x[1] + p.dt * x[3] * math.sin(heading),
                x[2] + p.dt * (x[3] / p.l_r) * math.sin(beta),
                x[3] + p.dt * u[0],
            ]
        )
        return out

    def rollout_batch(self, x0, controls):
        return bicycle_rollout_batch(
            np.asarray(x0, dtype=np.float64),
            np.ascontiguousarray(controls, dtype=np.float64),
            self.params.l_f,
            self.params.l_r,
            self.params.dt,
        )

    def jacobians(self, x, u):
        p = self.params
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        ratio = p.l_r / (p.l_f + p.l_r)
        tan_s = math.tan(u[1])
        beta = math.atan(ratio * tan_s)
        heading = x[2] + beta
        v = x[3]
        cos_h, sin_h = math.cos(heading), math.sin(heading)
        # d beta / d steer via the chain rule on atan(ratio * tan(steer))
        sec2 = 1.0 + tan_s * tan_s
        dbeta = ratio * sec2 / (1.0 + (ratio * tan_s) ** 2)

        A = np.eye(4)
        A[0, 2] = -p.dt * v * sin_h
        A[0, 3] = p.dt * cos_h
        A[1, 2] = p.dt * v * cos_h
        A[1, 3] = p.dt * sin_h
        A[2, 3] = p.dt * math.sin(beta) / p.l_r

        B = np.zeros((4, 2))
        B[0, 1] = -p.dt * v * sin_h * dbeta
        B[1, 1] = p.dt * v * cos_h * dbeta
        B[2, 1] = p.dt * (v / p.l_r) * math.cos(beta) * dbeta
        B[3, 0] = p.dt
        return A, B


def step(state: VehicleState, control: ControlInput, params: BicycleParams) -> VehicleState:
    """Advance the bicycle model one Euler step of params.dt seconds."""
    model = BicycleModel(params)
    out = model.step_array(state.as_array(), control.as_array())
    for i, name in enumerate(_STATE_FIELDS):
        if not math.isfinite(out[i]):
            raise DynamicsError(f"step produced non-finite state field {name!r}")
    return VehicleState.from_array(out)


def rollout(
    x0: VehicleState,
    controls: Sequence[ControlInput],
    params: BicycleParams,
) -> list[VehicleState]:
    """Chain :func:`step` over the control sequence; returns N+1 states."""
    if len(controls) < 1:
        raise DynamicsError("rollout needs at least one control input")
    states = [x0]
    for k, u in enumerate(controls):
        try:
            states.append(step(states[-1], u, params))
        except DynamicsError as err:
            raise DynamicsError(f"rollout failed at step {k}: {err}") from err
    return states


def linearize(
    reference_states: Sequence[VehicleState] | np.ndarray,
    reference_controls: Sequence[ControlInput] | np.ndarray,
    params: BicycleParams,
) -> LtvModel:
    """Linearize the bicycle model along a reference trajectory.

    Accepts either typed states/controls or plain arrays of shapes
    (N+1, 4) / (N, 2). Uses the analytic Jacobians.
    """
    xs = _as_state_array(reference_states)
    us = _as_control_array(reference_controls)
    return BicycleModel(params).linearize_along(xs, us)


def _as_state_array(states) -> np.ndarray:
    if isinstance(states, np.ndarray):
        return np.asarray(states, dtype=np.float64)
    return np.stack([s.as_array() if isinstance(s, VehicleState) else np.asarray(s, dtype=np.float64) for s in states])


def _as_control_array(controls) -> np.ndarray:
    if isinstance(controls, np.ndarray):
        return np.atleast_2d(np.asarray(controls, dtype=np.float64))
    return np.stack([c.as_array() if isinstance(c, ControlInput) else np.asarray(c, dtype=np.float64) for c in controls])

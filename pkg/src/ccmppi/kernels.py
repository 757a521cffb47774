"""Hot numeric kernels: batch rollouts and track projection.

Every kernel has a numba ``@njit`` implementation and an equivalent
vectorized pure-numpy implementation. ``CCMPPI_BACKEND`` selects which one is
bound to the public names (see :mod:`ccmppi.backend`); both stay importable
through the ``impls`` tables so they can be cross-checked and benchmarked.
"""

from __future__ import annotations

import math

import numpy as np

from .backend import BACKEND, USING_NUMBA

TWO_PI = 2.0 * math.pi

# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------


def _bicycle_rollout_np(x0, u, l_f, l_r, dt):
    """Roll out (M, N, 2) control sequences through the bicycle model."""
    M, N = u.shape[0], u.shape[1]
    states = np.empty((M, N + 1, 4))
    states[:, 0] = x0
    ratio = l_r / (l_f + l_r)
    for k in range(N):
        xk = states[:, k]
        beta = np.arctan(ratio * np.tan(u[:, k, 1]))
        heading = xk[:, 2] + beta
        nxt = states[:, k + 1]
        nxt[:, 0] = xk[:, 0] + dt * xk[:, 3] * np.cos(heading)
        nxt[:, 1] = xk[:, 1] + dt * xk[:, 3] * np.sin(heading)
        nxt[:, 2] = xk[:, 2] + dt * (xk[:, 3] / l_r) * np.sin(beta)
        nxt[:, 3] = xk[:, 3] + dt * u[:, k, 0]
    return states


def _sample_rollout_np(x0, w, eps, n_controlled, l_f, l_r, dt, u_lo, u_hi):
    """Open-loop sampling: v = w (controlled) or 0, u = clip(v + eps)."""
    M, N = eps.shape[0], eps.shape[1]
    v = np.zeros((M, N, 2))
    v[:n_controlled] = w[None, :, :]
    u = np.minimum(np.maximum(v + eps, u_lo), u_hi)
    states = _bicycle_rollout_np(x0, u, l_f, l_r, dt)
    return states, u, v


def _feedback_rollout_np(x0, w, K, A, B, eps, n_controlled, l_f, l_r, dt, u_lo, u_hi):
    """Closed-loop sampling with the noise-driven auxiliary state.

    y_{k+1} = A_k y_k + B_k eps_k starts at zero; controlled samples use
    v_k = w_k + K_k y_k, the rest v_k = 0. Returns (states, u, v, y).
    """
    M, N = eps.shape[0], eps.shape[1]
    n_x = A.shape[1]
    states = np.empty((M, N + 1, 4))
    states[:, 0] = x0
    y = np.zeros((M, N + 1, n_x))
    u = np.empty((M, N, 2))
    v = np.zeros((M, N, 2))
    ratio = l_r / (l_f + l_r)
    for k in range(N):
        yk = y[:, k]
        v[:n_controlled, k] = w[k][None, :] + yk[:n_controlled] @ K[k].T
        u[:, k] = np.minimum(np.maximum(v[:, k] + eps[:, k], u_lo), u_hi)
        xk = states[:, k]
        beta = np.arctan(ratio * np.tan(u[:, k, 1]))
        heading = xk[:, 2] + beta
        nxt = states[:, k + 1]
        nxt[:, 0] = xk[:, 0] + dt * xk[:, 3] * np.cos(heading)
        nxt[:, 1] = xk[:, 1] + dt * xk[:, 3] * np.sin(heading)
        nxt[:, 2] = xk[:, 2] + dt * (xk[:, 3] / l_r) * np.sin(beta)
        nxt[:, 3] = xk[:, 3] + dt * u[:, k, 0]
        y[:, k + 1] = yk @ A[k].T + eps[:, k] @ B[k].T
    return states, u, v, y


def _track_locate_np(points, seg_kind, seg_data, seg_s0):
    """Project points onto the centerline: returns (arclength, distance).

    Ties across segments resolve to the smallest arclength (first segment).
    """
    p = points[:, None, :]  # (L, 1, 2)
    straight = seg_kind == 0

    ax = seg_data[:, 0]
    ay = seg_data[:, 1]
    length = seg_data[:, 5]

    # straights: clamp the tangential coordinate
    dx = seg_data[:, 2]
    dy = seg_data[:, 3]
    t = (p[:, :, 0] - ax) * dx + (p[:, :, 1] - ay) * dy
    t = np.clip(t, 0.0, np.where(straight, length, 0.0))
    cx_s = ax + t * dx
    cy_s = ay + t * dy
    d2_s = (p[:, :, 0] - cx_s) ** 2 + (p[:, :, 1] - cy_s) ** 2
    s_s = t

    # arcs: angular coordinate measured along the sweep direction
    cx = seg_data[:, 0]
    cy = seg_data[:, 1]
    radius = seg_data[:, 2]
    theta0 = seg_data[:, 3]
    sweep = seg_data[:, 4]
    dirn = np.where(sweep >= 0.0, 1.0, -1.0)
    span = np.abs(sweep)
    vx = p[:, :, 0] - cx
    vy = p[:, :, 1] - cy
    psi = np.arctan2(vy, vx)
    ang = (dirn * (psi - theta0)) % TWO_PI
    on_arc = ang <= span
    rho = np.hypot(vx, vy)
    d_on = np.abs(rho - radius)
    near_end = (ang - span) < (TWO_PI - ang)
    theta_clamp = np.where(near_end, theta0 + sweep, theta0)
    ex = cx + radius * np.cos(theta_clamp)
    ey = cy + radius * np.sin(theta_clamp)
    d_end2 = (p[:, :, 0] - ex) ** 2 + (p[:, :, 1] - ey) ** 2
    d2_a = np.where(on_arc, d_on * d_on, d_end2)
    s_a = np.where(on_arc, radius * ang, np.where(near_end, radius * span, 0.0))

    d2 = np.where(straight, d2_s, d2_a)
    s_loc = np.where(straight, s_s, s_a)
    idx = np.argmin(d2, axis=1)
    rows = np.arange(points.shape[0])
    s = seg_s0[idx] + s_loc[rows, idx]
    e = np.sqrt(d2[rows, idx])
    return s, e


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if USING_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _bicycle_rollout_nb(x0, u, l_f, l_r, dt):
        M, N = u.shape[0], u.shape[1]
        states = np.empty((M, N + 1, 4))
        ratio = l_r / (l_f + l_r)
        for m in range(M):
            states[m, 0, 0] = x0[0]
            states[m, 0, 1] = x0[1]
            states[m, 0, 2] = x0[2]
            states[m, 0, 3] = x0[3]
            for k in range(N):
                x = states[m, k, 0]
                y = states[m, k, 1]
                phi = states[m, k, 2]
                vel = states[m, k, 3]
                beta = math.atan(ratio * math.tan(u[m, k, 1]))
                heading = phi + beta
                states[m, k + 1, 0] = x + dt * vel * math.cos(heading)
                states[m, k + 1, 1] = y + dt * vel * math.sin(heading)
                states[m, k + 1, 2] = phi + dt * (vel / l_r) * math.sin(beta)
                states[m, k + 1, 3] = vel + dt * u[m, k, 0]
        return states

    @njit(cache=True)
    def _sample_rollout_nb(x0, w, eps, n_controlled, l_f, l_r, dt, u_lo, u_hi):
        M, N = eps.shape[0], eps.shape[1]
        states = np.empty((M, N + 1, 4))
        u = np.empty((M, N, 2))
        v = np.zeros((M, N, 2))
        ratio = l_r / (l_f + l_r)
        for m in range(M):
            states[m, 0, 0] = x0[0]
            states[m, 0, 1] = x0[1]
            states[m, 0, 2] = x0[2]
            states[m, 0, 3] = x0[3]
            controlled = m < n_controlled
            for k in range(N):
                for j in range(2):
                    vj = w[k, j] if controlled else 0.0
                    v[m, k, j] = vj
                    uj = vj + eps[m, k, j]
                    if uj < u_lo[j]:
                        uj = u_lo[j]
                    elif uj > u_hi[j]:
                        uj = u_hi[j]
                    u[m, k, j] = uj
                x = states[m, k, 0]
                y = states[m, k, 1]
                phi = states[m, k, 2]
                vel = states[m, k, 3]
                beta = math.atan(ratio * math.tan(u[m, k, 1]))
                heading = phi + beta
                states[m, k + 1, 0] = x + dt * vel * math.cos(heading)
                states[m, k + 1, 1] = y + dt * vel * math.sin(heading)
                states[m, k + 1, 2] = phi + dt * (vel / l_r) * math.sin(beta)
                states[m, k + 1, 3] = vel + dt * u[m, k, 0]
        return states, u, v

    @njit(cache=True)
    def _feedback_rollout_nb(x0, w, K, A, B, eps, n_controlled, l_f, l_r, dt, u_lo, u_hi):
        M, N = eps.shape[0], eps.shape[1]
        n_x = A.shape[1]
        states = np.empty((M, N + 1, 4))
        y = np.zeros((M, N + 1, n_x))
        u = np.empty((M, N, 2))
        v = np.zeros((M, N, 2))
        ratio = l_r / (l_f + l_r)
        for m in range(M):
            states[m, 0, 0] = x0[0]
            states[m, 0, 1] = x0[1]
            states[m, 0, 2] = x0[2]
            states[m, 0, 3] = x0[3]
            controlled = m < n_controlled
            for k in range(N):
                for j in range(2):
                    if controlled:
                        acc = 0.0
                        for i in range(n_x):
                            acc += K[k, j, i] * y[m, k, i]
                        vj = w[k, j] + acc
                    else:
                        vj = 0.0
                    v[m, k, j] = vj
                    uj = vj + eps[m, k, j]
                    if uj < u_lo[j]:
                        uj = u_lo[j]
                    elif uj > u_hi[j]:
                        uj = u_hi[j]
                    u[m, k, j] = uj
                x = states[m, k, 0]
                yy = states[m, k, 1]
                phi = states[m, k, 2]
                vel = states[m, k, 3]
                beta = math.atan(ratio * math.tan(u[m, k, 1]))
                heading = phi + beta
                states[m, k + 1, 0] = x + dt * vel * math.cos(heading)
                states[m, k + 1, 1] = yy + dt * vel * math.sin(heading)
                states[m, k + 1, 2] = phi + dt * (vel / l_r) * math.sin(beta)
                states[m, k + 1, 3] = vel + dt * u[m, k, 0]
                for i in range(n_x):
                    acc = 0.0
                    for jj in range(n_x):
                        acc += A[k, i, jj] * y[m, k, jj]
                    acc += B[k, i, 0] * eps[m, k, 0] + B[k, i, 1] * eps[m, k, 1]
                    y[m, k + 1, i] = acc
        return states, u, v, y

    @njit(cache=True)
    def _track_locate_nb(points, seg_kind, seg_data, seg_s0):
        L = points.shape[0]
        S = seg_kind.shape[0]
        s_out = np.empty(L)
        e_out = np.empty(L)
        for i in range(L):
            px = points[i, 0]
            py = points[i, 1]
            best_d2 = np.inf
            best_s = 0.0
            for j in range(S):
                if seg_kind[j] == 0:
                    ax = seg_data[j, 0]
                    ay = seg_data[j, 1]
                    dx = seg_data[j, 2]
                    dy = seg_data[j, 3]
                    length = seg_data[j, 5]
                    t = (px - ax) * dx + (py - ay) * dy
                    if t < 0.0:
                        t = 0.0
                    elif t > length:
                        t = length
                    cx = ax + t * dx
                    cy = ay + t * dy
                    d2 = (px - cx) ** 2 + (py - cy) ** 2
                    s_loc = t
                else:
                    cx = seg_data[j, 0]
                    cy = seg_data[j, 1]
                    radius = seg_data[j, 2]
                    theta0 = seg_data[j, 3]
                    sweep = seg_data[j, 4]
                    dirn = 1.0 if sweep >= 0.0 else -1.0
                    span = abs(sweep)
                    vx = px - cx
                    vy = py - cy
                    psi = math.atan2(vy, vx)
                    ang = (dirn * (psi - theta0)) % TWO_PI
                    if ang <= span:
                        rho = math.hypot(vx, vy)
                        d = abs(rho - radius)
                        d2 = d * d
                        s_loc = radius * ang
                    else:
                        if (ang - span) < (TWO_PI - ang):
                            theta_c = theta0 + sweep
                            s_loc = radius * span
                        else:
                            theta_c = theta0
                            s_loc = 0.0
                        ex = cx + radius * math.cos(theta_c)
                        ey = cy + radius * math.sin(theta_c)
                        d2 = (px - ex) ** 2 + (py - ey) ** 2
                if d2 < best_d2:
                    best_d2 = d2
                    best_s = seg_s0[j] + s_loc
            s_out[i] = best_s
            e_out[i] = math.sqrt(best_d2)
        return s_out, e_out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

impls = {
    "numpy": {
        "bicycle_rollout_batch": _bicycle_rollout_np,
        "sample_rollout_batch": _sample_rollout_np,
        "feedback_rollout_batch": _feedback_rollout_np,
        "track_locate_batch": _track_locate_np,
    }
}
if USING_NUMBA:
    impls["numba"] = {
        "bicycle_rollout_batch": _bicycle_rollout_nb,
        "sample_rollout_batch": _sample_rollout_nb,
        "feedback_rollout_batch": _feedback_rollout_nb,
        "track_locate_batch": _track_locate_nb,
    }

_active = impls[BACKEND]
bicycle_rollout_batch = _active["bicycle_rollout_batch"]
sample_rollout_batch = _active["sample_rollout_batch"]
feedback_rollout_batch = _active["feedback_rollout_batch"]
track_locate_batch = _active["track_locate_batch"]

NO_LIMITS = (
    np.array([-np.inf, -np.inf]),
    np.array([np.inf, np.inf]),
)

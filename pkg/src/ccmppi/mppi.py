"""Baseline MPPI: sample noisy control sequences, roll them out, score them,
and update the mean control sequence by exponentially weighted averaging."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import DiscreteDynamics
from .kernels import sample_rollout_batch

# Batch cost callables: rows of states (..., n_x) -> costs (...,)
StateCost = Callable[[np.ndarray], np.ndarray]
TerminalCost = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MppiParams:
    """Sampling controller parameters.

    nu is the ratio between injected and inherent model noise covariance;
    the default (infinity) drops the 1/nu correction from the running cost.
    alpha is the fraction of samples rolled out with zero mean control.
    control_limits, when set, clip sampled and executed controls
    componentwise (lo, hi).
    """

    N: int = 15
    M: int = 4096
    lam: float = 1.0
    alpha: float = 0.2
    nu: float = math.inf
    R: np.ndarray = None
    sigma_eps: np.ndarray = None
    control_limits: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        if self.N < 1 or self.M < 1:
            raise ValueError("horizon N and sample count M must be >= 1")
        if self.lam <= 0:
            raise ValueError("temperature lam must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("uncontrolled fraction alpha must lie in [0, 1]")
        if self.nu < 1.0:
            raise ValueError("noise ratio nu must be >= 1")
        R = np.asarray(self.R if self.R is not None else 0.01 * np.eye(2), dtype=np.float64)
        sig = np.asarray(
            self.sigma_eps if self.sigma_eps is not None else np.eye(R.shape[0]),
            dtype=np.float64,
        )
        for name, m in (("R", R), ("sigma_eps", sig)):
            if not np.allclose(m, m.T):
                raise ValueError(f"{name} must be symmetric")
            try:
                np.linalg.cholesky(m)
            except np.linalg.LinAlgError:
                raise ValueError(f"{name} must be positive definite") from None
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "sigma_eps", sig)
        if self.control_limits is not None:
            lo = np.asarray(self.control_limits[0], dtype=np.float64)
            hi = np.asarray(self.control_limits[1], dtype=np.float64)
            if lo.shape != (self.n_u,) or hi.shape != (self.n_u,):
                raise ValueError("control limits must be (lo, hi) of length n_u")
            object.__setattr__(self, "control_limits", (lo, hi))

    @property
    def n_u(self) -> int:
        return self.R.shape[0]

    @property
    def nu_inv(self) -> float:
        return 0.0 if math.isinf(self.nu) else 1.0 / self.nu

    @property
    def n_controlled(self) -> int:
        """Samples using the mean control; the other ceil(alpha*M) use zero."""
        return self.M - math.ceil(self.alpha * self.M)

    def limit_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if self.control_limits is None:
            n = self.n_u
            return np.full(n, -np.inf), np.full(n, np.inf)
        return self.control_limits


@dataclass(frozen=True)
class SampleBatch:
    """One iteration's worth of sampled rollouts."""

    noises: np.ndarray  # (M, N, n_u) injected noise draws
    controls: np.ndarray  # (M, N, n_u) realized controls u
    mean_parts: np.ndarray  # (M, N, n_u) disturbance-free part v of each control
    states: np.ndarray  # (M, N+1, n_x)
    costs: np.ndarray  # (M,)
    n_controlled: int

    @property
    def M(self) -> int:
        return self.noises.shape[0]

    @property
    def N(self) -> int:
        return self.noises.shape[1]


@dataclass(frozen=True)
class IterationDiagnostics:
    min_cost: float
    mean_cost: float
    ess: float  # effective sample size (sum w)^2 / sum w^2
    batch: SampleBatch


def noise_stream(seed: int, iteration: int) -> np.random.Generator:
    """Deterministic counter-based stream for one controller iteration.

    Keyed by (seed, iteration); each sample's draws occupy a fixed block of
    the counter sequence, so results do not depend on evaluation order.
    """
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(iteration)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_noise(params: MppiParams, rng: np.random.Generator) -> np.ndarray:
    """Draw (M, N, n_u) zero-mean Gaussian noise with covariance sigma_eps."""
    try:
        chol = np.linalg.cholesky(params.sigma_eps)
    except np.linalg.LinAlgError:
        raise ValueError("sigma_eps admits no Cholesky factor") from None
    z = rng.standard_normal((params.M, params.N, params.n_u))
    return z @ chol.T


def running_cost(
    x: np.ndarray,
    v: np.ndarray,
    eps: np.ndarray,
    params: MppiParams,
    state_cost: StateCost,
) -> float:
    """Per-step cost: q(x) + (1-1/nu)/2 eps'R eps + v'R eps + 1/2 v'R v."""
    R = params.R
    q = float(np.asarray(state_cost(np.asarray(x)[None, :]))[0])
    quad_eps = 0.5 * (1.0 - params.nu_inv) * float(eps @ R @ eps)
    cross = float(v @ R @ eps)
    quad_v = 0.5 * float(v @ R @ v)
    return q + quad_eps + cross + quad_v


def trajectory_cost(
    states: np.ndarray,
    v_seq: np.ndarray,
    eps_seq: np.ndarray,
    params: MppiParams,
    state_cost: StateCost,
    terminal_cost: TerminalCost,
) -> float:
    """Terminal cost plus the sum of the N running costs."""
    states = np.asarray(states, dtype=np.float64)
    v_seq = np.asarray(v_seq, dtype=np.float64)
    eps_seq = np.asarray(eps_seq, dtype=np.float64)
    N = v_seq.shape[0]
    if states.shape[0] != N + 1 or eps_seq.shape[0] != N:
        raise ValueError("states/controls/noise lengths are inconsistent")
    total = float(np.asarray(terminal_cost(states[N][None, :]))[0])
    for k in range(N):
        total += running_cost(states[k], v_seq[k], eps_seq[k], params, state_cost)
    return total


def score_batch(
    states: np.ndarray,
    v: np.ndarray,
    eps: np.ndarray,
    params: MppiParams,
    state_cost: StateCost,
    terminal_cost: TerminalCost,
) -> np.ndarray:
    """Vectorized trajectory costs for a whole batch; matches
    :func:`trajectory_cost` applied per sample."""
    M, N = v.shape[0], v.shape[1]
    R = params.R
    q = state_cost(states[:, :N].reshape(M * N, -1)).reshape(M, N)
    eR = eps @ R
    quad_eps = 0.5 * (1.0 - params.nu_inv) * np.einsum("mki,mki->mk", eps, eR)
    cross = np.einsum("mki,mki->mk", v, eR)
    vR = v @ R
    quad_v = 0.5 * np.einsum("mki,mki->mk", v, vR)
    total = (q + quad_eps + cross + quad_v).sum(axis=1)
    return total + terminal_cost(states[:, N])


def weights(costs: np.ndarray, lam: float) -> np.ndarray:
    """Exponential weights exp(-(S - min S)/lam); the best sample gets 1."""
    costs = np.asarray(costs, dtype=np.float64)
    bad = ~np.isfinite(costs)
    if bad.any():
        raise ValueError(f"non-finite trajectory cost at sample {int(np.argmax(bad))}")
    beta = costs.min()
    return np.exp(-(costs - beta) / lam)


def update_mean(batch: SampleBatch, w: np.ndarray) -> np.ndarray:
    """Weighted average of the sampled control sequences, (N, n_u)."""
    total = float(np.sum(w))
    if not total > 0.0:
        raise ValueError("all sample weights are zero")
    return np.einsum("m,mki->ki", w, batch.controls) / total


def receding_horizon_shift(mean: np.ndarray) -> np.ndarray:
    """Drop the first control, duplicate the last; length is preserved."""
    mean = np.asarray(mean)
    return np.concatenate([mean[1:], mean[-1:]], axis=0)


def mppi_iteration(
    x0: np.ndarray,
    mean: np.ndarray,
    params: MppiParams,
    state_cost: StateCost,
    terminal_cost: TerminalCost,
    dynamics: DiscreteDynamics,
    rng: np.random.Generator,
) -> tuple[np.ndarray, IterationDiagnostics]:
    """One MPPI update of the mean control sequence.

    Samples M noisy sequences around ``mean`` (an alpha-fraction around zero),
    rolls them out through ``dynamics``, scores them, and returns the
    exponentially weighted mean plus diagnostics.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    mean = np.ascontiguousarray(mean, dtype=np.float64)
    if mean.shape != (params.N, params.n_u):
        raise ValueError(f"mean control sequence must have shape {(params.N, params.n_u)}")
    eps = sample_noise(params, rng)
    lo, hi = params.limit_arrays()

    from .dynamics import BicycleModel

    if isinstance(dynamics, BicycleModel):
        p = dynamics.params
        states, u, v = sample_rollout_batch(
            x0, mean, eps, params.n_controlled, p.l_f, p.l_r, p.dt, lo, hi
        )
    else:
        v = np.zeros_like(eps)
        v[: params.n_controlled] = mean[None, :, :]
        u = np.clip(v + eps, lo, hi)
        states = dynamics.rollout_batch(x0, u)

    if not np.all(np.isfinite(states)):
        m = int(np.argwhere(~np.isfinite(states).reshape(states.shape[0], -1).all(axis=1))[0])
        raise ValueError(f"rollout produced non-finite states for sample {m}")
    eps_eff = eps if params.control_limits is None else u - v
    costs = score_batch(states, v, eps_eff, params, state_cost, terminal_cost)
    batch = SampleBatch(
        noises=eps,
        controls=u,
        mean_parts=v,
        states=states,
        costs=costs,
        n_controlled=params.n_controlled,
    )
    w = weights(costs, params.lam)
    new_mean = update_mean(batch, w)
    wsum = float(np.sum(w))
    diag = IterationDiagnostics(
        min_cost=float(costs.min()),
        mean_cost=float(costs.mean()),
        ess=wsum * wsum / float(np.sum(w * w)),
        batch=batch,
    )
    return new_mean, diag

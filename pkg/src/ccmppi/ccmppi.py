"""Covariance-controlled MPPI.

Each iteration rolls out the reference, linearizes along it, synthesizes a
feedback gain bounding the terminal dispersion of the sampled trajectories,
then samples closed-loop rollouts (the feedback acts through a noise-driven
auxiliary state, so the sample mean is unbiased) and updates the mean control
sequence exactly as baseline MPPI does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covsteer import (
    AugmentedSystem,
    CovarianceSpec,
    CovCostWeights,
    FeedbackGain,
    GainSolveInfo,
    GainSolveOptions,
    InfeasibleTerminalCovariance,
    build_augmented,
    covariance_cost,
    open_loop_terminal_covariance,
    solve_gain_info,
    terminal_covariance,
    zero_gain,
)
from .dynamics import BicycleModel, DiscreteDynamics, LtvModel
from .kernels import feedback_rollout_batch
from .mppi import (
    IterationDiagnostics,
    MppiParams,
    SampleBatch,
    StateCost,
    TerminalCost,
    sample_noise,
    score_batch,
    update_mean,
    weights,
)


@dataclass(frozen=True)
class CcMppiParams:
    """CC-MPPI parameters: the MPPI core plus the dispersion-control side.

    The terminal bound is either ``sigma_f`` (absolute matrix) or
    ``sigma_f_scale`` (multiple of the open-loop terminal covariance,
    recomputed each iteration from the current linearization). The injected
    noise covariance is mppi.sigma_eps, the single source of truth.
    """

    mppi: MppiParams
    weights: CovCostWeights
    sigma_f: np.ndarray | None = None
    sigma_f_scale: float | None = None
    mode: str = "hard"
    solver: GainSolveOptions = GainSolveOptions()

    def __post_init__(self):
        if (self.sigma_f is None) == (self.sigma_f_scale is None):
            raise ValueError("set exactly one of sigma_f and sigma_f_scale")
        if self.sigma_f is not None:
            sf = np.asarray(self.sigma_f, dtype=np.float64)
            if not np.allclose(sf, sf.T):
                raise ValueError("sigma_f must be symmetric")
            if np.linalg.eigvalsh(sf).min() < -1e-10:
                raise ValueError("sigma_f must be positive semidefinite")
            object.__setattr__(self, "sigma_f", 0.5 * (sf + sf.T))
        if self.sigma_f_scale is not None and self.sigma_f_scale <= 0:
            raise ValueError("sigma_f_scale must be positive")
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"unknown gain mode {self.mode!r}")

    def resolve_sigma_f(self, aug: AugmentedSystem, sigma_eps: np.ndarray) -> np.ndarray:
        if self.sigma_f is not None:
            return self.sigma_f
        probe = CovarianceSpec(sigma_eps=sigma_eps, sigma_f=np.zeros((aug.n_x, aug.n_x)))
        return self.sigma_f_scale * open_loop_terminal_covariance(aug, probe)


@dataclass(frozen=True)
class CcIterationDiagnostics(IterationDiagnostics):
    gain: FeedbackGain = None
    gain_cost: float = 0.0
    predicted_terminal_cov: np.ndarray = None
    sigma_f: np.ndarray = None
    terminal_margin: float = 0.0  # lam_max(predicted - bound); <= tol when met
    soft_fallback: bool = False
    gain_info: GainSolveInfo | None = None
    augmented: AugmentedSystem = None
    cov_spec: CovarianceSpec = None


def closed_loop_sample(
    x0: np.ndarray,
    w: np.ndarray,
    gain: FeedbackGain,
    eps_seq: np.ndarray,
    ltv: LtvModel,
    dynamics: DiscreteDynamics,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Roll one noise sequence through the feedback-corrected controls.

    Returns (states (N+1, n_x), aux states y (N+1, n_x), controls u (N, n_u)).
    The auxiliary state starts at zero and follows the linearized dynamics
    driven by the noise alone, so with zero noise u equals w exactly.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    eps_seq = np.asarray(eps_seq, dtype=np.float64)
    N = w.shape[0]
    if eps_seq.shape[0] != N or gain.blocks.shape[0] != N or ltv.horizon != N:
        raise ValueError("horizon mismatch between controls, noise, gain, and model")
    n_x = ltv.n_x
    states = np.empty((N + 1, x0.shape[0]))
    ys = np.zeros((N + 1, n_x))
    us = np.empty((N, w.shape[1]))
    states[0] = x0
    for k in range(N):
        us[k] = w[k] + eps_seq[k] + gain.blocks[k] @ ys[k]
        states[k + 1] = dynamics.step_array(states[k], us[k])
        ys[k + 1] = ltv.A[k] @ ys[k] + ltv.B[k] @ eps_seq[k]
    return states, ys, us


def _generic_feedback_rollout(dynamics, x0, w, K, A, B, eps, n_controlled, lo, hi):
    """Fallback closed-loop batch rollout for non-bicycle dynamics."""
    M, N = eps.shape[0], eps.shape[1]
    n_x = A.shape[1]
    states = np.empty((M, N + 1, dynamics.n_x))
    states[:, 0] = x0
    y = np.zeros((M, N + 1, n_x))
    u = np.empty((M, N, dynamics.n_u))
    v = np.zeros((M, N, dynamics.n_u))
    for k in range(N):
        v[:n_controlled, k] = w[k][None, :] + y[:n_controlled, k] @ K[k].T
        u[:, k] = np.clip(v[:, k] + eps[:, k], lo, hi)
        for m in range(M):
            states[m, k + 1] = dynamics.step_array(states[m, k], u[m, k])
        y[:, k + 1] = y[:, k] @ A[k].T + eps[:, k] @ B[k].T
    return states, u, v, y


def ccmppi_iteration(
    x0: np.ndarray,
    mean: np.ndarray,
    params: CcMppiParams,
    state_cost: StateCost,
    terminal_cost: TerminalCost,
    dynamics: DiscreteDynamics,
    rng: np.random.Generator,
    gain_warm_start: FeedbackGain | None = None,
    multiplier_warm_start: np.ndarray | None = None,
    gain_override: FeedbackGain | None = None,
) -> tuple[np.ndarray, CcIterationDiagnostics]:
    """One CC-MPPI update of the mean control sequence.

    Rolls out the reference (x0, mean) through the nonlinear dynamics,
    linearizes along it, synthesizes the feedback gain for the terminal
    covariance bound, then samples closed-loop rollouts: controlled samples
    use v_k = w_k + K_k y_k, the uncontrolled fraction v_k = 0, and every
    sample applies u_k = v_k + eps_k to the nonlinear model. The weighted
    mean over the realized controls becomes the next mean sequence.

    In hard mode an infeasible bound falls back to the soft solve for this
    iteration and flags it in the diagnostics. ``gain_override`` skips the
    synthesis entirely (testing/analysis hook).
    """
    mp = params.mppi
    x0 = np.asarray(x0, dtype=np.float64)
    mean = np.ascontiguousarray(mean, dtype=np.float64)
    if mean.shape != (mp.N, mp.n_u):
        raise ValueError(f"mean control sequence must have shape {(mp.N, mp.n_u)}")

    ref_states = dynamics.rollout_array(x0, mean)
    ltv = dynamics.linearize_along(ref_states, mean)
    aug = build_augmented(ltv)
    sigma_f = params.resolve_sigma_f(aug, mp.sigma_eps)
    cov_spec = CovarianceSpec(sigma_eps=mp.sigma_eps, sigma_f=sigma_f)

    soft_fallback = False
    info = None
    if gain_override is not None:
        gain = gain_override
    else:
        try:
            gain, info = solve_gain_info(
                aug,
                cov_spec,
                params.weights,
                mode=params.mode,
                options=params.solver,
                warm_start=gain_warm_start,
                warm_multiplier=multiplier_warm_start,
            )
        except InfeasibleTerminalCovariance:
            soft_fallback = True
            gain, info = solve_gain_info(
                aug,
                cov_spec,
                params.weights,
                mode="soft",
                options=params.solver,
                warm_start=gain_warm_start,
            )

    eps = sample_noise(mp, rng)
    lo, hi = mp.limit_arrays()
    if isinstance(dynamics, BicycleModel):
        p = dynamics.params
        states, u, v, _ = feedback_rollout_batch(
            x0, mean, gain.blocks, ltv.A, ltv.B, eps,
            mp.n_controlled, p.l_f, p.l_r, p.dt, lo, hi,
        )
    else:
        states, u, v, _ = _generic_feedback_rollout(
            dynamics, x0, mean, gain.blocks, ltv.A, ltv.B, eps, mp.n_controlled, lo, hi
        )
    if not np.all(np.isfinite(states)):
        m = int(np.argwhere(~np.isfinite(states).reshape(states.shape[0], -1).all(axis=1))[0])
        raise ValueError(f"rollout produced non-finite states for sample {m}")

    eps_eff = eps if mp.control_limits is None else u - v
    costs = score_batch(states, v, eps_eff, mp, state_cost, terminal_cost)
    batch = SampleBatch(
        noises=eps,
        controls=u,
        mean_parts=v,
        states=states,
        costs=costs,
        n_controlled=mp.n_controlled,
    )
    w = weights(costs, mp.lam)
    new_mean = update_mean(batch, w)

    predicted = terminal_covariance(aug, gain, cov_spec)
    wsum = float(np.sum(w))
    diag = CcIterationDiagnostics(
        min_cost=float(costs.min()),
        mean_cost=float(costs.mean()),
        ess=wsum * wsum / float(np.sum(w * w)),
        batch=batch,
        gain=gain,
        gain_cost=covariance_cost(aug, gain, cov_spec, params.weights),
        predicted_terminal_cov=predicted,
        sigma_f=sigma_f,
        terminal_margin=float(np.linalg.eigvalsh(predicted - sigma_f).max()),
        soft_fallback=soft_fallback,
        gain_info=info,
        augmented=aug,
        cov_spec=cov_spec,
    )
    return new_mean, diag


@dataclass(frozen=True)
class DispersionReport:
    """Analytic vs empirical terminal dispersion of the controlled samples."""

    analytic: np.ndarray
    empirical: np.ndarray
    frobenius_rel_gap: float


def predicted_vs_empirical_report(
    aug: AugmentedSystem,
    gain: FeedbackGain,
    spec: CovarianceSpec,
    batch: SampleBatch,
) -> DispersionReport:
    """Compare the linearized terminal covariance against the nonlinear batch.

    The gap quantifies linearization error; it is reported, not asserted.
    """
    if batch.n_controlled < 2:
        raise ValueError("sample covariance undefined with fewer than 2 controlled samples")
    analytic = terminal_covariance(aug, gain, spec)
    terminal = batch.states[: batch.n_controlled, -1, :]
    centered = terminal - terminal.mean(axis=0)
    empirical = centered.T @ centered / (terminal.shape[0] - 1)
    denom = max(float(np.linalg.norm(analytic)), 1e-300)
    gap = float(np.linalg.norm(empirical - analytic)) / denom
    return DispersionReport(analytic=analytic, empirical=empirical, frobenius_rel_gap=gap)

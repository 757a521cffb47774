"""Covariance steering for the sampled trajectory distribution.

Stacks the per-step LTV model into block matrices over the whole horizon and
synthesizes a per-step feedback gain that minimizes a quadratic dispersion
cost subject to a terminal covariance bound (positive-semidefinite order).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .dynamics import LtvModel


class GainSynthesisError(RuntimeError):
    """Gain synthesis failed (validation or infeasibility)."""


class InfeasibleTerminalCovariance(GainSynthesisError):
    """No block-diagonal gain found meeting the terminal covariance bound.

    Carries the best achieved terminal covariance in ``achieved``.
    """

    def __init__(self, message: str, achieved: np.ndarray):
        super().__init__(message)
        self.achieved = achieved


def _check_symmetric(name: str, m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.allclose(m, m.T, atol=1e-10, rtol=1e-8):
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (m + m.T)


def _check_psd(name: str, m: np.ndarray) -> np.ndarray:
    m = _check_symmetric(name, m)
    if np.linalg.eigvalsh(m).min() < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite")
    return m


def _check_pd(name: str, m: np.ndarray) -> np.ndarray:
    m = _check_symmetric(name, m)
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return m


@dataclass(frozen=True)
class CovarianceSpec:
    """Injected-noise covariance and the terminal covariance bound.

    sigma_eps must be PSD here so degenerate (zero-noise) systems remain
    expressible; drawing samples additionally requires it to be positive
    definite (see :func:`ccmppi.mppi.sample_noise`).
    """

    sigma_eps: np.ndarray  # (n_u, n_u)
    sigma_f: np.ndarray  # (n_x, n_x)

    def __post_init__(self):
        object.__setattr__(self, "sigma_eps", _check_psd("sigma_eps", self.sigma_eps))
        object.__setattr__(self, "sigma_f", _check_psd("sigma_f", self.sigma_f))


@dataclass(frozen=True)
class CovCostWeights:
    """Running/terminal state weights and control weight of the dispersion cost."""

    Q: np.ndarray  # (n_x, n_x), PSD
    Q_f: np.ndarray  # (n_x, n_x), PSD
    R: np.ndarray  # (n_u, n_u), PD

    def __post_init__(self):
        object.__setattr__(self, "Q", _check_psd("Q", self.Q))
        object.__setattr__(self, "Q_f", _check_psd("Q_f", self.Q_f))
        object.__setattr__(self, "R", _check_pd("R", self.R))


@dataclass(frozen=True)
class FeedbackGain:
    """Per-step gains K_k (n_u x n_x); the stacked form is block-diagonal with
    a zero block column for the final auxiliary state."""

    blocks: np.ndarray  # (N, n_u, n_x)

    def __post_init__(self):
        blocks = np.asarray(self.blocks, dtype=np.float64)
        if blocks.ndim != 3:
            raise ValueError("gain blocks must be a (N, n_u, n_x) array")
        if not np.all(np.isfinite(blocks)):
            raise ValueError("gain blocks contain non-finite entries")
        object.__setattr__(self, "blocks", blocks)

    @property
    def horizon(self) -> int:
        return self.blocks.shape[0]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.blocks)


def zero_gain(N: int, n_u: int, n_x: int) -> FeedbackGain:
    return FeedbackGain(np.zeros((N, n_u, n_x)))


@dataclass(frozen=True)
class AugmentedSystem:
    """Whole-horizon stacked form of the LTV recursion.

    The stacked trajectory [x_0; ...; x_N] of x_{k+1} = A_k x_k + B_k u_k + d_k
    equals calA @ x0 + calB @ u_stack + calC @ d_stack. The first block row of
    calA is the identity; calB and calC are block lower-triangular with zero
    first block rows.
    """

    calA: np.ndarray  # (n_x*(N+1), n_x)
    calB: np.ndarray  # (n_x*(N+1), n_u*N)
    calC: np.ndarray  # (n_x*(N+1), n_x*N)
    d_stack: np.ndarray  # (n_x*N,)
    N: int
    n_x: int
    n_u: int

    @property
    def terminal_rows(self) -> slice:
        return slice(self.n_x * self.N, self.n_x * (self.N + 1))

    def noise_block(self) -> np.ndarray:
        """calB restricted to the terminal block row (maps noise to x_N)."""
        return self.calB[self.terminal_rows]

    def stack_gain(self, gain: FeedbackGain) -> np.ndarray:
        """Assemble the (n_u*N, n_x*(N+1)) block-diagonal stacked gain."""
        N, n_x, n_u = self.N, self.n_x, self.n_u
        if gain.blocks.shape != (N, n_u, n_x):
            raise ValueError(
                f"gain blocks shape {gain.blocks.shape} does not match "
                f"system ({N}, {n_u}, {n_x})"
            )
        K = np.zeros((n_u * N, n_x * (N + 1)))
        view = K.reshape(N, n_u, N + 1, n_x)
        idx = np.arange(N)
        view[idx, :, idx, :] = gain.blocks
        return K

    def take_blocks(self, full: np.ndarray) -> np.ndarray:
        """Extract the block-diagonal (N, n_u, n_x) part of a stacked matrix."""
        view = full.reshape(self.N, self.n_u, self.N + 1, self.n_x)
        idx = np.arange(self.N)
        return view[idx, :, idx, :]


def build_augmented(ltv: LtvModel) -> AugmentedSystem:
    """Stack an LTV model into the compact whole-horizon form."""
    N, n_x, n_u = ltv.horizon, ltv.n_x, ltv.n_u
    if N < 1:
        raise ValueError("need a horizon of at least one step")
    calA = np.zeros((n_x * (N + 1), n_x))
    calB = np.zeros((n_x * (N + 1), n_u * N))
    calC = np.zeros((n_x * (N + 1), n_x * N))
    calA[:n_x] = np.eye(n_x)
    for k in range(N):
        rows_prev = slice(n_x * k, n_x * (k + 1))
        rows_next = slice(n_x * (k + 1), n_x * (k + 2))
        Ak = ltv.A[k]
        calA[rows_next] = Ak @ calA[rows_prev]
        calB[rows_next] = Ak @ calB[rows_prev]
        calB[rows_next, n_u * k : n_u * (k + 1)] = ltv.B[k]
        calC[rows_next] = Ak @ calC[rows_prev]
        calC[rows_next, n_x * k : n_x * (k + 1)] = np.eye(n_x)
    return AugmentedSystem(
        calA=calA,
        calB=calB,
        calC=calC,
        d_stack=ltv.d.reshape(-1).copy(),
        N=N,
        n_x=n_x,
        n_u=n_u,
    )


def mean_trajectory(aug: AugmentedSystem, x0: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stacked deterministic mean; independent of any feedback gain."""
    x0 = np.asarray(x0, dtype=np.float64).reshape(aug.n_x)
    w = np.asarray(w, dtype=np.float64).reshape(aug.n_u * aug.N)
    return aug.calA @ x0 + aug.calB @ w + aug.calC @ aug.d_stack


def _noise_blkdiag(aug: AugmentedSystem, spec: CovarianceSpec) -> np.ndarray:
    return np.kron(np.eye(aug.N), spec.sigma_eps)


def terminal_covariance(
    aug: AugmentedSystem, gain: FeedbackGain, spec: CovarianceSpec
) -> np.ndarray:
    """Closed-loop terminal state covariance of the linearized system."""
    Sbar = _noise_blkdiag(aug, spec)
    Kst = aug.stack_gain(gain)
    Bn = aug.noise_block()
    T = Bn + Bn @ (Kst @ aug.calB)
    cov = T @ Sbar @ T.T
    return 0.5 * (cov + cov.T)


def open_loop_terminal_covariance(aug: AugmentedSystem, spec: CovarianceSpec) -> np.ndarray:
    """Terminal covariance of uncorrected sampling (zero gain)."""
    Sbar = _noise_blkdiag(aug, spec)
    Bn = aug.noise_block()
    cov = Bn @ Sbar @ Bn.T
    return 0.5 * (cov + cov.T)


def covariance_cost(
    aug: AugmentedSystem,
    gain: FeedbackGain,
    spec: CovarianceSpec,
    weights: CovCostWeights,
) -> float:
    """Scalar trace cost of the closed-loop dispersion (always >= 0)."""
    Sbar = _noise_blkdiag(aug, spec)
    Qbar = _state_weight(aug, weights.Q, weights.Q_f)
    Rbar = np.kron(np.eye(aug.N), weights.R)
    Kst = aug.stack_gain(gain)
    Z = aug.calB + aug.calB @ (Kst @ aug.calB)  # (I + calB K) calB
    Y = Kst @ aug.calB
    return float(np.trace(Qbar @ Z @ Sbar @ Z.T) + np.trace(Rbar @ Y @ Sbar @ Y.T))


def covariance_cost_grad(
    aug: AugmentedSystem,
    gain: FeedbackGain,
    spec: CovarianceSpec,
    weights: CovCostWeights,
) -> np.ndarray:
    """Gradient of :func:`covariance_cost` w.r.t. the gain blocks, (N, n_u, n_x)."""
    ctx = _QuadContext(aug, spec, weights.Q, weights.R)
    M, lin = ctx.with_terminal(weights.Q_f)
    return 2.0 * (aug.take_blocks(lin) + ctx.apply(M, gain.blocks))


def _state_weight(aug: AugmentedSystem, Q: np.ndarray, Q_f: np.ndarray) -> np.ndarray:
    n_x, N = aug.n_x, aug.N
    Qbar = np.zeros((n_x * (N + 1), n_x * (N + 1)))
    for k in range(N):
        Qbar[n_x * k : n_x * (k + 1), n_x * k : n_x * (k + 1)] = Q
    Qbar[n_x * N :, n_x * N :] = Q_f
    return Qbar


class _QuadContext:
    """Precomputed pieces of the dispersion cost quadratic in the gain blocks.

    For terminal weight W the gradient of the cost at stacked gain K is
    2 * (lin(W) + M(W) @ K @ S) projected onto the block-diagonal support,
    where S is the stacked noise-state covariance. The quadratic lives in the
    tiny space of free block entries (N * n_u * n_x), so it is solved either
    directly from the assembled dense Hessian or by preconditioned CG.
    """

    def __init__(self, aug: AugmentedSystem, spec: CovarianceSpec, Q: np.ndarray, R: np.ndarray):
        self.aug = aug
        Sbar = _noise_blkdiag(aug, spec)
        S = aug.calB @ Sbar @ aug.calB.T
        self.S = 0.5 * (S + S.T)
        self.Sbar = Sbar
        self.Bn = aug.noise_block()
        N, n_x, n_u = aug.N, aug.n_x, aug.n_u
        self.dim = N * n_u * n_x
        Q0 = _state_weight(aug, Q, np.zeros((n_x, n_x)))
        self.M_base = aug.calB.T @ Q0 @ aug.calB + np.kron(np.eye(N), R)
        self.lin_base = aug.calB.T @ Q0 @ self.S
        self.S_term_rows = self.S[aug.terminal_rows]
        self.S4 = np.ascontiguousarray(
            self.S[: n_x * N, : n_x * N].reshape(N, n_x, N, n_x)
        )
        # per-step diagonal blocks of S, used by the CG preconditioner
        self.S_diag = np.stack(
            [self.S[n_x * k : n_x * (k + 1), n_x * k : n_x * (k + 1)] for k in range(N)]
        )

    def with_terminal(self, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        M = self.M_base + self.Bn.T @ W @ self.Bn
        lin = self.lin_base + self.Bn.T @ (W @ self.S_term_rows)
        return M, lin

    def apply(self, M: np.ndarray, blocks: np.ndarray) -> np.ndarray:
        """Block-projected M @ K @ S for block-diagonal K."""
        Kst = self.aug.stack_gain(FeedbackGain(blocks))
        return self.aug.take_blocks(M @ Kst @ self.S)

    def hessian(self, M: np.ndarray) -> np.ndarray:
        """Dense Hessian (up to the factor 2) of the quadratic on the blocks."""
        N, n_u = self.aug.N, self.aug.n_u
        M4 = M.reshape(N, n_u, N, n_u)
        H = np.einsum("kalc,ldkb->kablcd", M4, self.S4)
        return H.reshape(self.dim, self.dim)

    def solve_direct(self, W: np.ndarray) -> tuple[np.ndarray, float]:
        """Minimize the quadratic by a regularized dense solve."""
        aug = self.aug
        M, lin = self.with_terminal(W)
        H = self.hessian(M)
        g = aug.take_blocks(lin).reshape(self.dim)
        # flat directions (zero rows from the noise-free first steps) carry a
        # zero gradient; a tiny ridge keeps the factorization well posed
        reg = 1e-12 * max(float(H.diagonal().max()), 1.0)
        x = np.linalg.solve(H + reg * np.eye(self.dim), -g)
        blocks = x.reshape(aug.N, aug.n_u, aug.n_x)
        grad = 2.0 * (g + H @ x)
        return blocks, float(np.linalg.norm(grad))

    def solve_cg(
        self,
        W: np.ndarray,
        x0: np.ndarray | None,
        tol: float,
        max_iter: int,
    ) -> tuple[np.ndarray, float]:
        """Minimize the quadratic by preconditioned conjugate gradient.

        Returns (blocks, final_gradient_norm); the gradient of the cost is
        2*(lin + M K S) restricted to the block support.
        """
        aug = self.aug
        M, lin = self.with_terminal(W)
        rhs = -aug.take_blocks(lin)
        x = np.zeros((aug.N, aug.n_u, aug.n_x)) if x0 is None else x0.copy()
        pre = self._preconditioner(M)

        r = rhs - self.apply(M, x)
        z = pre(r)
        p = z.copy()
        rz = float(np.sum(r * z))
        grad_norm = 2.0 * float(np.linalg.norm(r))
        for _ in range(max_iter):
            if grad_norm <= tol:
                break
            Ap = self.apply(M, p)
            pAp = float(np.sum(p * Ap))
            if pAp <= 0.0:
                # flat direction: stop at the current minimizer
                break
            alpha = rz / pAp
            x = x + alpha * p
            r = r - alpha * Ap
            grad_norm = 2.0 * float(np.linalg.norm(r))
            z = pre(r)
            rz_new = float(np.sum(r * z))
            p = z + (rz_new / rz) * p
            rz = rz_new
        return x, grad_norm

    def _preconditioner(self, M: np.ndarray):
        """Per-block solve with the diagonal blocks of M and S (regularized)."""
        aug = self.aug
        N, n_u, n_x = aug.N, aug.n_u, aug.n_x
        M_inv = np.empty((N, n_u, n_u))
        S_inv = np.empty((N, n_x, n_x))
        for k in range(N):
            Mk = M[n_u * k : n_u * (k + 1), n_u * k : n_u * (k + 1)]
            Sk = self.S_diag[k]
            M_inv[k] = np.linalg.inv(Mk + 1e-12 * (np.trace(Mk) + 1.0) * np.eye(n_u))
            S_inv[k] = np.linalg.inv(Sk + 1e-12 * (np.trace(Sk) + 1.0) * np.eye(n_x))

        def apply_pre(resid: np.ndarray) -> np.ndarray:
            return np.einsum("kab,kbc,kcd->kad", M_inv, resid, S_inv)

        return apply_pre

    def solve_quadratic(
        self,
        W: np.ndarray,
        x0: np.ndarray | None,
        opts: "GainSolveOptions",
    ) -> tuple[np.ndarray, float]:
        if opts.method == "cg":
            return self.solve_cg(W, x0, opts.cg_tol, opts.cg_max_iter)
        return self.solve_direct(W)

    def terminal_cov(self, blocks: np.ndarray) -> np.ndarray:
        Kst = self.aug.stack_gain(FeedbackGain(blocks))
        T = self.Bn + self.Bn @ (Kst @ self.aug.calB)
        cov = T @ self.Sbar @ T.T
        return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class GainSolveOptions:
    """Tolerances and iteration budgets of the gain solver.

    method "direct" assembles the dense Hessian of the tiny quadratic and
    factorizes it; "cg" runs preconditioned conjugate gradient with the
    analytic gradient instead (slower, kept as a cross-check).
    """

    feas_tol: float = 1e-6
    method: str = "direct"
    cg_tol: float = 1e-8
    cg_max_iter: int = 500
    mu_initial: float = 1.0
    mu_growth: float = 10.0
    mu_max: float = 1e8
    bracket_iters: int = 30
    polish_iters: int = 80


@dataclass
class GainSolveInfo:
    mode: str
    feasible: bool
    violation: float
    cost: float
    mu_final: float = 1.0
    polish_steps: int = 0
    cg_grad_norm: float = 0.0
    multiplier: np.ndarray | None = None  # PSD multiplier of the bound; a warm
    # start for the next solve of a slowly varying problem
    warm_path: bool = False


def _lam_max(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (m + m.T)).max())


def _psd_project(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    vals = np.maximum(vals, 0.0)
    return (vecs * vals) @ vecs.T


def solve_gain(
    aug: AugmentedSystem,
    spec: CovarianceSpec,
    weights: CovCostWeights,
    mode: str = "hard",
    options: GainSolveOptions | None = None,
    warm_start: FeedbackGain | None = None,
) -> FeedbackGain:
    """Synthesize the feedback gain; see :func:`solve_gain_info` for details."""
    gain, _ = solve_gain_info(aug, spec, weights, mode, options, warm_start)
    return gain


def solve_gain_info(
    aug: AugmentedSystem,
    spec: CovarianceSpec,
    weights: CovCostWeights,
    mode: str = "hard",
    options: GainSolveOptions | None = None,
    warm_start: FeedbackGain | None = None,
    warm_multiplier: np.ndarray | None = None,
) -> tuple[FeedbackGain, GainSolveInfo]:
    """Minimize the dispersion cost over block-diagonal gains.

    Soft mode folds the terminal weight into the quadratic and solves it
    unconstrained. Hard mode enforces the terminal covariance bound: penalty
    continuation on the scaled terminal weight brackets a feasible gain, then
    projected-gradient ascent on the PSD multiplier of the bound polishes the
    cost while feasibility is retained. A warm multiplier from a previous,
    nearby problem skips the continuation entirely when it still yields a
    feasible gain.

    Args:
        aug: stacked system.
        spec: noise covariance and terminal bound.
        weights: dispersion cost weights.
        mode: "hard" or "soft".
        options: solver tolerances/budgets.
        warm_start: previous gain, used by the CG quadratic solver.
        warm_multiplier: previous PSD multiplier of the terminal bound.

    Returns:
        (gain, info) where info carries feasibility, violation, cost, and the
        final multiplier.

    Raises:
        InfeasibleTerminalCovariance: hard mode, after the continuation
            schedule is exhausted; carries the achieved terminal covariance.
    """
    opts = options or GainSolveOptions()
    if mode not in ("hard", "soft"):
        raise ValueError(f"unknown gain solver mode {mode!r}")
    if opts.method not in ("direct", "cg"):
        raise ValueError(f"unknown quadratic solver method {opts.method!r}")
    n_x, n_u, N = aug.n_x, aug.n_u, aug.N
    if spec.sigma_eps.shape != (n_u, n_u):
        raise ValueError("sigma_eps dimension does not match the system input")
    if spec.sigma_f.shape != (n_x, n_x):
        raise ValueError("sigma_f dimension does not match the system state")

    ctx = _QuadContext(aug, spec, weights.Q, weights.R)
    x0 = warm_start.blocks if warm_start is not None else None

    # cost with the plain terminal weight, evaluated from precomputed pieces
    M_b, lin_b = ctx.with_terminal(weights.Q_f)
    He_b = ctx.hessian(M_b)
    g_b = aug.take_blocks(lin_b).reshape(ctx.dim)
    S_NN = ctx.S[aug.terminal_rows, :][:, aug.terminal_rows]
    const_b = float(np.einsum("ij,kij->", weights.Q, ctx.S_diag)) + float(
        np.sum(weights.Q_f * S_NN)
    )

    def base_cost(blocks: np.ndarray) -> float:
        vec = blocks.reshape(ctx.dim)
        return float(vec @ (He_b @ vec) + 2.0 * (g_b @ vec) + const_b)

    if mode == "soft":
        blocks, grad_norm = ctx.solve_quadratic(weights.Q_f, x0, opts)
        cov = ctx.terminal_cov(blocks)
        info = GainSolveInfo(
            mode="soft",
            feasible=bool(_lam_max(cov - spec.sigma_f) <= opts.feas_tol),
            violation=_lam_max(cov - spec.sigma_f),
            cost=base_cost(blocks),
            cg_grad_norm=grad_norm,
        )
        return FeedbackGain(blocks), info

    def solve_with_multiplier(lam_mat: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        blks, _ = ctx.solve_quadratic(weights.Q_f + lam_mat, x0, opts)
        V = ctx.terminal_cov(blks) - spec.sigma_f
        return blks, V, _lam_max(V)

    def bb_polish(lam: np.ndarray, best: tuple[np.ndarray, float] | None, iters: int):
        """Projected multiplier ascent with Barzilai-Borwein steps; tracks the
        best feasible iterate and returns it with the matching multiplier."""
        best_lam = lam if best is not None else None
        prev_lam = None
        prev_V = None
        blocks = np.zeros((N, n_u, n_x))
        step = 0.0
        t_ref = None
        steps_used = 0
        for it in range(iters):
            blocks, V, violation = solve_with_multiplier(lam)
            cost = base_cost(blocks)
            if violation <= opts.feas_tol and (best is None or cost < best[1]):
                best = (blocks.copy(), cost)
                best_lam = lam.copy()
            comp = abs(float(np.sum(lam * V)))
            steps_used = it + 1
            if violation <= opts.feas_tol and comp <= 1e-10 * (1.0 + abs(cost)):
                break
            if prev_lam is None:
                step = 0.25 * (float(np.trace(lam)) + 1.0) / (float(np.linalg.norm(V)) + 1e-300)
                t_ref = step
            else:
                dlam = lam - prev_lam
                dV = V - prev_V
                denom = -float(np.sum(dlam * dV))  # >= 0 by concavity of the dual
                if denom > 1e-300:
                    step = float(np.sum(dlam * dlam)) / denom
                else:
                    step *= 2.0
                step = min(max(step, 1e-8 * t_ref), 1e8 * t_ref)
            prev_lam, prev_V = lam, V
            lam = _psd_project(lam + step * V)
        return best, best_lam, blocks, steps_used

    def finish(best, best_lam, last_blocks, steps_used, mu_final, warm_path):
        best_blocks, best_cost = best
        # the last iterate may sit slightly outside the bound; pull it back
        # along the segment to the best feasible gain (a convex set)
        if _lam_max(ctx.terminal_cov(last_blocks) - spec.sigma_f) > opts.feas_tol:
            lo, hi = 0.0, 1.0
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                cand = last_blocks + mid * (best_blocks - last_blocks)
                if _lam_max(ctx.terminal_cov(cand) - spec.sigma_f) <= opts.feas_tol:
                    hi = mid
                else:
                    lo = mid
            cand = last_blocks + hi * (best_blocks - last_blocks)
            cand_cost = base_cost(cand)
            if cand_cost < best_cost and _lam_max(ctx.terminal_cov(cand) - spec.sigma_f) <= opts.feas_tol:
                best_blocks, best_cost = cand, cand_cost
        cov = ctx.terminal_cov(best_blocks)
        info = GainSolveInfo(
            mode="hard",
            feasible=True,
            violation=_lam_max(cov - spec.sigma_f),
            cost=best_cost,
            mu_final=mu_final,
            polish_steps=steps_used,
            multiplier=best_lam,
            warm_path=warm_path,
        )
        return FeedbackGain(best_blocks), info

    # fast path: a multiplier from a nearby problem often stays feasible
    if warm_multiplier is not None:
        lam0 = _psd_project(np.asarray(warm_multiplier, dtype=np.float64))
        best, best_lam, last_blocks, steps_used = bb_polish(lam0, None, opts.polish_iters)
        if best is not None:
            return finish(best, best_lam, last_blocks, steps_used, opts.mu_initial, True)

    # unconstrained minimizer; if it already meets the bound it is optimal
    blocks, grad_norm = ctx.solve_quadratic(weights.Q_f, x0, opts)
    cov = ctx.terminal_cov(blocks)
    violation = _lam_max(cov - spec.sigma_f)
    if violation <= opts.feas_tol:
        info = GainSolveInfo(
            mode="hard",
            feasible=True,
            violation=violation,
            cost=base_cost(blocks),
            mu_final=opts.mu_initial,
            cg_grad_norm=grad_norm,
            multiplier=np.zeros((n_x, n_x)),
        )
        return FeedbackGain(blocks), info

    # penalty direction: the terminal weight itself, or identity if it is zero
    P_dir = weights.Q_f if np.any(weights.Q_f) else np.eye(n_x)

    # geometric continuation on the scaled terminal weight until feasible
    mu = opts.mu_initial
    theta_lo = 0.0
    theta_hi = None
    K_feas = None
    while mu < opts.mu_max:
        mu *= opts.mu_growth
        theta = mu - opts.mu_initial
        blocks, V, violation = solve_with_multiplier(theta * P_dir)
        if violation <= opts.feas_tol:
            theta_hi = theta
            K_feas = blocks
            break
        theta_lo = theta
    if theta_hi is None:
        raise InfeasibleTerminalCovariance(
            "terminal covariance bound unreachable for block-diagonal gains "
            f"(violation {violation:.3e} at penalty {mu:.1e})",
            achieved=ctx.terminal_cov(blocks),
        )

    # tighten the scalar bracket: smallest multiplier scale meeting the bound
    for _ in range(opts.bracket_iters):
        theta_mid = 0.5 * (theta_lo + theta_hi)
        blocks, V, violation = solve_with_multiplier(theta_mid * P_dir)
        if violation <= opts.feas_tol:
            theta_hi = theta_mid
            K_feas = blocks
        else:
            theta_lo = theta_mid

    best = (K_feas, base_cost(K_feas))
    best, best_lam, last_blocks, steps_used = bb_polish(theta_hi * P_dir, best, opts.polish_iters)
    if best_lam is None:
        best_lam = theta_hi * P_dir
    return finish(best, best_lam, last_blocks, steps_used, mu, False)

"""Adaptive, inexact, stochastic SQP iteration.

One iteration draws a gradient sample, solves the KKT system inexactly with
MINRES until one of two termination cases holds, updates the merit parameter
when needed, takes a formula-based step and lets the sampling controller
choose the next batch size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Optional

import numpy as np

from . import kernels as K
from .kkt import (
    KktRhs,
    KktSystem,
    TerminationCase,
    least_squares_multipliers,
    minres_sqp,
)
from .sampling import SamplingController, draw_sample, estimate_gradient

ZERO_DIRECTION = 1e-14
LIPSCHITZ_FLOOR = 1e-8


class BudgetExhausted(Exception):
    """Raised by :func:`sqp_step` when the next iteration would overrun a budget."""

    def __init__(self, kind: str):
        super().__init__(f"{kind} budget exhausted")
        self.kind = kind


_OPEN_UNIT = ("omega1", "omega2", "eta", "eps_tau")


@dataclass(frozen=True)
class SqpParams:
    """User constants of the method; defaults are the published experimental settings."""

    tau_init: float = 1.0
    omega1: float = 0.5
    omega2: float = 0.5
    eta: float = 0.5
    eps_tau: float = 1e-4
    omega_a: float = 100.0
    omega_b: float = 100.0
    alpha_u: float = 100.0
    beta: float = 1.0
    sigma: float = 2.0
    eps_d: float = 1e-2
    theta1: float = 0.99
    strict_case_a: bool = False
    early_termination: bool = True
    max_outer_iters: int = 100_000
    grad_eval_budget: int = 10**12
    ls_iter_budget: int = 10**12
    minres_tol: float = 1e-8
    minres_max_iters: Optional[int] = None

    def __post_init__(self):
        for name in _OPEN_UNIT:
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name}={v} must lie in (0, 1)")
        for name in ("tau_init", "omega_a", "omega_b", "alpha_u", "theta1"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name}={getattr(self, name)} must be positive")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta={self.beta} must lie in (0, 1]")
        if not 2.0 <= self.sigma <= 4.0:
            raise ValueError(f"sigma={self.sigma} must lie in [2, 4]")
        if not 0.0 < self.eps_d < 0.5:
            raise ValueError(f"eps_d={self.eps_d} must lie in (0, 1/2) for H = I")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be nonnegative")
        for name in ("grad_eval_budget", "ls_iter_budget"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.minres_tol < 0:
            raise ValueError("minres_tol must be nonnegative")
        if self.minres_max_iters is not None and self.minres_max_iters < 1:
            raise ValueError("minres_max_iters must be positive")

    def kernel_params(self, tau_prev: float) -> np.ndarray:
        p = np.zeros(K.N_PARAMS)
        p[K.P_TAU] = tau_prev
        p[K.P_OMEGA1] = self.omega1
        p[K.P_OMEGA2] = self.omega2
        p[K.P_OMEGA_A] = self.omega_a
        p[K.P_OMEGA_B] = self.omega_b
        p[K.P_BETA] = self.beta
        p[K.P_SIGMA] = self.sigma
        p[K.P_EPS_D] = self.eps_d
        p[K.P_STRICT] = float(self.strict_case_a)
        p[K.P_USE_CASES] = float(self.early_termination)
        return p


def param_names():
    return [f.name for f in fields(SqpParams)]


# ---------------------------------------------------------------------------
# formulas


def merit_value(tau: float, f: float, c) -> float:
    if tau <= 0:
        raise ValueError("merit parameter must be positive")
    return tau * f + float(np.abs(c).sum())


def model_reduction(tau: float, gbar, d, c, J) -> float:
    """Predicted merit decrease ``-tau g'd + ||c||_1 - ||c + J d||_1``."""
    c = np.asarray(c, dtype=float)
    c_new = c + np.atleast_2d(J) @ np.asarray(d, dtype=float)
    return K.model_reduction_value(tau, float(np.dot(gbar, d)), float(np.abs(c).sum()), float(np.abs(c_new).sum()))


def quad_term(d, eps_d: float, H=None) -> float:
    """``max(d'Hd, eps_d ||d||^2)``; ``H`` defaults to the identity."""
    d = np.asarray(d, dtype=float)
    dd = float(d @ d)
    dHd = dd if H is None else float(d @ (H @ d))
    return max(dHd, eps_d * dd)


def trial_merit_parameter(gbar, d, quad: float, c, r, rho, p: SqpParams) -> float:
    c_l1 = float(np.abs(c).sum())
    if float(np.abs(r).sum()) >= (1.0 - p.omega1) * p.omega2 * c_l1 or float(np.abs(rho).sum()) >= p.omega_b * c_l1:
        return math.inf
    denom = float(np.dot(gbar, d)) + quad
    if denom <= 0.0:
        return math.inf
    return (1.0 - p.omega1) * (1.0 - p.omega2) * c_l1 / denom


def update_merit_parameter(tau_prev: float, tau_trial: float, eps_tau: float) -> float:
    if tau_prev <= (1.0 - eps_tau) * tau_trial:
        return tau_prev
    return (1.0 - eps_tau) * tau_trial


def check_case_a(delta_l: float, tau_prev: float, quad: float, d, c, r, gbar, p: SqpParams) -> bool:
    return bool(K.case_a_holds(
        delta_l, tau_prev, quad, float(np.dot(gbar, d)), float(np.abs(c).sum()), float(np.abs(r).sum()),
        p.omega1, p.omega_a, p.beta, p.sigma, p.strict_case_a,
    ))


def check_case_b(r, rho, c, p: SqpParams) -> bool:
    return bool(K.case_b_holds(
        float(np.abs(r).sum()), float(np.abs(rho).sum()), float(np.abs(c).sum()),
        p.omega1, p.omega2, p.omega_a, p.beta, p.sigma, p.omega_b,
    ))


def step_size(delta_l: float, tau_bar: float, L: float, Gamma: float, d_norm_sq: float, c_l1: float,
              p: SqpParams) -> float:
    curv = tau_bar * L + Gamma
    if curv <= 0.0:
        raise ValueError("tau*L + Gamma must be positive")
    if d_norm_sq <= 0.0:
        raise ValueError("step size is undefined for a zero direction")
    denom = curv * d_norm_sq
    alpha_opt = max(min(delta_l / denom, 1.0), (delta_l - 2.0 * c_l1) / denom)
    return min(
        2.0 * (1.0 - p.eta) * p.beta ** (p.sigma / 2.0 - 1.0) * delta_l / denom,
        alpha_opt,
        p.alpha_u * p.beta ** (2.0 - p.sigma / 2.0),
        1.0,
    )


def estimate_lipschitz(problem, x0, num_probes: int = 10, probe_scale: Optional[float] = None, rng=None):
    """Gradient- and Jacobian-difference estimates of ``(L, Gamma)`` around ``x0``."""
    if num_probes < 1:
        raise ValueError("num_probes must be positive")
    x0 = np.asarray(x0, dtype=float)
    if probe_scale is None:
        probe_scale = 1e-4 * max(1.0, float(np.linalg.norm(x0)))
    if probe_scale <= 0:
        raise ValueError("probe_scale must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    g0, J0 = problem.g_true(x0), np.atleast_2d(problem.jac(x0))
    L = Gamma = 0.0
    for _ in range(num_probes):
        u = rng.standard_normal(x0.shape[0])
        u *= probe_scale / np.linalg.norm(u)
        un = np.linalg.norm(u)
        L = max(L, float(np.linalg.norm(problem.g_true(x0 + u) - g0)) / un)
        dJ = np.atleast_2d(problem.jac(x0 + u)) - J0
        Gamma = max(Gamma, float(np.linalg.norm(dJ, 2)) / un)
    return max(L, LIPSCHITZ_FLOOR), max(Gamma, LIPSCHITZ_FLOOR)


def case_predicate(gbar, c, tau_prev: float, p: SqpParams):
    """Python form of the MINRES stopping rule used by :func:`sqp_step`.

    Case (a) is tested before case (b). The zero starting iterate is only
    eligible when the whole right-hand side vanishes.
    """
    gbar = np.asarray(gbar, dtype=float)
    c = np.asarray(c, dtype=float)
    kp = p.kernel_params(tau_prev)
    c_l1 = float(np.abs(c).sum())

    def terminate(sol, res, t):
        if t == 0 and (np.any(res.rho) or np.any(res.r)):
            return None
        H = np.eye(sol.d.shape[0])
        code = K.classify_iterate(H, sol.d, res.r, res.rho, gbar, c_l1, kp)
        return {K.CASE_A: TerminationCase.A, K.CASE_B: TerminationCase.B}.get(code)

    return terminate


# ---------------------------------------------------------------------------
# iteration


@dataclass(frozen=True)
class SqpState:
    x: np.ndarray
    y: np.ndarray
    tau_bar: float
    L_est: float
    Gamma_est: float
    k: int = 0
    sample_size: int = 1
    cumulative_grad_evals: int = 0
    cumulative_ls_iters: int = 0


@dataclass(frozen=True)
class Direction:
    """Accepted step of one iteration with everything needed to audit it."""

    d: np.ndarray
    delta: np.ndarray
    rho: np.ndarray
    r: np.ndarray
    case: TerminationCase
    iterations: int
    gbar: np.ndarray
    sample_variance: float
    quad: float
    delta_l: float
    c: np.ndarray
    J: np.ndarray
    y: np.ndarray
    tau_prev: float
    tau: float
    tau_trial: float
    alpha: float


@dataclass(frozen=True)
class IterationRecord:
    """Telemetry after iteration ``k``; error metrics are evaluated at the new iterate."""

    k: int
    feasibility: float
    stationarity: float
    tau_bar: float
    alpha: float
    batch: int
    ls_iters_cum: int
    grad_evals_cum: int
    case: str
    merit: float
    delta_l: float


def feasibility_error(c) -> float:
    c = np.asarray(c, dtype=float)
    return float(np.abs(c).max()) if c.size else 0.0


def stationarity_error(g, J) -> float:
    """``||g + J'y||_inf`` with least-squares multipliers from the true gradient ``g``."""
    J = np.atleast_2d(J)
    y = least_squares_multipliers(J, g)
    return float(np.abs(g + J.T @ y).max())


def initial_state(problem, p: SqpParams, controller: SamplingController, y0=None, lipschitz=None,
                  lipschitz_rng=None) -> SqpState:
    x0 = np.array(problem.x0, dtype=float)
    if y0 is None:
        y0 = least_squares_multipliers(problem.jac(x0), problem.g_true(x0))
    if lipschitz is None:
        lipschitz = estimate_lipschitz(problem, x0, rng=lipschitz_rng)
    L, Gamma = lipschitz
    return SqpState(x0, np.array(y0, dtype=float), p.tau_init, L, Gamma, sample_size=controller.current)


def sqp_step(state: SqpState, problem, controller: SamplingController, p: SqpParams, rng: np.random.Generator):
    """Run one iteration; returns ``(new_state, IterationRecord, Direction)``.

    Raises :class:`BudgetExhausted` before doing any work that would push a
    counter past its budget; a MINRES solve cut short by the linear-solver
    budget is discarded the same way.
    """
    if state.k >= p.max_outer_iters:
        raise BudgetExhausted("iterations")
    size = controller.current
    if state.cumulative_grad_evals + size > p.grad_eval_budget:
        raise BudgetExhausted("gradients")
    remaining_ls = p.ls_iter_budget - state.cumulative_ls_iters
    if remaining_ls <= 0:
        raise BudgetExhausted("linear solver")

    x, y = state.x, state.y
    n = x.shape[0]
    sample = draw_sample(rng, problem.n_samples, size)
    est = estimate_gradient(problem, x, sample, rng)
    c = np.asarray(problem.c(x), dtype=float)
    J = np.atleast_2d(np.asarray(problem.jac(x), dtype=float))
    H = np.eye(n)
    system = KktSystem(H, J)
    rhs = KktRhs.from_iterate(est.gbar, J, y, c)

    full_cap = p.minres_max_iters or 4 * (n + J.shape[0])
    cap = min(full_cap, remaining_ls)
    tau_prev = state.tau_bar
    kp = p.kernel_params(tau_prev)
    sol, res, verdict = minres_sqp(system, rhs, est.gbar, kp, cap, p.minres_tol)
    c_l1 = float(np.abs(c).sum())
    case = verdict.case
    if case is TerminationCase.FALLBACK:
        bnorm = verdict.residual_norms[0]
        converged = verdict.residual_norms[-1] <= p.minres_tol * bnorm
        if cap < full_cap and verdict.iterations_used >= cap and not converged:
            raise BudgetExhausted("linear solver")
        # exact variants reach here every time; label the solution by the case it satisfies
        kp[K.P_USE_CASES] = 1.0
        code = K.classify_iterate(H, sol.d, res.r, res.rho, est.gbar, c_l1, kp)
        case = {K.CASE_A: TerminationCase.A, K.CASE_B: TerminationCase.B}.get(code, TerminationCase.FALLBACK)

    d, delta = sol.d, sol.delta
    quad = quad_term(d, p.eps_d)
    tau = tau_prev
    tau_trial = math.inf
    if case is not TerminationCase.A:
        tau_trial = trial_merit_parameter(est.gbar, d, quad, c, res.r, res.rho, p)
        tau = update_merit_parameter(tau_prev, tau_trial, p.eps_tau)
    delta_l = K.model_reduction_value(tau, float(est.gbar @ d), c_l1, float(np.abs(res.r).sum()))

    d_norm_sq = float(d @ d)
    if math.sqrt(d_norm_sq) <= ZERO_DIRECTION:
        alpha = 1.0
        x_new = x
    elif delta_l <= 0.0:
        # only reachable on FALLBACK: the model predicts no decrease, so do not move
        alpha = 0.0
        x_new = x
    else:
        alpha = step_size(delta_l, tau, state.L_est, state.Gamma_est, d_norm_sq, c_l1, p)
        x_new = x + alpha * d
    y_new = y + alpha * delta

    next_size = controller.update(est, delta_l)
    grad_evals = state.cumulative_grad_evals + size
    ls_iters = state.cumulative_ls_iters + verdict.iterations_used

    c_new = np.asarray(problem.c(x_new), dtype=float)
    J_new = problem.jac(x_new)
    record = IterationRecord(
        k=state.k,
        feasibility=feasibility_error(c_new),
        stationarity=stationarity_error(problem.g_true(x_new), J_new),
        tau_bar=tau,
        alpha=alpha,
        batch=size,
        ls_iters_cum=ls_iters,
        grad_evals_cum=grad_evals,
        case=case.value,
        merit=merit_value(tau, problem.f_true(x_new), c_new),
        delta_l=delta_l,
    )
    direction = Direction(d, delta, res.rho, res.r, case, verdict.iterations_used, est.gbar,
                          est.sample_variance, quad, delta_l, c, J, y, tau_prev, tau, tau_trial, alpha)
    new_state = replace(state, x=x_new, y=y_new, tau_bar=tau, k=state.k + 1, sample_size=next_size,
                        cumulative_grad_evals=grad_evals, cumulative_ls_iters=ls_iters)
    return new_state, record, direction

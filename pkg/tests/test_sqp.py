import math

import numpy as np
import pytest

from stochsqp import problems as P
from stochsqp.kkt import KktRhs, KktSystem, TerminationCase, direct_solve, least_squares_multipliers
from stochsqp.sampling import GradientEstimate, SamplingController
from stochsqp.sqp import (
    BudgetExhausted,
    SqpParams,
    check_case_a,
    check_case_b,
    estimate_lipschitz,
    feasibility_error,
    initial_state,
    merit_value,
    model_reduction,
    param_names,
    quad_term,
    sqp_step,
    stationarity_error,
    step_size,
    trial_merit_parameter,
    update_merit_parameter,
)

DEFAULT = SqpParams()


# ---------------------------------------------------------------- params

def test_defaults_are_published_settings():
    p = SqpParams()
    assert (p.tau_init, p.beta, p.alpha_u, p.eta) == (1.0, 1.0, 100.0, 0.5)
    assert (p.omega1, p.omega2, p.omega_a, p.omega_b) == (0.5, 0.5, 100.0, 100.0)
    assert (p.eps_tau, p.sigma, p.theta1) == (1e-4, 2.0, 0.99)


@pytest.mark.parametrize("field,value", [
    ("omega1", 1.5), ("omega2", 0.0), ("eta", 1.0), ("eps_tau", -1e-3), ("beta", 1.5),
    ("sigma", 1.0), ("sigma", 5.0), ("eps_d", 0.5), ("alpha_u", 0.0), ("tau_init", -1.0),
    ("grad_eval_budget", 0), ("minres_max_iters", 0),
])
def test_param_ranges(field, value):
    with pytest.raises(ValueError, match=field):
        SqpParams(**{field: value})


def test_param_names_cover_fields():
    assert "omega1" in param_names() and "theta1" in param_names()


# ---------------------------------------------------------------- merit and model

def test_merit_value_examples():
    assert merit_value(1.0, 2.0, [1.0, -1.0]) == 4.0
    assert merit_value(0.3, 5.0, [0.0, 0.0]) == pytest.approx(1.5, abs=1e-15)
    assert merit_value(0.5, 0.0, [3.0]) == 3.0
    with pytest.raises(ValueError):
        merit_value(0.0, 1.0, [1.0])


def test_model_reduction_examples():
    assert model_reduction(1.0, [1.0, 0.0], [-1.0, 0.0], [2.0], [[0.0, 1.0]]) == 1.0
    assert model_reduction(0.7, [1.0, 2.0], [0.0, 0.0], [1.5], [[1.0, 1.0]]) == 0.0


def test_model_reduction_exact_solve_identity(rng):
    J = rng.standard_normal((2, 4))
    c = rng.standard_normal(2)
    g = rng.standard_normal(4)
    d = direct_solve(KktSystem(np.eye(4), J), KktRhs.from_iterate(g, J, np.zeros(2), c)).d
    expected = -0.3 * g @ d + np.abs(c).sum()
    assert model_reduction(0.3, g, d, c, J) == pytest.approx(expected, abs=1e-12)


def test_quad_term():
    assert quad_term([3.0, 4.0], 0.01) == 25.0
    assert quad_term([1.0, 0.0], 0.1, H=np.diag([0.0, 1.0])) == pytest.approx(0.1)


# ---------------------------------------------------------------- merit parameter

def test_trial_merit_examples():
    d = np.array([1.0, 0.0])
    # g'd + quad = 1 with quad = 1 and g'd = 0; ||c||_1 = 2; gates pass with zero residuals
    tr = trial_merit_parameter([0.0, 1.0], d, 1.0, [2.0], [0.0], [0.0, 0.0], DEFAULT)
    assert tr == pytest.approx(0.5, abs=1e-12)
    # g'd + quad = -0.1
    assert trial_merit_parameter([-1.1, 0.0], d, 1.0, [2.0], [0.0], [0.0, 0.0], DEFAULT) == math.inf
    # ||r||_1 = 0.3 >= (1 - w1) w2 ||c||_1 = 0.25
    assert trial_merit_parameter([0.0, 1.0], d, 1.0, [1.0], [0.3], [0.0, 0.0], DEFAULT) == math.inf
    # rho gate
    assert trial_merit_parameter([0.0, 1.0], d, 1.0, [1.0], [0.0], [100.0, 0.0], DEFAULT) == math.inf


def test_update_merit_examples():
    assert update_merit_parameter(0.5, 1.0, 1e-4) == 0.5
    assert update_merit_parameter(0.7, math.inf, 1e-4) == 0.7
    assert update_merit_parameter(1.0, 0.5, 1e-4) == pytest.approx(0.49995, abs=1e-15)


# ---------------------------------------------------------------- termination cases

def test_case_a_stationary_feasible_point():
    assert check_case_a(0.0, 1.0, 0.0, [0.0, 0.0], [0.0], [0.0], [0.0, 0.0], DEFAULT)


def test_case_a_residual_boundary():
    p = SqpParams(omega_a=1.0)
    d, g = np.array([1.0, 0.0]), np.array([0.0, 0.0])
    # delta_l = 1, quad = 0.2, ||c||_1 = 0.9: the reduction inequality holds (0.55 <= 1)
    assert check_case_a(1.0, 1.0, 0.2, d, [0.9], [1.0], g, p)
    assert not check_case_a(1.0, 1.0, 0.2, d, [0.9], [1.0 + 1e-6], g, p)


def test_case_a_needs_reduction_inequality():
    d, g = np.array([1.0, 0.0]), np.zeros(2)
    assert not check_case_a(0.1, 1.0, 1.0, d, [1.0], [0.0], g, DEFAULT)


def test_case_a_strict_gate():
    p = SqpParams(strict_case_a=True)
    d = np.array([0.1, 0.0])
    quad = quad_term(d, p.eps_d)  # 0.01
    g = np.array([0.9, 0.0])      # g'd + quad = 0.09 + 0.01 = 0.1 > 0
    assert check_case_a(10.0, 1.0, quad, d, [1.0], [0.0], g, DEFAULT)
    assert not check_case_a(10.0, 1.0, quad, d, [1.0], [0.0], g, p)


def test_case_b_examples():
    c = np.array([2.0])
    assert not check_case_b([0.0], [0.0], [0.0], DEFAULT)
    assert check_case_b([0.2 * 2.0], [0.5 * 2.0], c, DEFAULT)
    assert not check_case_b([0.2 * 2.0], [100.0 * 2.0], c, DEFAULT)
    assert not check_case_b([0.25 * 2.0], [0.0], c, DEFAULT)


# ---------------------------------------------------------------- step size

def test_step_size_examples():
    assert step_size(10.0, 1.0, 1.0, 0.0, 1.0, 0.0, DEFAULT) == 1.0
    assert step_size(0.1, 1.0, 0.5, 0.5, 1.0, 1.0, DEFAULT) == pytest.approx(0.1, abs=1e-12)


def test_step_size_upper_bound(rng):
    p = SqpParams(alpha_u=0.3, beta=0.5, sigma=3.0)
    for _ in range(200):
        a = step_size(*rng.uniform(1e-3, 10.0, 5), float(rng.uniform(0, 5)), p)
        assert 0.0 < a <= p.alpha_u * p.beta ** (2 - p.sigma / 2) + 1e-15


def test_step_size_rejects_degenerate_inputs():
    with pytest.raises(ValueError):
        step_size(1.0, 1.0, 0.0, 0.0, 1.0, 0.0, DEFAULT)
    with pytest.raises(ValueError):
        step_size(1.0, 1.0, 1.0, 1.0, 0.0, 0.0, DEFAULT)


# ---------------------------------------------------------------- Lipschitz estimates

class _Linear(P.DeterministicProblem):
    n, m = 3, 1
    x0 = np.zeros(3)

    def f_true(self, x):
        return float(np.sum(x))

    def g_true(self, x):
        return np.ones(3)

    def c(self, x):
        return np.array([x[0] - 1.0])

    def jac(self, x):
        return np.array([[1.0, 0.0, 0.0]])


def test_lipschitz_estimates():
    qp = P.make_qp(6, 2, seed=0, identity=True)
    L, Gamma = estimate_lipschitz(qp, qp.x0 + 0.3)
    assert L == pytest.approx(1.0, abs=1e-9)
    assert Gamma == 1e-8
    L, Gamma = estimate_lipschitz(_Linear(), np.zeros(3))
    assert (L, Gamma) == (1e-8, 1e-8)


# ---------------------------------------------------------------- metrics

def test_error_metrics():
    assert feasibility_error([0.0, 0.0]) == 0.0
    assert feasibility_error([1.0, -3.0, 2.0]) == 3.0
    assert feasibility_error([-0.5]) == 0.5
    assert stationarity_error(np.array([2.0, 3.0]), np.array([[1.0, 0.0]])) == 3.0
    assert stationarity_error(np.zeros(2), np.array([[1.0, 0.0]])) == 0.0
    J = np.array([[1.0, 2.0, 0.0]])
    assert stationarity_error(J[0] * 3.0, J) <= 1e-10


# ---------------------------------------------------------------- iteration

class _HalfSphere(P.DeterministicProblem):
    """f = 1/2 ||x||^2, c = x1 - 1, from the origin."""

    n, m = 2, 1
    x0 = np.zeros(2)

    def f_true(self, x):
        return 0.5 * float(x @ x)

    def g_true(self, x):
        return np.array(x, dtype=float)

    def c(self, x):
        return np.array([x[0] - 1.0])

    def jac(self, x):
        return np.array([[1.0, 0.0]])


def test_single_exact_step_by_hand():
    prob = _HalfSphere()
    p = SqpParams(early_termination=False)
    ctl = SamplingController.fixed(1)
    st = initial_state(prob, p, ctl)
    assert st.y[0] == 0.0 and st.L_est == pytest.approx(1.0, abs=1e-9) and st.Gamma_est == 1e-8
    new, rec, dirn = sqp_step(st, prob, ctl, p, np.random.default_rng(0))
    # d = (1, 0), delta = -1, delta_l = 1, tau stays 1 (case A)
    np.testing.assert_allclose(dirn.d, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(dirn.delta, [-1.0], atol=1e-12)
    assert dirn.case is TerminationCase.A and new.tau_bar == 1.0
    assert dirn.delta_l == pytest.approx(1.0, abs=1e-12)
    den = st.L_est + st.Gamma_est
    alpha = min(1.0 / den, max(min(1.0 / den, 1.0), -1.0 / den), 100.0, 1.0)
    assert rec.alpha == pytest.approx(alpha, abs=1e-12)
    np.testing.assert_allclose(new.x, [alpha, 0.0], atol=1e-12)
    assert merit_value(new.tau_bar, prob.f_true(new.x), prob.c(new.x)) <= merit_value(1.0, 0.0, prob.c(prob.x0))


def test_fixed_point_zero_direction():
    prob = _HalfSphere()
    prob.x0 = np.array([1.0, 0.0])
    p = SqpParams(early_termination=False)
    ctl = SamplingController.fixed(1)
    st = initial_state(prob, p, ctl)
    new, rec, _ = sqp_step(st, prob, ctl, p, np.random.default_rng(0))
    assert rec.alpha == 1.0
    np.testing.assert_array_equal(new.x, st.x)


def test_adaptive_controller_growth_from_step_quantities():
    ctl = SamplingController.adaptive(init_size=2, cap=10**6)
    assert ctl.update(GradientEstimate(np.zeros(2), 8.0, 2), 0.5) == 17


def test_budget_checks_happen_before_work():
    prob = P.AdditiveNoiseProblem(P.make_qp(5, 1, seed=0), 0.1)
    ctl = SamplingController.fixed(10)
    p = SqpParams(grad_eval_budget=15)
    st = initial_state(prob, p, ctl)
    st, _, _ = sqp_step(st, prob, ctl, p, np.random.default_rng(0))
    with pytest.raises(BudgetExhausted) as info:
        sqp_step(st, prob, ctl, p, np.random.default_rng(0))
    assert info.value.kind == "gradients" and st.cumulative_grad_evals == 10


def test_ls_budget_discards_truncated_solve():
    prob = P.make_qp(20, 5, seed=1)
    ctl = SamplingController.fixed(1)
    p = SqpParams(early_termination=False, ls_iter_budget=3)
    st = initial_state(prob, p, ctl)
    with pytest.raises(BudgetExhausted) as info:
        sqp_step(st, prob, ctl, p, np.random.default_rng(0))
    assert info.value.kind == "linear solver"


# ---------------------------------------------------------------- reference trajectory

def _reference_exact_run(prob, p, L, Gamma, iters):
    """Independent exact-solve SQP written directly from the formulas with a dense solver."""
    x = prob.x0.astype(float).copy()
    J0 = prob.jac(x)
    y = np.linalg.lstsq(J0.T, -prob.g_true(x), rcond=None)[0]
    tau = p.tau_init
    xs = []
    for _ in range(iters):
        g, c, J = prob.g_true(x), prob.c(x), prob.jac(x)
        n, m = len(x), len(c)
        Kmat = np.block([[np.eye(n), J.T], [J, np.zeros((m, m))]])
        sol = np.linalg.solve(Kmat, -np.concatenate([g + J.T @ y, c]))
        d, delta = sol[:n], sol[n:]
        c1 = np.abs(c).sum()
        quad = max(d @ d, p.eps_d * (d @ d))
        dl_prev = -tau * g @ d + c1
        case_a = dl_prev >= tau * p.omega1 * quad + p.omega1 * c1
        if not case_a and g @ d + quad > 0:
            trial = (1 - p.omega1) * (1 - p.omega2) * c1 / (g @ d + quad)
            if tau > (1 - p.eps_tau) * trial:
                tau = (1 - p.eps_tau) * trial
        dl = -tau * g @ d + c1
        if np.linalg.norm(d) <= 1e-14:
            alpha = 1.0
        else:
            den = (tau * L + Gamma) * (d @ d)
            alpha = min(2 * (1 - p.eta) * dl / den, max(min(dl / den, 1.0), (dl - 2 * c1) / den), p.alpha_u, 1.0)
        x = x + alpha * d
        y = y + alpha * delta
        xs.append(x.copy())
    return np.array(xs)


@pytest.mark.parametrize("make", [
    lambda: P.make_qp(10, 2, seed=3),
    lambda: P.make_sphere(6, seed=2),
    lambda: P.make_rosenbrock(10, 1, seed=4),
])
def test_exact_trajectory_matches_dense_reference(make):
    prob = make()
    p = SqpParams(early_termination=False, minres_tol=1e-13)
    ctl = SamplingController.fixed(1)
    st = initial_state(prob, p, ctl)
    ref = _reference_exact_run(prob, p, st.L_est, st.Gamma_est, 15)
    rng = np.random.default_rng(0)
    for k in range(15):
        st, _, _ = sqp_step(st, prob, ctl, p, rng)
        scale = max(1.0, np.linalg.norm(ref[k]))
        assert np.linalg.norm(st.x - ref[k]) <= 1e-7 * scale, k

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from erlq.errors import DegenerateCovarianceError, InadmissibleError, RiccatiError
from erlq.exact import (cost_f, e_k, evaluate, evaluate_many, grad_k, grad_sigma, m_k,
                        optimal_sigma_for, p_k, psi, q_k_sigma, riccati_map, s_k_sigma, solve_are,
                        truncated_cost, truncated_s)
from erlq.gradcheck import fd_grad_k, fd_grad_sigma, random_policy
from erlq.model import GaussianPolicy, second_moment_step, v_k

from conftest import (F_STAR, F_ZERO_HALF, F_ZERO_I, K_STAR, P_STAR, S_STAR, S_ZERO_HALF,
                      S_ZERO_I, SIGMA_STAR, scalar_system)


# -- Riccati baseline ---------------------------------------------------------------

def test_solution_matches_frozen_oracle(solution):
    assert solution.p_star == pytest.approx(P_STAR, rel=1e-12)
    assert solution.k_star == pytest.approx(K_STAR, rel=1e-10)
    assert solution.sigma_star == pytest.approx(SIGMA_STAR, rel=1e-10, abs=1e-15)
    assert solution.f_star == pytest.approx(F_STAR, rel=1e-12)
    assert solution.residual <= 1e-12


def test_solution_is_stationary(bench, solution):
    assert np.linalg.norm(grad_k(bench, solution.k_star, solution.sigma_star)) <= 1e-8
    assert np.linalg.norm(grad_sigma(bench, solution.k_star, solution.sigma_star)) <= 1e-8
    assert np.linalg.norm(e_k(bench, solution.k_star)) <= 1e-8


def test_q_star_is_closed_form_q(bench, solution):
    assert solution.q_star == pytest.approx(q_k_sigma(bench, solution.k_star, solution.sigma_star))
    assert solution.p_star == pytest.approx(p_k(bench, solution.k_star), rel=1e-11)


def test_zero_drift_riccati():
    sys = scalar_system(A=0.0, B=0.7, C=0.4, D=0.2, Q=1.3, gamma=0.6)
    sol = solve_are(sys)
    assert sol.k_star == pytest.approx([0.0], abs=1e-15)
    assert sol.p_star == pytest.approx(1.3 / (1 - 0.6 * 0.16), rel=1e-12)


def test_short_horizon_covariance():
    sys = scalar_system(gamma=1e-9, tau=0.4)
    sol = solve_are(sys)
    assert sol.sigma_star == pytest.approx(np.array([[0.2]]), rel=1e-8)


def test_riccati_failure_messages():
    sys = scalar_system(A=3.0, B=0.0, C=0.0, D=0.0, gamma=0.9)
    with pytest.raises(RiccatiError, match="ARE value iteration failed"):
        solve_are(sys)
    with pytest.raises(RiccatiError, match="no convergence"):
        solve_are(scalar_system(), max_iter=2)


def test_riccati_map_fixed_point(bench, solution):
    assert riccati_map(bench, solution.p_star) == pytest.approx(solution.p_star, abs=1e-12)


# -- value coefficients ----------------------------------------------------------------

def test_p_k_zero_gain(bench):
    assert p_k(bench, np.zeros(3)) == pytest.approx(0.5 / (1 - 0.5 * 0.4909), rel=1e-14)
    assert p_k(bench, np.zeros(3)) == pytest.approx(0.6626466, abs=1e-7)


def test_p_k_one_step(rng):
    sys = scalar_system(gamma=0.0, Q=0.8, R=2.0)
    assert p_k(sys, [1.5]) == pytest.approx(0.8 + 2.0 * 2.25)


def test_p_k_inadmissible():
    sys = scalar_system(A=2.0, B=0.0, C=0.0, D=0.0, gamma=0.5)
    with pytest.raises(InadmissibleError, match="inadmissible gain"):
        p_k(sys, [0.0])


def test_p_k_is_series_sum(bench, rng):
    K = 0.2 * rng.standard_normal(3)
    stage, V = bench.Q + K @ bench.R @ K, v_k(bench, K)
    series = sum(stage * (bench.gamma * V) ** t for t in range(400))
    assert p_k(bench, K) == pytest.approx(series, rel=1e-13)


def test_q_scalar_arithmetic():
    sys = scalar_system(gamma=0.0, R=1.0, tau=2.0)
    assert q_k_sigma(sys, [0.0], [[1.0]]) == pytest.approx(-math.log(2 * math.pi), rel=1e-14)
    assert q_k_sigma(sys, [0.0], [[1.0]]) == pytest.approx(-1.837877, abs=1e-6)


def test_q_at_optimum_matches_solver(bench, solution):
    assert q_k_sigma(bench, K_STAR, SIGMA_STAR) == pytest.approx(solution.q_star, rel=1e-11)


def test_psi_identity(bench):
    Sigma = 0.5 * np.eye(3)
    expected = 1.5 - 0.05 * (3 + 3 * math.log(2 * math.pi) + 3 * math.log(0.5))
    assert psi(bench, Sigma) == pytest.approx(expected, rel=1e-14)


def test_psi_singular():
    with pytest.raises(DegenerateCovarianceError):
        psi(scalar_system(), [[0.0]])


@pytest.mark.parametrize("Sigma, f, s", [
    (np.eye(3), F_ZERO_I, S_ZERO_I),
    (0.5 * np.eye(3), F_ZERO_HALF, S_ZERO_HALF),
])
def test_cost_at_zero_gain(bench, Sigma, f, s):
    assert cost_f(bench, np.zeros(3), Sigma) == pytest.approx(f, rel=1e-13)
    assert s_k_sigma(bench, np.zeros(3), Sigma) == pytest.approx(s, rel=1e-13)


def test_optimal_cost_and_moment(bench):
    assert cost_f(bench, K_STAR, SIGMA_STAR) == pytest.approx(F_STAR, rel=1e-12)
    assert s_k_sigma(bench, K_STAR, SIGMA_STAR) == pytest.approx(S_STAR, rel=1e-12)


# -- second-moment sum ---------------------------------------------------------------

def test_s_without_exploration(bench, rng):
    K = 0.3 * rng.standard_normal(3)
    expected = bench.mu / (1 - bench.gamma * v_k(bench, K))
    assert s_k_sigma(bench, K, np.zeros((3, 3))) == pytest.approx(expected, rel=1e-14)


def test_s_short_horizon_limit(bench):
    from dataclasses import replace
    for g in (1e-4, 1e-8, 0.0):
        near = replace(bench, gamma=g)
        assert s_k_sigma(near, np.zeros(3), np.eye(3)) == pytest.approx(bench.mu, abs=10 * g + 1e-15)


def test_s_at_unit_closed_loop_gain():
    # V_K = 1 would be 0/0 in the textbook form; here it is finite
    sys = scalar_system(A=1.0, B=0.0, C=0.0, D=0.0, gamma=0.5)
    assert v_k(sys, [0.0]) == 1.0
    assert s_k_sigma(sys, [0.0], [[1.0]]) == pytest.approx(2.0)


def test_s_is_second_moment_series(bench):
    pol = GaussianPolicy(np.zeros(3), np.eye(3))
    m, total = bench.mu, 0.0
    for t in range(60):
        total += bench.gamma**t * m
        m = second_moment_step(bench, pol, m)
    assert s_k_sigma(bench, np.zeros(3), np.eye(3)) == pytest.approx(total, abs=1e-10)


def test_truncated_forms_converge(bench):
    K, Sigma = np.zeros(3), np.eye(3)
    s = s_k_sigma(bench, K, Sigma)
    l = math.ceil((math.log(1e-10) - math.log(s)) / math.log(bench.gamma))
    assert abs(s - truncated_s(bench, K, Sigma, l)) <= 1e-10
    f30 = truncated_cost(bench, K, Sigma, 30)
    tail = bench.gamma**30 * (abs(psi(bench, Sigma)) / (1 - bench.gamma) + 2 * cost_f(bench, K, Sigma))
    assert abs(cost_f(bench, K, Sigma) - f30) <= tail


def test_truncated_length_one(bench):
    Sigma = 0.5 * np.eye(3)
    K = np.array([0.1, -0.1, 0.2])
    assert truncated_s(bench, K, Sigma, 1) == bench.mu
    stage = bench.Q + K @ bench.R @ K
    assert truncated_cost(bench, K, Sigma, 1) == pytest.approx(stage * bench.mu + psi(bench, Sigma))
    with pytest.raises(ValueError):
        truncated_s(bench, K, Sigma, 0)


# -- gradients ---------------------------------------------------------------------

def test_no_drift_no_gradient():
    sys = scalar_system(A=0.0, B=0.4, C=0.3, D=0.1)
    assert e_k(sys, [0.0]) == pytest.approx([0.0], abs=0)


def test_sigma_stationary_for_fixed_gain(bench, rng):
    K = 0.2 * rng.standard_normal(3)
    assert np.abs(grad_sigma(bench, K, optimal_sigma_for(bench, K))).max() <= 1e-12


def test_sigma_gradient_short_horizon():
    sys = scalar_system(gamma=1e-12, R=1.0, tau=2.0)
    assert grad_sigma(sys, [0.0], [[1.0]]) == pytest.approx(np.zeros((1, 1)), abs=1e-11)


def test_gradient_factorises(bench, rng):
    K, Sigma = random_policy(bench, rng)
    np.testing.assert_allclose(grad_k(bench, K, Sigma), e_k(bench, K) * s_k_sigma(bench, K, Sigma))


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(bench, seed):
    rng = np.random.default_rng(seed)
    K, Sigma = random_policy(bench, rng)
    gk, gs = grad_k(bench, K, Sigma), grad_sigma(bench, K, Sigma)
    assert np.linalg.norm(fd_grad_k(bench, K, Sigma, 1e-6) - gk) <= 1e-6 * np.linalg.norm(gk)
    assert np.linalg.norm(fd_grad_sigma(bench, K, Sigma, 1e-6) - gs) <= 1e-6 * np.linalg.norm(gs)


def test_curvature_is_symmetric_pd(bench, rng):
    M = m_k(bench, rng.standard_normal(3) * 0.1)
    assert np.array_equal(M, M.T)
    assert np.linalg.eigvalsh(M)[0] >= bench.sigma_min_R


def test_evaluate_report(bench):
    rep = evaluate(bench, np.zeros(3), 0.5 * np.eye(3))
    assert rep.f == pytest.approx(F_ZERO_HALF, rel=1e-13)
    assert rep.s == pytest.approx(S_ZERO_HALF, rel=1e-13)
    assert set(rep.to_dict()) == {"v_k", "p_k", "q", "f", "s", "e_k", "grad_k", "grad_sigma"}


def test_evaluate_many_agrees(bench, rng):
    Ks = 0.2 * rng.standard_normal((6, 3))
    Sigma = 0.4 * np.eye(3)
    f, s = evaluate_many(bench, Ks, Sigma)
    np.testing.assert_allclose(f, [cost_f(bench, K, Sigma) for K in Ks], rtol=1e-13)
    np.testing.assert_allclose(s, [s_k_sigma(bench, K, Sigma) for K in Ks], rtol=1e-13)


def test_evaluate_many_rejects_bad_members(bench):
    Sigmas = np.stack([np.eye(3), -np.eye(3)])
    with pytest.raises(DegenerateCovarianceError):
        evaluate_many(bench, np.zeros(3), Sigmas)
    with pytest.raises(InadmissibleError):
        evaluate_many(bench, [np.zeros(3), 100 * np.ones(3)], np.eye(3))


@given(st.floats(0.05, 0.95), st.floats(0.01, 0.5), st.floats(-1.0, 1.0))
def test_optimum_beats_perturbation(gamma, tau, dk):
    sys = scalar_system(A=0.8, B=0.6, C=0.1, D=0.2, gamma=gamma, tau=tau, R=1.0)
    sol = solve_are(sys)
    K = sol.k_star + 0.1 * dk
    if gamma * v_k(sys, K) < 1:
        assert cost_f(sys, K, sol.sigma_star) >= sol.f_star - 1e-12


@given(st.floats(0.1, 3.0))
def test_cost_separates_in_sigma(scale):
    sys = scalar_system(A=0.5, B=1.0, gamma=0.7, tau=0.2)
    K = [0.1]
    a, b = cost_f(sys, K, [[scale]]), cost_f(sys, K, [[1.0]])
    assert a - b == pytest.approx(q_k_sigma(sys, K, [[scale]]) - q_k_sigma(sys, K, [[1.0]]), abs=1e-12)

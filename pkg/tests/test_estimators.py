import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tracereg.designs import Design, NoiseModel, ObservationSet, generate_ground_truth, sample_observations
from tracereg.errors import InvalidDesignError, InvalidParameterError, MissingOracleError, NumericalError
from tracereg.estimators import (SHARP_CONSTANT, LambdaRule, SolverConfig, build_X_matrix, check_optimality,
                                 estimate_completion, objective, oracle_rhs, schatten_q_bound, select_lambda,
                                 slow_rate_candidates, slow_rate_rhs, solve_penalized, tau_squared)
from tracereg.linalg import singular_values, svd
from tracereg.stochastic import compute_M, m_norm


def usr_instance(m1=8, m2=6, r=2, n=100, sigma=0.5, seed=0):
    A0 = generate_ground_truth(m1, m2, r, 1.0, seed)
    obs = sample_observations(A0, Design.usr(m1, m2), NoiseModel.gaussian(sigma), n, seed + 1)
    return A0, obs


# --- X matrix ---------------------------------------------------------------

def test_build_X_single_record():
    obs = ObservationSet(Design.usr(2, 2), np.array([1.5]), rows=np.array([0]), cols=np.array([0]))
    X = build_X_matrix(obs)
    assert X[0, 0] == 6.0 and np.count_nonzero(X) == 1


def test_build_X_duplicates_sum():
    obs = ObservationSet(Design.usr(2, 2), np.array([1.0, 2.0]), rows=np.array([1, 1]), cols=np.array([0, 0]))
    assert build_X_matrix(obs)[1, 0] == pytest.approx(4 / 2 * 3.0)


def test_build_X_full_pass_recovers_A0():
    A0 = generate_ground_truth(3, 4, 2, 1.0, 0)
    rows, cols = np.divmod(np.arange(12), 4)
    obs = ObservationSet(Design.usr(3, 4), A0[rows, cols], rows=rows, cols=cols)
    assert np.allclose(build_X_matrix(obs), A0, atol=1e-14)


def test_build_X_requires_completion():
    obs = sample_observations(np.eye(2), Design("gaussian_full", 2, 2), NoiseModel.none(), 3, 0)
    with pytest.raises(InvalidDesignError):
        build_X_matrix(obs)


# --- closed form and solver --------------------------------------------------

def test_estimate_large_lambda_is_zero():
    _, obs = usr_instance()
    m1, m2 = obs.shape
    s1 = singular_values(build_X_matrix(obs))[0]
    lam = 2 * s1 / (m1 * m2)
    # at the tie the threshold can round one ulp below sigma_1
    assert np.linalg.norm(estimate_completion(obs, lam)) <= 1e-12 * s1
    assert np.all(estimate_completion(obs, lam * (1 + 1e-12)) == 0)


def test_estimate_small_lambda_tends_to_X():
    _, obs = usr_instance()
    assert np.allclose(estimate_completion(obs, 1e-14), build_X_matrix(obs), atol=1e-9)


def test_estimate_rejects_nonpositive_lambda():
    _, obs = usr_instance()
    with pytest.raises(InvalidParameterError):
        estimate_completion(obs, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_solver_matches_closed_form(seed):
    _, obs = usr_instance(seed=seed)
    for lam in (1e-3, 1e-2, 1e-1):
        a = estimate_completion(obs, lam)
        b = solve_penalized(obs, lam)
        assert np.linalg.norm(a - b) <= 1e-6 * (1 + np.linalg.norm(a))


def test_solver_huge_lambda_zero():
    _, obs = usr_instance()
    assert np.all(solve_penalized(obs, 1e6) == 0)


@pytest.mark.parametrize("kind", ["gaussian_full", "rademacher_full", "column_mask"])
def test_solver_full_designs_optimal_and_monotone(kind):
    A0 = generate_ground_truth(4, 3, 1, 1.0, 2)
    obs = sample_observations(A0, Design(kind, 4, 3), NoiseModel.gaussian(0.3), 40, 3)
    A, info = solve_penalized(obs, 0.05, return_info=True)
    assert info.converged
    assert np.all(np.diff(info.history) <= 1e-12 * (1 + np.abs(info.history[:-1])))
    assert check_optimality(A, obs, 0.05, tol=1e-6).passed


def test_solver_fixed_design_monotone():
    g = np.random.default_rng(4)
    X = g.standard_normal((30, 3, 3))
    obs = ObservationSet(Design.fixed(X), g.standard_normal(30))
    A, info = solve_penalized(obs, 0.1, SolverConfig(max_iters=20000), return_info=True)
    assert info.converged
    assert np.all(np.diff(info.history) <= 1e-12 * (1 + np.abs(info.history[:-1])))
    assert check_optimality(A, obs, 0.1, tol=1e-6).passed


def test_solver_divergence_detected():
    _, obs = usr_instance()
    with pytest.raises(NumericalError), np.errstate(over="ignore", invalid="ignore"):
        solve_penalized(obs, 1e-3, SolverConfig(step_size=1e308, max_iters=50))


def test_solver_config_validation():
    with pytest.raises(InvalidParameterError):
        SolverConfig(rel_tol=0)
    with pytest.raises(InvalidParameterError):
        SolverConfig(max_iters=0)


# --- optimality ---------------------------------------------------------------

def test_closed_form_passes_optimality():
    _, obs = usr_instance()
    lam = 0.02
    rep = check_optimality(estimate_completion(obs, lam), obs, lam, tol=1e-8)
    assert rep.passed and rep.closed_form_residual <= 1e-8


def test_perturbed_estimate_fails_optimality():
    _, obs = usr_instance()
    lam = 0.02
    A = estimate_completion(obs, lam) + 1e-2 * np.random.default_rng(0).standard_normal(obs.shape)
    assert not check_optimality(A, obs, lam, tol=1e-8).passed


def test_zero_estimate_optimal_iff_clipped():
    _, obs = usr_instance()
    m1, m2 = obs.shape
    s1 = singular_values(build_X_matrix(obs))[0]
    zero = np.zeros(obs.shape)
    assert check_optimality(zero, obs, 2 * s1 / (m1 * m2) * 1.01).passed
    assert not check_optimality(zero, obs, 2 * s1 / (m1 * m2) * 0.99).passed


# --- lambda rules -------------------------------------------------------------

def test_explicit_rule_value():
    obs = sample_observations(np.zeros((100, 100)), Design.usr(100, 100), NoiseModel.bounded_sign(1.0), 10**4, 0)
    rule = LambdaRule("explicit", c_star=1.0, C_star=4.0)
    # independent evaluation: 4 sqrt(log 200 / (100 * 10^4))
    assert select_lambda(rule, obs) == pytest.approx(0.00920722965200546, rel=1e-14)


def test_theory_rules_formulas():
    _, obs = usr_instance(m1=10, m2=8, n=500)
    t = 2.0
    L = t + math.log(18)
    b = select_lambda(LambdaRule("theory_bounded", t=t, c_star=1.5), obs)
    assert b == pytest.approx(4 * 1.5 * max(math.sqrt(L / (8 * 500)), 2 * L / 500))
    gz = select_lambda(LambdaRule("theory_gaussian", t=t, c_star=0.7, C_star=3.0, alpha=1.0), obs)
    assert gz == pytest.approx(3.0 * 0.7 * max(math.sqrt(L / (8 * 500)), L * math.log(8) / 500))


def test_default_t_is_log_m():
    _, obs = usr_instance(m1=10, m2=8, n=500)
    assert select_lambda(LambdaRule("theory_bounded"), obs) == pytest.approx(
        select_lambda(LambdaRule("theory_bounded", t=math.log(18)), obs))


def test_oracle_lambda_noiseless():
    A0 = generate_ground_truth(5, 5, 2, 1.0, 0)
    obs = sample_observations(A0, Design.usr(5, 5), NoiseModel.none(), 60, 1)
    M = obs.weighted_sum() / obs.n - A0 / 25
    assert select_lambda(LambdaRule("oracle"), obs, A0) == pytest.approx(2 * np.linalg.norm(M, 2), rel=1e-14)


def test_oracle_requires_A0_and_fixed_value():
    _, obs = usr_instance()
    with pytest.raises(MissingOracleError):
        select_lambda(LambdaRule("oracle"), obs)
    assert select_lambda(LambdaRule("fixed", value=0.123), obs) == 0.123
    with pytest.raises(InvalidParameterError):
        LambdaRule("fixed")


# --- oracle right-hand sides -------------------------------------------------

def test_sharp_constant_value():
    assert SHARP_CONSTANT == pytest.approx(1.4571067811865475, rel=1e-15)
    assert round(SHARP_CONSTANT, 4) == 1.4571


def test_oracle_rhs_zero_truth():
    Z = np.zeros((4, 4))
    assert oracle_rhs(Z, 0.1, 4.0, "slow") == 0
    assert oracle_rhs(Z, 0.1, 4.0, "fast") == 0
    assert oracle_rhs(Z, 0.1, 4.0, "schatten", q=1, tau_sq=0.5) == 0


def test_oracle_rhs_values():
    A0 = np.diag([3.0, 1.0, 0.0])
    assert oracle_rhs(A0, 0.1, 3.0, "slow") == pytest.approx(0.8)
    assert oracle_rhs(A0, 0.1, 3.0, "fast") == pytest.approx(SHARP_CONSTANT * 9 * 0.01 * 2)
    assert oracle_rhs(A0, 0.1, 3.0, "schatten", q=1, tau_sq=0.5) == pytest.approx(0.5 + 1 / 9)


def test_schatten_variant_bounds():
    A0 = generate_ground_truth(6, 6, 3, 1.0, 0)
    s2 = svd(A0).sigma[:3] ** 2 / 36
    tau_sq = 0.9 * s2.min()
    lam = math.sqrt(tau_sq / (SHARP_CONSTANT * 36))  # tau^2 = SHARP mu^2 lam^2
    sch = oracle_rhs(A0, lam, 6.0, "schatten", q=2, tau_sq=tau_sq)
    assert sch <= oracle_rhs(A0, lam, 6.0, "fast") * (1 + 1e-12)
    for q in (0.5, 1.0, 2.0):
        assert sch <= schatten_q_bound(A0, tau_sq, q) * (1 + 1e-12)
    with pytest.raises(InvalidParameterError):
        oracle_rhs(A0, lam, 6.0, "schatten", q=3, tau_sq=tau_sq)


def test_tau_squared_formula():
    assert tau_squared(4, 1, 10, 20, 100) == pytest.approx(SHARP_CONSTANT * 16 * 20 * math.log(30) / 100)


def test_slow_rate_candidates_and_rhs():
    A0 = generate_ground_truth(5, 4, 2, 1.0, 3)
    cands = slow_rate_candidates(A0)
    assert len(cands) == 4 and np.all(cands[0] == 0)
    d = Design.usr(5, 4)
    assert slow_rate_rhs(A0, 1e-6, d) <= oracle_rhs(A0, 1e-6, math.sqrt(20), "slow")
    assert slow_rate_rhs(A0, 1e6, d) == pytest.approx(np.sum(A0**2) / 20)


# --- deterministic oracle inequalities -------------------------------------

@given(st.integers(0, 10**6), st.integers(1, 3))
def test_oracle_inequalities_hold_with_oracle_lambda(seed, r):
    A0 = generate_ground_truth(12, 10, r, 1.0, seed)
    d = Design.usr(12, 10)
    obs = sample_observations(A0, d, NoiseModel.gaussian(0.5), 300, seed + 1)
    lam = 2 * m_norm(obs, A0)
    err = np.sum((estimate_completion(obs, lam) - A0) ** 2) / 120
    assert err <= slow_rate_rhs(A0, lam, d) * (1 + 1e-10)
    assert err <= oracle_rhs(A0, lam, math.sqrt(120), "fast") * (1 + 1e-10)


def test_objective_closed_form_is_minimum():
    _, obs = usr_instance()
    lam = 0.03
    A = estimate_completion(obs, lam)
    g = np.random.default_rng(1)
    f0 = objective(A, obs, lam)
    for _ in range(20):
        assert objective(A + 1e-3 * g.standard_normal(A.shape), obs, lam) >= f0

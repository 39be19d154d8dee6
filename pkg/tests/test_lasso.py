import json
import math

import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from tracereg.errors import DimensionError, InvalidParameterError
from tracereg.estimators import SolverConfig, solve_penalized
from tracereg.lasso import (KKT_TOL, LinearDesign, check_sharp_oracle, diag_embedding, failure_probability,
                            kappa_re, kkt_residual, lasso_objective, lasso_solve, read_regression_csv,
                            theorem10_lambda, wilson_standard_error, write_regression_csv)


def test_orthonormal_design():
    d = LinearDesign.orthonormal(40, 8, 0)
    assert np.allclose(d.gram, np.eye(8), atol=1e-12)
    assert d.normalized


def test_orthonormal_closed_form():
    d = LinearDesign.orthonormal(50, 6, 1)
    y = np.random.default_rng(2).standard_normal(50)
    lam = 0.2
    ols = d.X.T @ y / d.n
    expected = np.sign(ols) * np.maximum(np.abs(ols) - lam / 2, 0)
    assert np.allclose(lasso_solve(d, y, lam), expected, atol=1e-10)


def test_lambda_above_max_gives_zero():
    g = np.random.default_rng(3)
    d = LinearDesign(g.standard_normal((30, 5)))
    y = g.standard_normal(30)
    lam = float(np.max(np.abs(2 / 30 * d.X.T @ y)))
    assert np.all(lasso_solve(d, y, lam) == 0)


@given(st.integers(0, 10**6))
@example(3123)
def test_kkt_on_random_instances(seed):
    g = np.random.default_rng(seed)
    n, p = g.integers(5, 40), g.integers(1, 12)
    d = LinearDesign(g.standard_normal((n, p)))
    y = g.standard_normal(n)
    lam = float(10 ** g.uniform(-3, 0))
    beta = lasso_solve(d, y, lam)
    assert kkt_residual(d, y, beta, lam) <= KKT_TOL


@pytest.mark.parametrize("seed", range(10))
def test_diag_embedding_matches_matrix_solver(seed):
    g = np.random.default_rng(seed)
    n, p = int(g.integers(10, 40)), int(g.integers(2, 6))
    d = LinearDesign(g.standard_normal((n, p)))
    y = g.standard_normal(n)
    lam = 0.1
    beta = lasso_solve(d, y, lam)
    A = solve_penalized(diag_embedding(d, y), lam, SolverConfig(max_iters=100000, rel_tol=1e-12))
    assert np.allclose(np.diag(A), beta, atol=1e-6)
    assert np.max(np.abs(A - np.diag(np.diag(A)))) <= 1e-6


def test_lasso_objective_minimum():
    g = np.random.default_rng(4)
    d = LinearDesign(g.standard_normal((25, 4)))
    y = g.standard_normal(25)
    b = lasso_solve(d, y, 0.05)
    f = lasso_objective(d, y, b, 0.05)
    for _ in range(20):
        assert lasso_objective(d, y, b + 1e-3 * g.standard_normal(4), 0.05) >= f


def test_lasso_validation():
    d = LinearDesign(np.eye(3))
    with pytest.raises(DimensionError):
        lasso_solve(d, np.zeros(2), 0.1)
    with pytest.raises(InvalidParameterError):
        lasso_solve(d, np.zeros(3), 0.0)


def test_theorem10_lambda():
    assert theorem10_lambda(1.0, math.e, 1) == pytest.approx(3 * math.sqrt(2))
    assert theorem10_lambda(2.0, 50, 10) == pytest.approx(2 * theorem10_lambda(1.0, 50, 10))
    assert theorem10_lambda(0.5, 100, 400) == pytest.approx(0.227614069407772, rel=1e-13)
    with pytest.raises(InvalidParameterError):
        theorem10_lambda(1.0, 10, 10, a=0.5)


def test_failure_probability():
    assert failure_probability(16, 1.0) == pytest.approx(0.338830375801552, rel=1e-13)
    assert failure_probability(16, 2.0) < failure_probability(16, 1.0)


def test_kappa_orthonormal_is_one():
    d = LinearDesign.orthonormal(64, 8, 0)
    for s in (1, 2):
        assert abs(kappa_re(d, s, 5.0, 1000, 1) - 1) <= 1e-3


def test_kappa_duplicate_column_is_zero():
    g = np.random.default_rng(5)
    X = g.standard_normal((40, 5))
    X[:, 1] = X[:, 0]
    X /= np.sqrt(np.sum(X**2, axis=0) / 40)
    assert kappa_re(LinearDesign(X), 1, 5.0) <= 1e-6


def test_kappa_at_most_one_for_normalized_columns():
    g = np.random.default_rng(6)
    X = g.standard_normal((30, 6))
    X /= np.sqrt(np.sum(X**2, axis=0) / 30)
    assert kappa_re(LinearDesign(X), 2, 5.0, seed=0) <= 1 + 1e-12


def test_kappa_scale_limits():
    with pytest.raises(InvalidParameterError):
        kappa_re(LinearDesign(np.eye(17)), 1)
    with pytest.raises(InvalidParameterError):
        kappa_re(LinearDesign(np.eye(8)), 4)
    with pytest.raises(InvalidParameterError):
        kappa_re(LinearDesign(np.eye(8)), 1, budget=999)


def test_wilson_se():
    assert wilson_standard_error(0, 100) == pytest.approx(0.005 / 1.01)
    assert wilson_standard_error(50, 100) == pytest.approx(math.sqrt(0.25 / 100 + 1 / 40000) / 1.01)


def test_sharp_oracle_orthonormal():
    d = LinearDesign.orthonormal(64, 16, 0)
    beta = np.zeros(16)
    beta[:2] = 1.0
    v = check_sharp_oracle(d, beta, 0.3, 200, 1, kappa=1.0)
    assert v.passed and v.max_kkt <= KKT_TOL and v.violations_on_event == 0
    assert json.loads(v.to_json())["passed"] is True


def test_sharp_oracle_zero_beta():
    d = LinearDesign.orthonormal(64, 16, 0)
    v = check_sharp_oracle(d, np.zeros(16), 0.3, 200, 2)
    assert v.rhs == 0 and v.passed and v.violations_on_event == 0


def test_noiseless_small_lambda():
    d = LinearDesign.orthonormal(32, 4, 0)
    beta = np.array([1.0, 0, -2.0, 0])
    b = lasso_solve(d, d.X @ beta, 1e-9)
    assert np.sum((d.X @ (b - beta)) ** 2) / 32 <= 1e-16


def test_regression_csv_roundtrip(tmp_path):
    g = np.random.default_rng(7)
    d = LinearDesign(g.standard_normal((6, 3)))
    y = g.standard_normal(6)
    write_regression_csv(tmp_path / "r.csv", d, y)
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "6 3"
    d2, y2 = read_regression_csv(tmp_path / "r.csv")
    assert np.array_equal(d2.X, d.X) and np.array_equal(y2, y)

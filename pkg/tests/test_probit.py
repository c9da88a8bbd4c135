import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from reformchannels.errors import DegenerateLabelError, NonConvergenceError, SingularDesignError
from reformchannels.probit import (
    PropensityFit,
    average_marginal_effect,
    fit_probit,
    predict_probability,
    probit_score,
)


def probit_sample(n, beta, seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, len(beta) - 1))])
    y = (X @ beta + rng.standard_normal(n) > 0).astype(float)
    return X, y


def oracle_loglik(beta, X, y, w):
    # Independent of the package: scipy's normal log-cdf.
    z = X @ beta
    return float(np.sum(w * np.where(y == 1, stats.norm.logcdf(z), stats.norm.logcdf(-z))))


def test_intercept_only_symmetric():
    X = np.ones((100, 1))
    y = np.array([0.0, 1.0] * 50)
    fit = fit_probit(X, y)
    assert abs(fit.coefficients[0]) < 1e-12
    assert fit.converged


def test_matches_derivative_free_oracle():
    X, y = probit_sample(200, np.array([0.3, -0.5]), seed=1)
    w = np.ones(200)
    fit = fit_probit(X, y, w)
    res = optimize.minimize(lambda b: -oracle_loglik(b, X, y, w), x0=np.zeros(2),
                            method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 20000})
    np.testing.assert_allclose(fit.coefficients, res.x, atol=1e-4)
    assert fit.log_likelihood == pytest.approx(oracle_loglik(res.x, X, y, w), abs=1e-8)


def test_separation_raises():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(80)
    X = np.column_stack([np.ones(80), x])
    with pytest.raises(NonConvergenceError) as info:
        fit_probit(X, (x > 0).astype(float))
    assert info.value.last_iterate is not None


def test_degenerate_labels():
    with pytest.raises(DegenerateLabelError):
        fit_probit(np.ones((5, 1)), np.ones(5))


def test_singular_design_names_columns():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(50)
    X = np.column_stack([np.ones(50), x, 2 * x])
    y = (rng.random(50) < 0.5).astype(float)
    with pytest.raises(SingularDesignError) as info:
        fit_probit(X, y, column_names=["const", "a", "b"])
    assert set(info.value.columns) & {"a", "b"}


def test_predict_examples():
    assert np.all(predict_probability(np.zeros(3), np.ones((4, 3))) == 0.5)
    assert predict_probability(np.array([0.0, 1.0]), [[1.0, 0.0]])[0] == 0.5
    # Frozen from adaptive quadrature of the normal density over (-inf, -0.2].
    assert predict_probability(np.array([0.3, -0.5]), [[1.0, 1.0]])[0] == pytest.approx(
        0.420740290560897, abs=1e-12)


def test_predict_clips_and_checks_dimensions():
    p = predict_probability(np.array([50.0]), [[1.0], [-1.0]])
    assert p[0] == 1 - 1e-12 and p[1] == 1e-12
    with pytest.raises(ValueError):
        predict_probability(np.zeros(2), np.ones((3, 3)))


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed):
    X, y = probit_sample(150, np.array([0.2, -0.4, 0.7]), seed=100 + seed)
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.5, 2.0, 150)
    beta = rng.normal(scale=0.8, size=3)
    g = probit_score(beta, X, y, w)
    h = 1e-5
    fd = np.array([
        (oracle_loglik(beta + h * e, X, y, w) - oracle_loglik(beta - h * e, X, y, w)) / (2 * h)
        for e in np.eye(3)
    ])
    assert np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(fd))) <= 1e-6


def test_loglik_path_non_decreasing():
    X, y = probit_sample(400, np.array([-0.3, 0.9, 0.5]), seed=8)
    fit = fit_probit(X, y, start=np.array([3.0, -3.0, 3.0]))
    path = np.array(fit.meta["loglik_path"])
    assert np.all(np.diff(path) >= 0)


def test_converged_implies_small_score():
    X, y = probit_sample(500, np.array([0.1, 0.4, -0.2]), seed=4)
    fit = fit_probit(X, y)
    assert fit.converged and fit.max_score <= 1e-8
    raw = probit_score(fit.coefficients, X, y, np.ones(500)) / 500
    assert np.max(np.abs(raw)) <= 1e-8


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 10_000))
def test_weight_scale_invariance(scale, seed):
    X, y = probit_sample(120, np.array([0.2, -0.6]), seed=seed)
    if y.min() == y.max():
        return
    w = np.random.default_rng(seed).uniform(0.2, 3.0, 120)
    try:
        a = fit_probit(X, y, w)
    except NonConvergenceError:
        return
    b = fit_probit(X, y, w * scale)
    np.testing.assert_allclose(a.coefficients, b.coefficients, rtol=0, atol=1e-10)


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=30))
def test_prediction_monotone_in_index(zs):
    zs = np.sort(np.array(zs))
    p = predict_probability(np.array([1.0]), zs[:, None])
    assert np.all(np.diff(p) >= 0)


def test_warm_start_reaches_same_optimum():
    X, y = probit_sample(300, np.array([0.5, -1.0, 0.2]), seed=2)
    a = fit_probit(X, y)
    b = fit_probit(X, y, start=a.coefficients + 0.05)
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-9)


def test_ame_zero_coefficient():
    X = np.column_stack([np.ones(10), np.linspace(-1, 1, 10)])
    assert average_marginal_effect(np.array([0.3, 0.0]), X, 1) == 0.0


def test_ame_two_cell_closed_form():
    # Saturated model with a binary dummy: fitted cell probabilities equal the
    # empirical cell shares, so the AME is the difference of the shares.
    n0, k0, n1, k1 = 40, 10, 60, 42
    x = np.r_[np.zeros(n0), np.ones(n1)]
    y = np.r_[np.ones(k0), np.zeros(n0 - k0), np.ones(k1), np.zeros(n1 - k1)]
    X = np.column_stack([np.ones(n0 + n1), x])
    fit = fit_probit(X, y)
    assert average_marginal_effect(fit, X, 1) == pytest.approx(k1 / n1 - k0 / n0, abs=1e-9)


def test_ame_continuous_matches_numeric_derivative():
    X, y = probit_sample(300, np.array([0.1, 0.6]), seed=9)
    fit = fit_probit(X, y)
    h = 1e-6
    Xp, Xm = X.copy(), X.copy()
    Xp[:, 1] += h
    Xm[:, 1] -= h
    num = np.mean(stats.norm.cdf(Xp @ fit.coefficients) - stats.norm.cdf(Xm @ fit.coefficients)) / (2 * h)
    assert average_marginal_effect(fit, X, 1) == pytest.approx(num, rel=1e-6)
    with pytest.raises(IndexError):
        average_marginal_effect(fit, X, 5)


def test_fit_serializes():
    X, y = probit_sample(100, np.array([0.0, 1.0]), seed=5)
    d = fit_probit(X, y).to_dict()
    assert d["converged"] and len(d["coefficients"]) == 2 and math.isfinite(d["log_likelihood"])
    assert isinstance(fit_probit(X, y), PropensityFit)

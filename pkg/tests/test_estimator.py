import warnings

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from adfslab import ADFSClassifier, ADFSRegressor


def data(seed=0, N=80, d=3):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, d))
    w = rng.standard_normal(d)
    return X, X @ w + 0.5 + 0.1 * rng.standard_normal(N)


def ridge_oracle(X, y, alpha):
    Z = np.hstack([X, np.ones((len(X), 1))])
    return np.linalg.solve(Z.T @ Z + alpha * np.eye(Z.shape[1]), Z.T @ y)


def logistic_oracle(X, s, alpha):
    Z = np.hstack([X, np.ones((len(X), 1))])

    def f(w):
        m = s * (Z @ w)
        return np.sum(np.logaddexp(0, -m)) + 0.5 * alpha * w @ w, -Z.T @ (s * expit(-m)) + alpha * w

    return minimize(f, np.zeros(Z.shape[1]), jac=True, method="L-BFGS-B",
                    options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 10_000}).x


@pytest.mark.parametrize("topology,n_nodes", [("complete", 4), ("ring", 5), ("path", 1)])
def test_regressor_matches_ridge(topology, n_nodes):
    X, y = data(N=80 - 80 % n_nodes)
    est = ADFSRegressor(topology=topology, n_nodes=n_nodes, alpha=2.0, max_iter=20_000).fit(X, y)
    w = ridge_oracle(X, y, 2.0)
    np.testing.assert_allclose(est.coef_, w[:-1], atol=1e-4)
    assert est.intercept_ == pytest.approx(w[-1], abs=1e-4)
    assert est.consensus_gap_ < 1e-3
    assert est.score(X, y) > 0.9


def test_classifier_matches_logistic_oracle():
    X, t = data(1, N=120)
    y = np.where(t > np.median(t), "yes", "no")
    est = ADFSClassifier(n_nodes=4, alpha=1.0, max_iter=30_000).fit(X, y)
    w = logistic_oracle(X, np.where(y == "yes", 1.0, -1.0), 1.0)
    np.testing.assert_allclose(np.r_[est.coef_, est.intercept_], w, atol=1e-4)
    assert est.classes_.tolist() == ["no", "yes"]
    P = est.predict_proba(X)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    assert set(est.predict(X)) <= {"no", "yes"}
    assert np.array_equal(est.predict(X) == "yes", P[:, 1] > 0.5)
    assert est.score(X, y) > 0.8


def test_default_iteration_budget_is_reasonable():
    X, y = data(2)
    est = ADFSRegressor(n_nodes=4).fit(X, y)
    assert est.n_iter_ == int(np.ceil(30 / est.rate_))
    np.testing.assert_allclose(np.r_[est.coef_, est.intercept_], ridge_oracle(X, y, 1.0), atol=1e-2)


def test_sklearn_protocol():
    est = ADFSClassifier(n_nodes=3, alpha=0.5)
    params = est.get_params()
    assert params["n_nodes"] == 3 and params["alpha"] == 0.5
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    with pytest.raises(NotFittedError):
        est.predict(np.zeros((2, 3)))


def test_dropped_samples_warn():
    X, y = data(N=81)
    with pytest.warns(UserWarning, match="1 samples left out"):
        est = ADFSRegressor(n_nodes=4, max_iter=100).fit(X, y)
    assert est.n_dropped_ == 1
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert ADFSRegressor(n_nodes=3, max_iter=100).fit(X, y).n_dropped_ == 0


def test_input_errors():
    X, y = data()
    est = ADFSRegressor(n_nodes=4, max_iter=50).fit(X, y)
    with pytest.raises(ValueError, match="features"):
        est.predict(np.zeros((2, 5)))
    with pytest.raises(ValueError, match="binary"):
        ADFSClassifier(max_iter=10).fit(X, np.arange(len(X)) % 3)
    with pytest.raises(ValueError):
        ADFSRegressor(alpha=0).fit(X, y)
    with pytest.raises(ValueError):
        ADFSRegressor(n_nodes=200).fit(X, y)

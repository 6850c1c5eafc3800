"""scikit-learn style wrappers that fit linear models with decentralized ADFS.

The training set is shuffled and split into equal local datasets, one per
node of the chosen topology; the solver then runs on the simulated network.
The fitted coefficients are the average of the node estimates. Samples that
do not fill a complete share (``n_samples mod n_nodes``) are left out and
counted in ``n_dropped_``.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .adfs import SparseADFS, select_parameters
from .graph import augment, build_topology, single_node, spectral_quantities
from .problem import ProblemSpec
from .schedule import inverse_cdf_draws


class _ADFSBase(BaseEstimator):
    _loss = ""

    def __init__(self, topology="complete", n_nodes=4, alpha=1.0, fit_intercept=True,
                 max_iter=None, p_comm=None, random_state=0):
        self.topology = topology
        self.n_nodes = n_nodes
        self.alpha = alpha
        self.fit_intercept = fit_intercept
        self.max_iter = max_iter
        self.p_comm = p_comm
        self.random_state = random_state

    def _design(self, X):
        if self.fit_intercept:
            return np.hstack([X, np.ones((X.shape[0], 1))])
        return X

    def _fit_targets(self, X, t):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        n = int(self.n_nodes)
        if n < 1:
            raise ValueError("n_nodes must be at least 1")
        N = X.shape[0]
        m = N // n
        if m < 1:
            raise ValueError(f"{N} samples cannot fill {n} nodes")
        Z = self._design(X)
        if np.any(np.einsum("ij,ij->i", Z, Z) == 0):
            raise ValueError("all-zero sample rows are not supported; set fit_intercept=True")
        rng = np.random.default_rng(self.random_state)
        idx = rng.permutation(N)[: n * m].reshape(n, m)
        self.n_dropped_ = N - n * m
        if self.n_dropped_:
            warnings.warn(f"{self.n_dropped_} samples left out to balance {n} nodes", stacklevel=3)
        # alpha is the total l2 weight, shared evenly between nodes
        prob = ProblemSpec(self._loss, Z[idx], t[idx], self.alpha / n)
        graph = single_node() if n == 1 else build_topology(self.topology, n)
        aug = augment(graph, prob.L, prob.sigma)
        spectra = spectral_quantities(aug)
        overrides = {"p_comm": self.p_comm} if (self.p_comm is not None and n > 1) else None
        plan = select_parameters(aug, spectra, prob.summary(), overrides=overrides)
        K = int(self.max_iter) if self.max_iter is not None else int(math.ceil(30.0 / plan.rho))
        solver = SparseADFS(prob, aug, plan, spectra.R)
        seed = 0 if self.random_state is None else int(self.random_state)
        for col in inverse_cdf_draws(plan.p, K, seed):
            solver.step(int(col))
        _, vc = solver.centers()
        thetas = vc / prob.sigma[:, None]
        self.node_coefs_ = thetas
        self.consensus_gap_ = float(np.max(np.linalg.norm(thetas - thetas.mean(0), axis=1)))
        w = thetas.mean(axis=0)
        if self.fit_intercept:
            self.coef_, self.intercept_ = w[:-1], float(w[-1])
        else:
            self.coef_, self.intercept_ = w, 0.0
        self.n_iter_ = K
        self.rate_ = plan.rho
        self.n_features_in_ = X.shape[1]
        return self

    def _linear(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_ + self.intercept_


class ADFSRegressor(RegressorMixin, _ADFSBase):
    """Ridge regression ``sum_k (x_k . w - y_k)^2 / 2 + alpha ||w||^2 / 2`` solved by ADFS.

    Parameters
    ----------
    topology : {"complete", "ring", "path", "grid2d"}
    n_nodes : int
        Number of simulated machines; ``1`` runs the single-machine solver.
    alpha : float
        Total l2 weight. The loss is a plain sum over samples, not a mean.
    fit_intercept : bool
        Appends a constant feature; the intercept is regularized too.
    max_iter : int or None
        Iterations; defaults to ``ceil(30 / rho)``.
    p_comm : float or None
        Communication share override.
    random_state : int
        Seeds both the data split and the shared edge schedule.
    """

    _loss = "quadratic"

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        return self._fit_targets(X, y.astype(float))

    def predict(self, X):
        return self._linear(X)


class ADFSClassifier(ClassifierMixin, _ADFSBase):
    """Binary l2-regularized logistic regression solved by ADFS.

    Same parameters as :class:`ADFSRegressor`. Labels may be any two values;
    ``classes_[1]`` is the positive class.
    """

    _loss = "logistic"

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        check_classification_targets(y)
        self.classes_, enc = np.unique(y, return_inverse=True)
        if len(self.classes_) != 2:
            raise ValueError(f"binary labels required, got {len(self.classes_)} classes")
        return self._fit_targets(X, np.where(enc == 1, 1.0, -1.0))

    def decision_function(self, X):
        return self._linear(X)

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores > 0).astype(int)]

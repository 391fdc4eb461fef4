"""scikit-learn style wrapper around the privacy-constrained solver."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .risk import RiskConfig, TrainingSet
from .solver import InnerConfig, SolverConfig, decision_scores, solve

__all__ = ["NPOClassifier"]


class NPOClassifier(ClassifierMixin, BaseEstimator):
    """Learns sensor mappings and a fusion rule for a binary public label.

    ``X`` holds 1-based discrete sensor observations (one column per sensor),
    ``y`` the public label and ``g`` the private label passed to :meth:`fit`.
    Without ``g`` the mappings are fitted with no privacy constraint.

    Parameters
    ----------
    z_card : int
        Message alphabet size per sensor.
    metric : {"normalized", "bayes", "none"}
        Privacy constraint used during fitting.
    mode : {"expected", "sampled"}
        How :meth:`decision_function` scores new observations.
    """

    def __init__(
        self,
        z_card=2,
        loss="logistic",
        kernel="count",
        lam=None,
        lam_n=None,
        delta1=0.005,
        delta2=0.005,
        mu=100.0,
        p_ratio=0.999,
        stop_tol=1e-4,
        max_outer=200,
        max_inner=500,
        metric="normalized",
        mode="expected",
        x_card=None,
        random_state=0,
    ):
        self.z_card = z_card
        self.loss = loss
        self.kernel = kernel
        self.lam = lam
        self.lam_n = lam_n
        self.delta1 = delta1
        self.delta2 = delta2
        self.mu = mu
        self.p_ratio = p_ratio
        self.stop_tol = stop_tol
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.metric = metric
        self.mode = mode
        self.x_card = x_card
        self.random_state = random_state

    def _configs(self):
        scfg = SolverConfig(
            delta1=self.delta1,
            delta2=self.delta2,
            mu=self.mu,
            p_ratio=self.p_ratio,
            stop_tol=self.stop_tol,
            max_outer=self.max_outer,
            inner=InnerConfig(max_iter=self.max_inner),
            seed=self.random_state,
        )
        rcfg = RiskConfig(lam=self.lam, lam_n=self.lam_n, loss=self.loss, kernel=self.kernel)
        return scfg, rcfg

    def fit(self, X, y, g=None):
        X, y = check_X_y(X, y, dtype=np.int64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) != 2:
            raise ValueError("the public label must have exactly two classes")
        hs = np.where(y == self.classes_[1], 1, -1)
        metric = self.metric
        if g is None:
            g, metric = np.ones(len(y), dtype=int), "none"
        g = check_array(np.asarray(g).reshape(-1, 1), dtype=np.int64).ravel()
        ts = TrainingSet(X, hs, g, self.x_card)
        scfg, rcfg = self._configs()
        self.result_ = solve(ts, scfg, rcfg, self.z_card, metric)
        self.mapping_ = self.result_.Q
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "result_")
        X = check_array(X, dtype=np.int64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} sensors, got {X.shape[1]}")
        return X

    def decision_function(self, X):
        X = self._check(X)
        return decision_scores(self.result_, X, self.mode, self.random_state)

    def predict(self, X):
        scores = self.decision_function(X)
        return np.where(scores >= 0, self.classes_[1], self.classes_[0])

    def transform(self, X):
        """Sample one message vector per row through the fitted mappings."""
        X = self._check(X)
        return self.mapping_.sample(X, np.random.default_rng(self.random_state))

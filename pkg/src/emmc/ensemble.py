"""Coordinator-side aggregation of node summaries into a multi-class posterior.

For a query point ``x`` the weight of node ``j`` is

    w_j(x) = f_j(x) p_j / sum_l f_l(x) p_l,     p_j = n_j / sum_l n_l,

evaluated as a softmax over ``log f_j(x) + log p_j``. The posterior of class
``m`` sums ``w_j(x) * c_j^m(x)`` over the nodes that hold ``m``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._seeding import derive_seed
from .datasets import Dataset
from .exceptions import DataError, NumericError
from .node import NodeConfig, NodeSummary, fit_node

__all__ = ["EnsembleModel", "PosteriorResult", "JensenReport", "EMMCClassifier"]

_NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PosteriorResult:
    """Posterior over all classes plus the per-node weights that produced it.

    All arrays have one row per query point; node columns follow
    ``EnsembleModel.node_ids``.
    """

    posterior: np.ndarray
    weights: np.ndarray
    log_node_densities: np.ndarray


@dataclass(frozen=True, eq=False)
class JensenReport:
    """Where the weight condition ``w_j >= c_j^m ** (J-1) / J`` fails.

    ``violations[i, j, k]`` refers to point ``i``, node ``j`` and the ``k``-th
    class of that node. Purely diagnostic.
    """

    node_ids: tuple
    node_classes: tuple
    violations: np.ndarray

    @property
    def rate(self):
        return float(self.violations.mean()) if self.violations.size else 0.0

    def per_node_class(self):
        """``{(node_id, class): violation fraction over the query points}``."""
        out = {}
        for j, (node, pair) in enumerate(zip(self.node_ids, self.node_classes)):
            for k, c in enumerate(pair):
                out[(node, c)] = float(self.violations[:, j, k].mean())
        return out


class EnsembleModel:
    """Global classifier assembled from one-shot node summaries.

    Parameters
    ----------
    summaries : sequence of NodeSummary
    num_classes : int, optional
        Total number of classes ``M + 1``; defaults to one more than the
        largest class id held by any node. Every class must be held by at
        least one node.
    """

    def __init__(self, summaries, num_classes=None):
        summaries = list(summaries)
        if not summaries:
            raise DataError("an ensemble needs at least one node summary")
        held = sorted({c for s in summaries for c in s.classes})
        if num_classes is None:
            num_classes = held[-1] + 1
        if held[0] < 0 or held[-1] >= num_classes:
            raise DataError(f"node classes {held} exceed num_classes={num_classes}")
        missing = sorted(set(range(num_classes)) - set(held))
        if missing:
            word = "class" if len(missing) == 1 else "classes"
            raise DataError(f"{word} {', '.join(map(str, missing))} uncovered")
        dims = {s.dim for s in summaries if s.dim is not None}
        if len(dims) > 1:
            raise DataError(f"node summaries disagree on feature dimension: {sorted(dims)}")
        ids = [s.node_id for s in summaries]
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate node ids {ids}")
        counts = np.array([s.n for s in summaries], dtype=np.float64)
        self.summaries = tuple(summaries)
        self.num_classes = int(num_classes)
        self.classes_ = np.arange(self.num_classes)
        self.priors = counts / counts.sum()
        self.log_priors = np.log(self.priors)
        self.dim = dims.pop() if dims else None

    @classmethod
    def build(cls, summaries, num_classes=None):
        return cls(summaries, num_classes)

    @property
    def node_ids(self):
        return tuple(s.node_id for s in self.summaries)

    def _check_X(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        X = check_array(X, ensure_min_samples=0)
        if self.dim is not None and X.shape[1] != self.dim:
            raise DataError(f"query has {X.shape[1]} features, ensemble expects {self.dim}")
        return X

    def _weights(self, X):
        log_f = np.column_stack([s.log_density(X) for s in self.summaries])
        logits = log_f + self.log_priors
        top = np.max(logits, axis=1, keepdims=True)
        if not np.all(np.isfinite(top)):
            raise NumericError("every node density is zero or undefined at a query point")
        w = np.exp(logits - top)
        w /= w.sum(axis=1, keepdims=True)
        return w, log_f

    def posterior(self, X) -> PosteriorResult:
        """Ensemble posterior, node weights and node log densities at ``X``."""
        X = self._check_X(X)
        w, log_f = self._weights(X)
        post = np.zeros((X.shape[0], self.num_classes))
        for j, s in enumerate(self.summaries):
            local = s.predict_proba(X)
            post[:, s.classes[0]] += w[:, j] * local[:, 0]
            post[:, s.classes[1]] += w[:, j] * local[:, 1]
        if post.size:
            dev = np.max(np.abs(post.sum(axis=1) - 1.0))
            if not dev <= _NORMALIZATION_TOL:
                raise NumericError(f"posterior rows deviate from 1 by {dev:.3g}")
        return PosteriorResult(post, w, log_f)

    def predict_proba(self, X):
        return self.posterior(X).posterior

    def predict(self, X):
        """Arg-max class; ties go to the lowest class id."""
        return np.argmax(self.predict_proba(X), axis=1)

    def jensen_condition_report(self, X) -> JensenReport:
        X = self._check_X(X)
        w, _ = self._weights(X)
        J = len(self.summaries)
        viol = np.empty((X.shape[0], J, 2), dtype=bool)
        for j, s in enumerate(self.summaries):
            local = s.predict_proba(X)
            viol[:, j, :] = w[:, j, None] < local ** (J - 1) / J
        return JensenReport(self.node_ids, tuple(s.classes for s in self.summaries), viol)

    def manifest(self):
        """JSON-ready description of the assembled model."""
        return {
            "num_classes": self.num_classes,
            "dim": self.dim,
            "nodes": [
                {"node_id": s.node_id, "n": s.n, "classes": list(s.classes), "prior": float(p)}
                for s, p in zip(self.summaries, self.priors)
            ],
        }


class EMMCClassifier(ClassifierMixin, BaseEstimator):
    """In-process estimator: fit every node on its own slice, then aggregate.

    ``fit(X, y, groups)`` treats each distinct value of ``groups`` as one node
    (node ids are the group values). This path is equivalent to running each
    node separately and aggregating their serialized summaries.

    Parameters
    ----------
    classifier : str, default="logistic"
    n_components : int or dict, default=3
        GMM components per node; a dict maps node id to ``K``.
    balance_cap : int or None
    classifier_params : dict or None
    tol, reg_covar, max_iter : EM settings
    random_state : int, default=0
    """

    def __init__(self, classifier="logistic", n_components=3, balance_cap=None,
                 classifier_params=None, tol=1e-6, reg_covar=1e-6, max_iter=500,
                 random_state=0):
        self.classifier = classifier
        self.n_components = n_components
        self.balance_cap = balance_cap
        self.classifier_params = classifier_params
        self.tol = tol
        self.reg_covar = reg_covar
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y, groups):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        groups = np.asarray(groups)
        if groups.shape[0] != X.shape[0] or y.shape[0] != X.shape[0]:
            raise DataError("X, y and groups must have the same length")
        num_classes = int(y.max()) + 1
        summaries = []
        for node in np.unique(groups):
            sel = groups == node
            K = (self.n_components[int(node)] if isinstance(self.n_components, dict)
                 else self.n_components)
            config = NodeConfig(
                classifier=self.classifier,
                classifier_params=dict(self.classifier_params or {}),
                n_components=int(K),
                tol=self.tol,
                reg_covar=self.reg_covar,
                max_iter=self.max_iter,
                balance_cap=self.balance_cap,
                seed=derive_seed(self.random_state, int(node), "node"),
            )
            data = Dataset(X[sel], y[sel], num_classes)
            summaries.append(fit_node(int(node), data, config))
        self.ensemble_ = EnsembleModel(summaries, num_classes)
        self.summaries_ = self.ensemble_.summaries
        self.classes_ = self.ensemble_.classes_
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "ensemble_")
        return self.ensemble_.predict_proba(X)

    def predict(self, X):
        check_is_fitted(self, "ensemble_")
        return self.ensemble_.predict(X)

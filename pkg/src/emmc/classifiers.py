"""Local binary classifiers and the pooled-data multinomial baseline.

A binary classifier exposes ``classes_`` (a sorted pair), ``fit(X, y,
classes=None)``, ``predict_proba(X)`` with columns in ``classes_`` order,
and a JSON-friendly ``get_state()`` / ``from_state()`` pair. New kinds plug
in through :func:`register_classifier`.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigError, DataError, SchemaError

__all__ = [
    "LogisticBinaryClassifier",
    "GaussianNBBinaryClassifier",
    "MultinomialLogisticClassifier",
    "logistic_loss_grad",
    "softmax_loss_grad",
    "gradient_descent",
    "register_classifier",
    "make_classifier",
    "classifier_from_state",
    "CLASSIFIER_KINDS",
]


def logistic_loss_grad(theta, Z, t, alpha):
    """Mean binary cross-entropy plus ``alpha/2 * ||w||^2`` and its gradient.

    ``theta`` is ``[w_1..w_d, b]``; ``t`` is 1 for the first class. The
    intercept is not penalized.
    """
    w, b = theta[:-1], theta[-1]
    z = Z @ w + b
    loss = np.mean(np.logaddexp(0.0, z) - t * z) + 0.5 * alpha * (w @ w)
    r = (expit(z) - t) / Z.shape[0]
    grad = np.empty_like(theta)
    grad[:-1] = Z.T @ r + alpha * w
    grad[-1] = r.sum()
    return loss, grad


def softmax_loss_grad(theta, Z, T, alpha):
    """Mean multinomial cross-entropy with L2 on the weights (not intercepts).

    ``theta`` flattens a ``(d + 1, C)`` matrix whose last row is the intercept;
    ``T`` is the one-hot target matrix.
    """
    d, C = Z.shape[1], T.shape[1]
    P = theta.reshape(d + 1, C)
    W, b = P[:-1], P[-1]
    S = Z @ W + b
    lse = logsumexp(S, axis=1)
    loss = np.mean(lse - np.sum(T * S, axis=1)) + 0.5 * alpha * np.sum(W * W)
    R = (np.exp(S - lse[:, None]) - T) / Z.shape[0]
    grad = np.empty_like(P)
    grad[:-1] = Z.T @ R + alpha * W
    grad[-1] = R.sum(axis=0)
    return loss, grad.ravel()


def gradient_descent(fun, theta0, tol=1e-6, max_iter=5000, c1=1e-4, max_halvings=60):
    """Full-batch gradient descent with Armijo backtracking.

    Trial steps come from the Barzilai-Borwein rule and are halved until the
    sufficient-decrease condition holds, so the loss never increases.

    Returns
    -------
    theta : ndarray
    losses : list of float
        Loss at every accepted iterate, starting from ``theta0``.
    converged : bool
        Whether the gradient norm reached ``tol``.
    """
    theta = np.array(theta0, dtype=np.float64)
    loss, grad = fun(theta)
    losses = [loss]
    step = 1.0
    prev = None
    for _ in range(max_iter):
        gnorm2 = grad @ grad
        if np.sqrt(gnorm2) <= tol:
            return theta, losses, True
        if prev is not None:
            s, yv = theta - prev[0], grad - prev[1]
            sy = s @ yv
            if sy > 0:
                step = float(np.clip((s @ s) / sy, 1e-10, 1e10))
        for _ in range(max_halvings):
            cand = theta - step * grad
            cand_loss, cand_grad = fun(cand)
            if cand_loss <= loss - c1 * step * gnorm2:
                break
            step *= 0.5
        else:
            # no decrease possible at machine precision
            return theta, losses, False
        prev = (theta, grad)
        theta, loss, grad = cand, cand_loss, cand_grad
        losses.append(loss)
    return theta, losses, bool(np.sqrt(grad @ grad) <= tol)


def _check_binary_target(y, classes):
    present = np.unique(y)
    if classes is None:
        if present.size != 2:
            raise DataError(
                f"binary classifier needs exactly 2 classes, found {present.tolist()}"
            )
        return present
    classes = np.array(sorted(int(c) for c in classes))
    if classes.size != 2 or classes[0] == classes[1]:
        raise DataError(f"expected two distinct classes, got {classes.tolist()}")
    extra = np.setdiff1d(present, classes)
    if extra.size:
        raise DataError(f"unexpected class labels {extra.tolist()}")
    for c in classes:
        if c not in present:
            raise DataError(f"class {int(c)} is absent from the training data")
    return classes


def _standardize(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


class _BinaryBase(ClassifierMixin, BaseEstimator):
    kind = None

    def _validate(self, X):
        check_is_fitted(self, "classes_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise DataError(
                f"X has {X.shape[1]} features, classifier expects {self.n_features_in_}"
            )
        return X

    def predict_proba(self, X):
        """``(n, 2)`` posteriors; the second column is exactly ``1 - first``."""
        X = self._validate(X)
        p_a = self._proba_first(X)
        return np.column_stack([p_a, 1.0 - p_a])

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.where(proba[:, 1] > proba[:, 0], 1, 0)]


class LogisticBinaryClassifier(_BinaryBase):
    """L2-regularized logistic regression on standardized features.

    ``predict_proba`` accepts raw features; the standardization learnt in
    ``fit`` is stored alongside the weights.

    Parameters
    ----------
    alpha : float, default=1e-4
        L2 strength on the weights; the intercept is unpenalized.
    tol : float, default=1e-6
        Gradient-norm stopping threshold.
    max_iter : int, default=5000
    """

    kind = "logistic"

    def __init__(self, alpha=1e-4, tol=1e-6, max_iter=5000):
        self.alpha = alpha
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y, classes=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        self.classes_ = _check_binary_target(y, classes)
        self.n_features_in_ = X.shape[1]
        self.mean_, self.scale_ = _standardize(X)
        Z = (X - self.mean_) / self.scale_
        t = (y == self.classes_[0]).astype(np.float64)
        theta, losses, converged = gradient_descent(
            lambda th: logistic_loss_grad(th, Z, t, self.alpha),
            np.zeros(X.shape[1] + 1),
            tol=self.tol,
            max_iter=self.max_iter,
        )
        self.coef_, self.intercept_ = theta[:-1], float(theta[-1])
        self.loss_curve_ = losses
        self.n_iter_ = len(losses) - 1
        self.converged_ = converged
        return self

    def decision_function(self, X):
        """Log-odds of the first class."""
        X = self._validate(X)
        return ((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_

    def _proba_first(self, X):
        return expit(((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_)

    def get_state(self):
        check_is_fitted(self, "coef_")
        return {
            "w": self.coef_.tolist(),
            "b": self.intercept_,
            "mu": self.mean_.tolist(),
            "sigma": self.scale_.tolist(),
        }

    @classmethod
    def from_state(cls, state, classes, path="classifier.params"):
        arrays = {}
        for key in ("w", "mu", "sigma"):
            arrays[key] = _float_vector(state, key, path)
        d = arrays["w"].size
        for key in ("mu", "sigma"):
            if arrays[key].size != d:
                raise SchemaError(f"{path}.{key}", f"expected {d} entries")
        if np.any(arrays["sigma"] <= 0):
            raise SchemaError(f"{path}.sigma", "scales must be positive")
        b = _float_scalar(state, "b", path)
        clf = cls()
        clf.classes_ = np.array(classes, dtype=np.int64)
        clf.n_features_in_ = d
        clf.coef_, clf.intercept_ = arrays["w"], b
        clf.mean_, clf.scale_ = arrays["mu"], arrays["sigma"]
        return clf


class GaussianNBBinaryClassifier(_BinaryBase):
    """Gaussian naive Bayes over two classes.

    Parameters
    ----------
    var_floor : float, default=1e-9
        Lower bound on every per-class feature variance.
    """

    kind = "gaussian_nb"

    def __init__(self, var_floor=1e-9):
        self.var_floor = var_floor

    def fit(self, X, y, classes=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        self.classes_ = _check_binary_target(y, classes)
        self.n_features_in_ = X.shape[1]
        groups = [X[y == c] for c in self.classes_]
        self.theta_ = np.array([g.mean(axis=0) for g in groups])
        self.var_ = np.maximum(np.array([g.var(axis=0) for g in groups]), self.var_floor)
        counts = np.array([g.shape[0] for g in groups], dtype=np.float64)
        self.class_prior_ = counts / counts.sum()
        return self

    def _joint_log_likelihood(self, X):
        out = np.empty((X.shape[0], 2))
        for i in range(2):
            out[:, i] = (
                np.log(self.class_prior_[i])
                - 0.5 * np.sum(np.log(2.0 * np.pi * self.var_[i]))
                - 0.5 * np.sum((X - self.theta_[i]) ** 2 / self.var_[i], axis=1)
            )
        return out

    def _proba_first(self, X):
        jll = self._joint_log_likelihood(X)
        return expit(jll[:, 0] - jll[:, 1])

    def get_state(self):
        check_is_fitted(self, "theta_")
        return {
            "per_class": [
                {"means": m.tolist(), "vars": v.tolist(), "prior": float(p)}
                for m, v, p in zip(self.theta_, self.var_, self.class_prior_)
            ]
        }

    @classmethod
    def from_state(cls, state, classes, path="classifier.params"):
        per_class = state.get("per_class") if isinstance(state, dict) else None
        if not isinstance(per_class, list) or len(per_class) != 2:
            raise SchemaError(f"{path}.per_class", "expected a list of 2 class blocks")
        means, variances, priors = [], [], []
        for i, block in enumerate(per_class):
            where = f"{path}.per_class[{i}]"
            means.append(_float_vector(block, "means", where))
            variances.append(_float_vector(block, "vars", where))
            priors.append(_float_scalar(block, "prior", where))
        d = means[0].size
        if any(a.size != d for a in means + variances):
            raise SchemaError(f"{path}.per_class", "inconsistent feature dimension")
        if any(np.any(v <= 0) for v in variances) or any(p <= 0 for p in priors):
            raise SchemaError(f"{path}.per_class", "variances and priors must be positive")
        clf = cls()
        clf.classes_ = np.array(classes, dtype=np.int64)
        clf.n_features_in_ = d
        clf.theta_, clf.var_ = np.array(means), np.array(variances)
        clf.class_prior_ = np.array(priors)
        return clf


class MultinomialLogisticClassifier(ClassifierMixin, BaseEstimator):
    """Softmax regression on pooled data: the full-data baseline.

    Uses the same standardization and optimizer as
    :class:`LogisticBinaryClassifier`.
    """

    def __init__(self, alpha=1e-4, tol=1e-6, max_iter=5000):
        self.alpha = alpha
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        if self.classes_.size < 2:
            raise DataError("need at least 2 classes")
        self.n_features_in_ = X.shape[1]
        self.mean_, self.scale_ = _standardize(X)
        Z = (X - self.mean_) / self.scale_
        T = (y[:, None] == self.classes_[None, :]).astype(np.float64)
        C = self.classes_.size
        theta, losses, converged = gradient_descent(
            lambda th: softmax_loss_grad(th, Z, T, self.alpha),
            np.zeros((X.shape[1] + 1) * C),
            tol=self.tol,
            max_iter=self.max_iter,
        )
        P = theta.reshape(X.shape[1] + 1, C)
        self.coef_, self.intercept_ = P[:-1], P[-1]
        self.loss_curve_ = losses
        self.n_iter_ = len(losses) - 1
        self.converged_ = converged
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        S = ((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_
        return np.exp(S - logsumexp(S, axis=1)[:, None])

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


def _float_vector(doc, key, path):
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError(f"{path}.{key}", "missing field")
    try:
        arr = np.array(doc[key], dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError(f"{path}.{key}", "expected a list of numbers") from None
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise SchemaError(f"{path}.{key}", "expected a list of finite numbers")
    return arr


def _float_scalar(doc, key, path):
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError(f"{path}.{key}", "missing field")
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise SchemaError(f"{path}.{key}", "expected a finite number")
    return float(value)


CLASSIFIER_KINDS = {
    LogisticBinaryClassifier.kind: LogisticBinaryClassifier,
    GaussianNBBinaryClassifier.kind: GaussianNBBinaryClassifier,
}


def register_classifier(kind, cls):
    """Make a binary classifier class available under ``kind``."""
    CLASSIFIER_KINDS[kind] = cls
    return cls


def make_classifier(kind, **params):
    try:
        cls = CLASSIFIER_KINDS[kind]
    except KeyError:
        raise ConfigError(
            f"unknown classifier kind {kind!r}; available: {sorted(CLASSIFIER_KINDS)}"
        ) from None
    return cls(**params)


def classifier_from_state(kind, state, classes, path="classifier"):
    if kind not in CLASSIFIER_KINDS:
        raise SchemaError(f"{path}.kind", f"unknown classifier kind {kind!r}")
    return CLASSIFIER_KINDS[kind].from_state(state, classes, path=f"{path}.params")

"""Full-covariance Gaussian mixture fitted by expectation maximization.

Densities are evaluated in log space throughout; a fitted model serializes
to plain arrays (see :meth:`GaussianMixture.to_dict`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DataError, NumericError, SchemaError

__all__ = ["GaussianMixture", "FitReport", "scree", "select_elbow", "select_k_bic"]

_LOG_2PI = np.log(2.0 * np.pi)
_COLLAPSE_MASS = 1e-10


@dataclass
class FitReport:
    """Outcome of one EM run.

    ``trace`` holds the mean per-sample log-likelihood after every iteration;
    ``log_likelihood`` is the final *total* log-likelihood.
    """

    log_likelihood: float
    n_iter: int
    converged: bool
    trace: np.ndarray = field(repr=False)
    n_reinit: int = 0


def _cholesky(cov, k=None):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        where = "" if k is None else f" of component {k}"
        raise NumericError(f"covariance{where} is not positive definite") from None


def _component_log_pdf(X, means, chols):
    n, d = X.shape
    out = np.empty((n, means.shape[0]))
    for k, (mu, L) in enumerate(zip(means, chols)):
        z = solve_triangular(L, (X - mu).T, lower=True, check_finite=False)
        log_det = 2.0 * np.sum(np.log(np.diag(L)))
        out[:, k] = -0.5 * (d * _LOG_2PI + log_det + np.einsum("ij,ij->j", z, z))
    return out


def _farthest_point_centers(X, K, rng):
    centers = [X[rng.integers(X.shape[0])]]
    closest = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        nxt = X[int(np.argmax(closest))]
        centers.append(nxt)
        closest = np.minimum(closest, np.sum((X - nxt) ** 2, axis=1))
    return np.array(centers)


def _lloyd(X, centers, n_steps):
    labels = None
    for _ in range(max(n_steps, 1)):
        d2 = (
            np.sum(X**2, axis=1)[:, None]
            - 2.0 * X @ centers.T
            + np.sum(centers**2, axis=1)[None, :]
        )
        new = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(centers.shape[0]):
            members = X[labels == k]
            if members.shape[0]:
                centers[k] = members.mean(axis=0)
    return labels


class GaussianMixture(DensityMixin, BaseEstimator):
    """Gaussian mixture density with full covariance matrices.

    Parameters
    ----------
    n_components : int, default=1
        Number of mixture components ``K``.
    tol : float, default=1e-6
        EM stops once the mean per-sample log-likelihood improves by less
        than ``tol``.
    reg_covar : float, default=1e-6
        Added to the diagonal of every covariance at each M-step.
    max_iter : int, default=500
    n_lloyd : int, default=10
        Lloyd iterations refining the farthest-point initial centers.
    random_state : int or None
        Seed for the initial center choice.

    Attributes
    ----------
    weights_ : ndarray of shape (K,)
    means_ : ndarray of shape (K, d)
    covariances_ : ndarray of shape (K, d, d)
    report_ : FitReport
    """

    def __init__(self, n_components=1, *, tol=1e-6, reg_covar=1e-6, max_iter=500,
                 n_lloyd=10, random_state=None):
        self.n_components = n_components
        self.tol = tol
        self.reg_covar = reg_covar
        self.max_iter = max_iter
        self.n_lloyd = n_lloyd
        self.random_state = random_state

    def _check_params(self, n_samples):
        K = self.n_components
        if not isinstance(K, (int, np.integer)) or K < 1:
            raise DataError(f"n_components must be a positive integer, got {K!r}")
        if n_samples == 0:
            raise DataError("cannot fit a mixture to empty data")
        if n_samples < K:
            raise DataError(f"n_samples={n_samples} is smaller than n_components={K}")
        if not self.tol > 0:
            raise DataError("tol must be positive")
        if self.reg_covar < 0:
            raise DataError("reg_covar must be non-negative")
        if self.max_iter < 1:
            raise DataError("max_iter must be at least 1")

    def _m_step(self, X, resp, log_lik):
        n, d = X.shape
        nk = resp.sum(axis=0)
        collapsed = np.flatnonzero(nk < _COLLAPSE_MASS)
        safe = np.where(nk < _COLLAPSE_MASS, 1.0, nk)
        means = (resp.T @ X) / safe[:, None]
        covs = np.empty((resp.shape[1], d, d))
        for k in range(resp.shape[1]):
            diff = X - means[k]
            covs[k] = (resp[:, k, None] * diff).T @ diff / safe[k]
            covs[k] = 0.5 * (covs[k] + covs[k].T)
            covs[k].flat[:: d + 1] += self.reg_covar
        weights = nk / n
        if collapsed.size:
            # re-seed dead components at the worst-fitting points
            if log_lik is None:
                worst = np.argsort(np.sum((X - X.mean(axis=0)) ** 2, axis=1))[::-1]
            else:
                worst = np.argsort(log_lik)
            spread = np.atleast_2d(np.cov(X, rowvar=False, bias=True))
            spread.flat[:: d + 1] += self.reg_covar
            for i, k in enumerate(collapsed):
                means[k] = X[worst[i]]
                covs[k] = spread
                weights[k] = 1.0 / n
        weights = weights / weights.sum()
        return weights, means, covs, collapsed.size

    def _set_state(self, weights, means, covs):
        self.weights_ = np.asarray(weights, dtype=np.float64)
        self.means_ = np.asarray(means, dtype=np.float64)
        self.covariances_ = np.asarray(covs, dtype=np.float64)
        self.cholesky_ = np.array([_cholesky(c, k) for k, c in enumerate(self.covariances_)])
        self.n_features_in_ = self.means_.shape[1]

    def _estimate_weighted_log_prob(self, X):
        return np.log(self.weights_) + _component_log_pdf(X, self.means_, self.cholesky_)

    def fit(self, X, y=None):
        """Run EM from a k-means style initialization."""
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        n, d = X.shape
        self._check_params(n)
        K = int(self.n_components)
        rng = np.random.default_rng(self.random_state)

        centers = _farthest_point_centers(X, K, rng)
        labels = _lloyd(X, centers, self.n_lloyd) if K > 1 else np.zeros(n, dtype=int)
        resp = np.zeros((n, K))
        resp[np.arange(n), labels] = 1.0

        trace = []
        converged = False
        n_reinit = 0
        log_lik = None
        for _ in range(self.max_iter):
            weights, means, covs, dead = self._m_step(X, resp, log_lik)
            n_reinit += dead
            self._set_state(weights, means, covs)
            weighted = self._estimate_weighted_log_prob(X)
            log_lik = logsumexp(weighted, axis=1)
            resp = np.exp(weighted - log_lik[:, None])
            trace.append(float(np.mean(log_lik)))
            if len(trace) > 1 and abs(trace[-1] - trace[-2]) < self.tol and not dead:
                converged = True
                break
        self.report_ = FitReport(
            log_likelihood=float(np.sum(log_lik)),
            n_iter=len(trace),
            converged=converged,
            trace=np.array(trace),
            n_reinit=n_reinit,
        )
        self.converged_ = converged
        self.n_iter_ = len(trace)
        self.lower_bound_ = trace[-1]
        return self

    def _validate(self, X):
        check_is_fitted(self, "means_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise DataError(
                f"X has {X.shape[1]} features, mixture expects {self.n_features_in_}"
            )
        return X

    def score_samples(self, X):
        """Log density ``log sum_k w_k N(x; mu_k, Sigma_k)`` of each row."""
        X = self._validate(X)
        return logsumexp(self._estimate_weighted_log_prob(X), axis=1)

    def score(self, X, y=None):
        """Mean per-sample log-likelihood."""
        return float(np.mean(self.score_samples(X)))

    def predict_proba(self, X):
        """Component responsibilities of each row."""
        X = self._validate(X)
        weighted = self._estimate_weighted_log_prob(X)
        return np.exp(weighted - logsumexp(weighted, axis=1)[:, None])

    def sample(self, n_samples=1, random_state=None):
        """Draw samples; returns ``(X, component_labels)``."""
        check_is_fitted(self, "means_")
        if n_samples < 0:
            raise DataError("n_samples must be non-negative")
        seed = self.random_state if random_state is None else random_state
        rng = np.random.default_rng(seed)
        K, d = self.means_.shape
        labels = rng.choice(K, size=n_samples, p=self.weights_)
        X = np.empty((n_samples, d))
        for k in range(K):
            sel = labels == k
            z = rng.standard_normal((int(sel.sum()), d))
            X[sel] = self.means_[k] + z @ self.cholesky_[k].T
        return X, labels

    def n_parameters(self):
        K, d = self.means_.shape
        return (K - 1) + K * d + K * d * (d + 1) // 2

    def bic(self, X):
        X = self._validate(X)
        return -2.0 * float(np.sum(self.score_samples(X))) + self.n_parameters() * np.log(
            X.shape[0]
        )

    def to_dict(self):
        check_is_fitted(self, "means_")
        K, d = self.means_.shape
        return {
            "k": int(K),
            "dim": int(d),
            "weights": self.weights_.tolist(),
            "means": self.means_.tolist(),
            "covariances": self.covariances_.tolist(),
        }

    @classmethod
    def from_params(cls, weights, means, covariances, **kwargs):
        """Build a fitted mixture directly from its parameters."""
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 1 or np.any(weights <= 0):
            raise DataError("mixture weights must be a vector of positive numbers")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise DataError(f"mixture weights sum to {weights.sum()}, not 1")
        means = np.asarray(means, dtype=np.float64)
        covariances = np.asarray(covariances, dtype=np.float64)
        model = cls(n_components=weights.shape[0], **kwargs)
        model._set_state(weights, means, covariances)
        return model

    @classmethod
    def from_dict(cls, doc, path="gmm"):
        """Inverse of :meth:`to_dict`; schema errors carry the field path."""
        if not isinstance(doc, dict):
            raise SchemaError(path, "expected an object")
        for key in ("k", "dim", "weights", "means", "covariances"):
            if key not in doc:
                raise SchemaError(f"{path}.{key}", "missing field")
        K, d = doc["k"], doc["dim"]
        for key in ("k", "dim"):
            if not isinstance(doc[key], int) or isinstance(doc[key], bool) or doc[key] < 1:
                raise SchemaError(f"{path}.{key}", "expected a positive integer")
        shapes = {"weights": (K,), "means": (K, d), "covariances": (K, d, d)}
        arrays = {}
        for key, shape in shapes.items():
            try:
                arr = np.array(doc[key], dtype=np.float64)
            except (TypeError, ValueError):
                raise SchemaError(f"{path}.{key}", "expected a numeric array") from None
            if arr.shape != shape:
                raise SchemaError(f"{path}.{key}", f"expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise SchemaError(f"{path}.{key}", "non-finite value")
            arrays[key] = arr
        try:
            return cls.from_params(arrays["weights"], arrays["means"], arrays["covariances"])
        except (DataError, NumericError) as exc:
            raise SchemaError(path, str(exc)) from None


def scree(X, k_values, **params):
    """Total log-likelihood of an EM fit for every ``K`` in ``k_values``.

    All fits share ``params`` (including ``random_state``). Returns a list of
    ``(K, log_likelihood)`` sorted by ``K``.
    """
    k_values = sorted(set(int(k) for k in k_values))
    if not k_values:
        raise DataError("k_values must not be empty")
    out = []
    for K in k_values:
        model = GaussianMixture(n_components=K, **params).fit(X)
        out.append((K, model.report_.log_likelihood))
    return out


def select_elbow(points, min_share=0.01):
    """Pick ``K`` at the elbow of a likelihood scree curve.

    The elbow is the ``K`` whose incoming gain (from ``K-1``) is largest
    relative to its outgoing gain (to ``K+1``). Only ``K`` whose incoming
    gain is at least ``min_share`` of the total gain over the curve are
    candidates, so late noise cannot win. ``points`` must hold consecutive
    ``K`` values as returned by :func:`scree`; the last ``K`` is never chosen
    because it has no outgoing gain.
    """
    ks = [k for k, _ in points]
    if len(ks) < 3:
        return ks[0]
    gains = np.diff([v for _, v in points])
    total = np.sum(np.abs(gains))
    if total == 0:
        return ks[0]
    best_k, best_ratio = ks[0], -np.inf
    for i in range(1, len(ks) - 1):
        gain_in, gain_out = gains[i - 1], gains[i]
        if gain_in < min_share * total:
            continue
        ratio = gain_in / max(gain_out, 1e-12 * total)
        if ratio > best_ratio:
            best_k, best_ratio = ks[i], ratio
    return best_k


def select_k_bic(X, k_values, **params):
    """Automatic alternative to the scree elbow: the ``K`` minimising BIC."""
    best = None
    for K in sorted(set(int(k) for k in k_values)):
        model = GaussianMixture(n_components=K, **params).fit(X)
        score = model.bic(X)
        if best is None or score < best[1]:
            best = (K, score)
    return best[0]

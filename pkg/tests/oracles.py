"""Independent reference computations shared by the test modules."""

import itertools

import mpmath
import numpy as np
from scipy.special import logsumexp

from emmc.node import NodeSummary


def mp_gmm_log_density(x, weights, means, covs, dps=50):
    """``log sum_k w_k N(x; mu_k, Sigma_k)`` by direct high-precision summation."""
    with mpmath.workdps(dps):
        total = mpmath.mpf(0)
        d = len(x)
        for w, mu, cov in zip(weights, means, covs):
            S = mpmath.matrix(cov.tolist())
            diff = mpmath.matrix([mpmath.mpf(float(a)) - mpmath.mpf(float(b))
                                  for a, b in zip(x, mu)])
            quad = (diff.T * mpmath.inverse(S) * diff)[0, 0]
            norm = mpmath.sqrt((2 * mpmath.pi) ** d * mpmath.det(S))
            total += mpmath.mpf(float(w)) * mpmath.exp(-quad / 2) / norm
        return float(mpmath.log(total))


def brute_force_w2(a, b):
    """Exact ``W_2`` by enumerating every permutation."""
    n = a.shape[0]
    C = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    best = min(C[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n)))
    return float(np.sqrt(best / n))


class AnalyticDensity:
    """True feature density of a node holding ``counts[m]`` samples of class ``m``."""

    def __init__(self, spec, counts):
        self.spec = spec
        self.counts = dict(counts)
        self.n_features_in_ = spec.dim

    def score_samples(self, X):
        log_g = self.spec.log_class_density(X)
        n = sum(self.counts.values())
        cols = [np.log(c / n) + log_g[:, m] for m, c in self.counts.items()]
        return logsumexp(np.column_stack(cols), axis=1)


class AnalyticClassifier:
    """Exact local Bayes posterior over a node's two classes."""

    def __init__(self, spec, counts):
        self.spec = spec
        self.counts = dict(counts)
        self.classes_ = np.array(sorted(self.counts))
        self.n_features_in_ = spec.dim

    def predict_proba(self, X):
        log_g = self.spec.log_class_density(X)
        a, b = self.classes_
        la = np.log(self.counts[a]) + log_g[:, a]
        lb = np.log(self.counts[b]) + log_g[:, b]
        p_a = np.exp(la - np.logaddexp(la, lb))
        return np.column_stack([p_a, 1.0 - p_a])


def analytic_summaries(spec, pairs, counts):
    """NodeSummaries built from exact densities; ``counts[j][m]`` is ``n_{j,m}``."""
    out = []
    for j, (pair, cnt) in enumerate(zip(pairs, counts), start=1):
        local = {m: cnt[m] for m in pair}
        out.append(NodeSummary(j, sum(local.values()), pair,
                               AnalyticClassifier(spec, local), AnalyticDensity(spec, local)))
    return out


def global_bayes_posterior(spec, class_totals, X):
    log_g = spec.log_class_density(X) + np.log(np.asarray(class_totals, dtype=float))
    return np.exp(log_g - logsumexp(log_g, axis=1, keepdims=True))

"""Drift testing, exact empirical Wasserstein distance and classification metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from ._seeding import derive_seed
from .datasets import Dataset
from .exceptions import DataError

__all__ = [
    "kl_estimate",
    "drift_test",
    "drift_test_by_class",
    "DriftTestResult",
    "optimal_assignment",
    "wasserstein",
    "MetricsReport",
    "evaluate",
    "replicate_summary",
    "MAX_ASSIGNMENT_SIZE",
]

_DIST_FLOOR = 1e-12
MAX_ASSIGNMENT_SIZE = 4096


def _as_samples(a, name):
    if isinstance(a, Dataset):
        a = a.X
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DataError(f"{name} must be an (n, d) sample matrix")
    return a


def kl_estimate(a, b, return_info=False):
    """1-nearest-neighbour estimate of ``KL(p_a || p_b)`` from samples.

    ``(d/n) * sum_i log(nu_i / rho_i) + log(m / (n - 1))`` where ``rho_i`` is
    the distance from ``a_i`` to its nearest other point of ``a`` and
    ``nu_i`` the distance to its nearest point of ``b``. Zero distances are
    floored at 1e-12. The raw value may be negative.

    With ``return_info=True`` also returns a dict whose ``degenerate`` flag
    marks that any distance hit the floor (duplicates, or ``b`` containing
    points of ``a``).
    """
    a, b = _as_samples(a, "a"), _as_samples(b, "b")
    n, d = a.shape
    m = b.shape[0]
    if n < 2:
        raise DataError("kl_estimate needs at least 2 samples in a")
    if m < 1:
        raise DataError("kl_estimate needs at least 1 sample in b")
    if b.shape[1] != d:
        raise DataError(f"dimension mismatch: {d} vs {b.shape[1]}")
    rho = cKDTree(a).query(a, k=2)[0][:, 1]
    nu = cKDTree(b).query(a, k=1)[0]
    floored_rho = int(np.sum(rho < _DIST_FLOOR))
    floored_nu = int(np.sum(nu < _DIST_FLOOR))
    rho = np.maximum(rho, _DIST_FLOOR)
    nu = np.maximum(nu, _DIST_FLOOR)
    value = float(d / n * np.sum(np.log(nu / rho)) + np.log(m / (n - 1)))
    if not return_info:
        return value
    info = {
        "degenerate": bool(floored_rho or floored_nu),
        "floored_rho": floored_rho,
        "floored_nu": floored_nu,
    }
    return value, info


@dataclass(frozen=True, eq=False)
class DriftTestResult:
    """Permutation test of ``H0: KL(train || test) = 0``.

    ``kl_hat`` is clamped at 0 for reporting; the test itself compares the
    raw statistic ``kl_raw`` against the raw null values, and
    ``p_value = (#{null >= kl_raw} + 1) / (permutations + 1)``.
    """

    kl_hat: float
    kl_raw: float
    null_kls: np.ndarray = field(repr=False)
    p_value: float
    permutations: int
    degenerate: bool = False

    def to_dict(self):
        return {
            "kl_hat": self.kl_hat,
            "kl_raw": self.kl_raw,
            "p_value": self.p_value,
            "permutations": self.permutations,
            "degenerate": self.degenerate,
        }


def drift_test(train, test, permutations=100, seed=0) -> DriftTestResult:
    """Compare ``train`` and ``test`` features against random re-splits.

    The pooled samples are shuffled ``permutations`` times, keeping the two
    original sample sizes, and the KL estimate is recomputed for each split.
    """
    a, b = _as_samples(train, "train"), _as_samples(test, "test")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise DataError("drift_test needs non-empty train and test samples")
    if a.shape[1] != b.shape[1]:
        raise DataError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if permutations < 1:
        raise DataError("permutations must be at least 1")
    observed, info = kl_estimate(a, b, return_info=True)
    pooled = np.vstack([a, b])
    n = a.shape[0]
    rng = np.random.default_rng(seed)
    null = np.empty(permutations)
    for r in range(permutations):
        perm = rng.permutation(pooled.shape[0])
        null[r] = kl_estimate(pooled[perm[:n]], pooled[perm[n:]])
    p_value = (int(np.sum(null >= observed)) + 1) / (permutations + 1)
    return DriftTestResult(
        kl_hat=max(observed, 0.0),
        kl_raw=observed,
        null_kls=null,
        p_value=p_value,
        permutations=int(permutations),
        degenerate=info["degenerate"],
    )


def drift_test_by_class(train: Dataset, test: Dataset, permutations=100, seed=0):
    """Run :func:`drift_test` on every class present in both datasets.

    Classes with fewer than 2 training samples are skipped. Each class gets
    its own seed derived from ``seed``.
    """
    out = {}
    train_counts, test_counts = train.class_counts(), test.class_counts()
    for c in range(min(train.num_classes, test.num_classes)):
        if train_counts[c] < 2 or test_counts[c] < 1:
            continue
        out[c] = drift_test(
            train.X[train.y == c],
            test.X[test.y == c],
            permutations=permutations,
            seed=derive_seed(seed, c, "drift"),
        )
    return out


def _check_pair(a, b):
    a, b = _as_samples(a, "a"), _as_samples(b, "b")
    if a.shape[0] != b.shape[0]:
        raise DataError(
            f"sample sizes differ ({a.shape[0]} vs {b.shape[0]}); subsample to equal sizes first"
        )
    if a.shape[0] == 0:
        raise DataError("need at least one sample on each side")
    if a.shape[0] > MAX_ASSIGNMENT_SIZE:
        raise DataError(
            f"{a.shape[0]} samples exceed the exact solver limit of {MAX_ASSIGNMENT_SIZE}; "
            "subsample first"
        )
    if a.shape[1] != b.shape[1]:
        raise DataError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return a, b


def optimal_assignment(a, b):
    """Permutation ``sigma`` minimising ``sum_i ||a_i - b_sigma(i)||^2``.

    Returns ``(sigma, cost)`` where ``cost[i]`` is the squared distance of
    pair ``i``.
    """
    a, b = _check_pair(a, b)
    C = cdist(a, b, "sqeuclidean")
    rows, cols = linear_sum_assignment(C)
    sigma = np.empty(a.shape[0], dtype=np.int64)
    sigma[rows] = cols
    return sigma, C[np.arange(a.shape[0]), sigma]


def wasserstein(a, b):
    """Exact ``W_2`` between two equal-size empirical distributions."""
    _, cost = optimal_assignment(a, b)
    return float(np.sqrt(np.mean(cost)))


@dataclass(frozen=True, eq=False)
class MetricsReport:
    """Per-class precision and recall.

    Undefined ratios (no predictions / no samples of a class) are ``nan``.
    For a replicate summary the values are means over replicates and the
    ``*_sd`` arrays hold sample standard deviations.
    """

    precision: np.ndarray
    recall: np.ndarray
    confusion: np.ndarray | None = None
    precision_sd: np.ndarray | None = None
    recall_sd: np.ndarray | None = None
    n_replicates: int = 1

    @property
    def num_classes(self):
        return self.precision.shape[0]

    def rows(self):
        """Long-format ``(statistic, class, mean, sd)`` tuples."""
        out = []
        for stat in ("precision", "recall"):
            values = getattr(self, stat)
            sds = getattr(self, f"{stat}_sd")
            for c in range(self.num_classes):
                sd = None if sds is None else sds[c]
                out.append((stat, c, values[c], sd))
        return out


def evaluate(predictions, truth, num_classes) -> MetricsReport:
    predictions = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predictions.shape != truth.shape:
        raise DataError(f"{predictions.shape[0]} predictions for {truth.shape[0]} labels")
    for name, arr in (("predictions", predictions), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise DataError(f"{name} contain labels outside 0..{num_classes - 1}")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (truth, predictions), 1)
    tp = np.diag(confusion).astype(np.float64)
    predicted = confusion.sum(axis=0)
    actual = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / predicted, np.nan)
        recall = np.where(actual > 0, tp / actual, np.nan)
    return MetricsReport(precision, recall, confusion)


def replicate_summary(reports) -> MetricsReport:
    """Mean and sample standard deviation of each cell across replicates.

    Absent (``nan``) cells are ignored; a cell with fewer than two defined
    values has an undefined (``nan``) standard deviation.
    """
    reports = list(reports)
    if not reports:
        raise DataError("no replicate reports to summarize")

    def _agg(stat):
        values = np.array([getattr(r, stat) for r in reports], dtype=np.float64)
        count = np.sum(~np.isnan(values), axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            total = np.nansum(values, axis=0)
            mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
            sq = np.nansum((values - mean) ** 2, axis=0)
            sd = np.where(count > 1, np.sqrt(sq / np.maximum(count - 1, 1)), np.nan)
        return mean, sd

    precision, precision_sd = _agg("precision")
    recall, recall_sd = _agg("recall")
    confusion = None
    if all(r.confusion is not None for r in reports):
        confusion = np.sum([r.confusion for r in reports], axis=0)
    return MetricsReport(precision, recall, confusion, precision_sd, recall_sd, len(reports))

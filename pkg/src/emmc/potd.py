"""Principal optimal-transport directions and plain PCA reduction.

The displacement matrix pairs every attack sample with a normal sample under
the exact quadratic-cost assignment; its principal right singular vectors
are the feature directions along which the two groups differ most.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._seeding import derive_seed
from .exceptions import DataError
from .stats import optimal_assignment, wasserstein

__all__ = [
    "DisplacementMatrix",
    "DirectionMatrix",
    "displacement",
    "potd_directions",
    "project",
    "PrincipalTransportDirections",
    "SpecificityRecord",
    "specificity_experiment",
    "write_specificity_csv",
    "PCAReducer",
    "pca_reduce",
]


@dataclass(frozen=True, eq=False)
class DisplacementMatrix:
    """Row ``i`` is ``target[sigma(i)] - source[i]`` for the optimal ``sigma``."""

    rows: np.ndarray
    assignment: np.ndarray
    source: str = "attack"
    target: str = "normal"


@dataclass(frozen=True, eq=False)
class DirectionMatrix:
    """Orthonormal direction columns with explained-variance ratios.

    ``components`` has shape ``(d, r)``. ``explained_variance_ratio`` has
    length ``d`` (zero-padded past the rank) and sums to 1 unless the input
    was identically zero, in which case it is all zeros.
    """

    components: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def n_directions(self):
        return self.components.shape[1]

    @property
    def dim(self):
        return self.components.shape[0]


def displacement(attack, normal, source="attack", target="normal") -> DisplacementMatrix:
    attack = np.asarray(attack, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    sigma, _ = optimal_assignment(attack, normal)
    return DisplacementMatrix(normal[sigma] - attack, sigma, source, target)


def _principal_directions(M, r):
    n, d = M.shape
    if not 1 <= r <= d:
        raise DataError(f"number of directions must lie in 1..{d}, got {r}")
    _, s, vt = np.linalg.svd(M, full_matrices=False)
    power = s**2
    ratios = np.zeros(d)
    total = power.sum()
    if total > 0:
        ratios[: power.size] = power / total
    if vt.shape[0] < r:
        # fewer rows than requested directions: complete the basis
        q, _ = np.linalg.qr(np.vstack([vt, np.eye(d)]).T)
        vt = q.T
    B = vt[:r].T.copy()
    flip = np.sign(B[np.argmax(np.abs(B), axis=0), np.arange(r)])
    flip[flip == 0] = 1.0
    return DirectionMatrix(B * flip, ratios)


def potd_directions(disp, r=4, center=False) -> DirectionMatrix:
    """Top-``r`` principal directions of a displacement matrix.

    The matrix is not centered by default, so a pure translation between the
    groups is kept as the leading direction.
    """
    rows = disp.rows if isinstance(disp, DisplacementMatrix) else np.asarray(disp, float)
    if center:
        rows = rows - rows.mean(axis=0)
    return _principal_directions(rows, r)


def project(X, dirs):
    """Coordinates of ``X`` in the span of the direction columns."""
    B = dirs.components if isinstance(dirs, DirectionMatrix) else np.asarray(dirs, float)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != B.shape[0]:
        raise DataError(f"cannot project {X.shape} samples onto {B.shape[0]}-dim directions")
    return X @ B


class PrincipalTransportDirections(TransformerMixin, BaseEstimator):
    """Transformer projecting onto the POTD subspace of attack vs. normal data.

    ``fit(X, y)`` treats rows with ``y == normal_label`` as normal and all
    others as attack. The larger group is subsampled (without replacement)
    to the size of the smaller, or both to ``n_subsample`` when given.
    """

    def __init__(self, n_directions=4, center=False, normal_label=0, n_subsample=None,
                 random_state=None):
        self.n_directions = n_directions
        self.center = center
        self.normal_label = normal_label
        self.n_subsample = n_subsample
        self.random_state = random_state

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        normal, attack = X[y == self.normal_label], X[y != self.normal_label]
        if normal.shape[0] == 0 or attack.shape[0] == 0:
            raise DataError("need both normal and attack samples")
        size = min(normal.shape[0], attack.shape[0])
        if self.n_subsample is not None:
            if self.n_subsample > size:
                raise DataError(f"n_subsample={self.n_subsample} exceeds group size {size}")
            size = self.n_subsample
        rng = np.random.default_rng(self.random_state)
        if attack.shape[0] > size:
            attack = attack[np.sort(rng.choice(attack.shape[0], size, replace=False))]
        if normal.shape[0] > size:
            normal = normal[np.sort(rng.choice(normal.shape[0], size, replace=False))]
        self.displacement_ = displacement(attack, normal)
        dirs = potd_directions(self.displacement_, self.n_directions, self.center)
        self.directions_ = dirs
        self.components_ = dirs.components
        self.explained_variance_ratio_ = dirs.explained_variance_ratio
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        return project(check_array(X, dtype=np.float64), self.components_)


@dataclass(frozen=True)
class SpecificityRecord:
    subspace: object
    attack: object
    rep: int
    distance: float


def specificity_experiment(groups, directions, n_sub=1000, reps=100, seed=0):
    """Wasserstein distances between attack and normal data in every subspace.

    Parameters
    ----------
    groups : dict
        ``attack label -> (attack samples, normal samples)``.
    directions : dict
        ``subspace label -> DirectionMatrix`` (or ``(d, r)`` array).
    n_sub : int
        Samples drawn without replacement from each group per repetition.
    reps : int

    Returns
    -------
    list of SpecificityRecord
        One record per (repetition, attack, subspace).
    """
    if reps < 1:
        raise DataError("reps must be at least 1")
    for label, (att, nor) in groups.items():
        if len(att) < n_sub or len(nor) < n_sub:
            raise DataError(
                f"attack {label}: need {n_sub} samples per group, have {len(att)} attack "
                f"and {len(nor)} normal"
            )
    records = []
    for rep in range(reps):
        rng = np.random.default_rng(derive_seed(seed, rep, "specificity"))
        for label, (att, nor) in groups.items():
            att, nor = np.asarray(att, float), np.asarray(nor, float)
            a = att[rng.choice(att.shape[0], n_sub, replace=False)]
            b = nor[rng.choice(nor.shape[0], n_sub, replace=False)]
            for sub, dirs in directions.items():
                dist = wasserstein(project(a, dirs), project(b, dirs))
                records.append(SpecificityRecord(sub, label, rep, dist))
    return records


def write_specificity_csv(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subspace", "attack", "rep", "distance"])
        for r in records:
            writer.writerow([r.subspace, r.attack, r.rep, repr(r.distance)])
    return path


class PCAReducer(TransformerMixin, BaseEstimator):
    """Mean-centered PCA fitted on training data only.

    Attributes
    ----------
    mean_ : ndarray of shape (d,)
    components_ : ndarray of shape (d, r)
    explained_variance_ratio_ : ndarray of shape (d,)
    """

    def __init__(self, n_components=4):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        dirs = _principal_directions(X - self.mean_, self.n_components)
        self.directions_ = dirs
        self.components_ = dirs.components
        self.explained_variance_ratio_ = dirs.explained_variance_ratio
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"X has {X.shape[1]} features, PCA expects {self.n_features_in_}")
        return (X - self.mean_) @ self.components_

    def inverse_transform(self, Z):
        check_is_fitted(self, "components_")
        return np.asarray(Z, dtype=np.float64) @ self.components_.T + self.mean_


def pca_reduce(X, r=4):
    """Fit PCA on ``X``; returns ``(reduced X, DirectionMatrix, fitted reducer)``."""
    reducer = PCAReducer(r).fit(X)
    return reducer.transform(X), reducer.directions_, reducer

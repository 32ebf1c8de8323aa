"""Labeled datasets, synthetic generation, node assignment and CSV I/O.

A :class:`Dataset` is an immutable pair of arrays ``X`` (n, d) and ``y`` (n,)
plus the number of classes of the experiment. Everything random takes an
explicit integer seed.
"""

from __future__ import annotations

import csv
import enum
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DataError

__all__ = [
    "Dataset",
    "NodeData",
    "Topology",
    "TopologyKind",
    "MixtureComponent",
    "ClassMixtureSpec",
    "FOUR_CLASS_SPEC",
    "generate_synthetic",
    "generate_node_data",
    "assign_to_nodes",
    "balance",
    "load_csv",
    "read_feature_csv",
    "write_csv",
    "train_test_split",
]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with integer class labels.

    Parameters
    ----------
    X : ndarray of shape (n_samples, n_features)
    y : ndarray of shape (n_samples,)
        Labels in ``0 .. num_classes - 1``.
    num_classes : int, optional
        Total number of classes ``M + 1`` of the experiment. Defaults to
        ``max(y) + 1``.
    """

    X: np.ndarray
    y: np.ndarray
    num_classes: int = None  # type: ignore[assignment]

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, 0)
        if X.ndim != 2:
            raise DataError(f"X must be 2-dimensional, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DataError(
                f"y must be 1-dimensional with {X.shape[0]} entries, got shape {y.shape}"
            )
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise DataError("labels must be integers")
        y = y.astype(np.int64)
        if not np.all(np.isfinite(X)):
            bad = int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0])
            raise DataError(f"non-finite feature value in sample {bad}")
        num_classes = self.num_classes
        if num_classes is None:
            num_classes = int(y.max()) + 1 if y.size else 0
        if y.size and (y.min() < 0 or y.max() >= num_classes):
            raise DataError(
                f"labels must lie in 0..{num_classes - 1}, got range "
                f"{int(y.min())}..{int(y.max())}"
            )
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "num_classes", int(num_classes))

    def __len__(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    def class_counts(self):
        """Number of samples per class, length ``num_classes``."""
        return np.bincount(self.y, minlength=self.num_classes)

    def take(self, indices):
        """Sub-dataset at ``indices`` in the given order."""
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[indices], self.y[indices], self.num_classes)

    def restrict(self, classes):
        """Samples whose label is in ``classes``, order preserved."""
        return self.take(np.flatnonzero(np.isin(self.y, list(classes))))

    @staticmethod
    def concatenate(parts: Sequence["Dataset"], num_classes=None):
        if not parts:
            raise DataError("cannot concatenate an empty list of datasets")
        if num_classes is None:
            num_classes = max(p.num_classes for p in parts)
        X = np.vstack([p.X for p in parts])
        y = np.concatenate([p.y for p in parts])
        return Dataset(X, y, num_classes)


@dataclass(frozen=True, eq=False)
class NodeData:
    """The local training data of one node."""

    node_id: int
    data: Dataset
    classes: tuple


class TopologyKind(str, enum.Enum):
    STAR = "star"
    RING = "ring"
    FULLY_CONNECTED = "fully_connected"


@dataclass(frozen=True)
class Topology:
    """Which class pairs live together in which node.

    ``star``: node ``j`` holds classes ``{0, j}`` for ``j = 1..M``.
    ``ring``: node ``j`` holds ``{j-1, j mod (M+1)}`` for ``j = 1..M+1``.
    ``fully_connected``: one node per unordered pair of classes.
    Nodes are numbered from 1.
    """

    kind: TopologyKind
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "kind", TopologyKind(self.kind))
        if self.num_classes < 2:
            raise DataError("a topology needs at least 2 classes")

    def class_sets(self):
        """Sorted class pair of every node, in node order."""
        M = self.num_classes - 1
        if self.kind is TopologyKind.STAR:
            pairs = [(0, j) for j in range(1, M + 1)]
        elif self.kind is TopologyKind.RING:
            pairs = [(j - 1, j % (M + 1)) for j in range(1, M + 2)]
        else:
            pairs = list(itertools.combinations(range(M + 1), 2))
        return [tuple(sorted(p)) for p in pairs]

    @property
    def num_nodes(self):
        return len(self.class_sets())


@dataclass(frozen=True, eq=False)
class MixtureComponent:
    mean: np.ndarray
    cov: np.ndarray
    weight: float


@dataclass(frozen=True, eq=False)
class ClassMixtureSpec:
    """Per-class Gaussian mixture parameters used to simulate data.

    ``classes[m]`` is the list of components of class ``m``.
    """

    classes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        classes = []
        dim = None
        for m, comps in enumerate(self.classes):
            if not comps:
                raise DataError(f"class {m} has no mixture components")
            checked = []
            for k, comp in enumerate(comps):
                if isinstance(comp, MixtureComponent):
                    mean, cov, weight = comp.mean, comp.cov, comp.weight
                else:
                    mean, cov, weight = comp
                mean = np.asarray(mean, dtype=np.float64)
                cov = np.asarray(cov, dtype=np.float64)
                dim = mean.shape[0] if dim is None else dim
                if mean.shape != (dim,) or cov.shape != (dim, dim):
                    raise DataError(f"class {m} component {k}: inconsistent dimension")
                if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
                    raise DataError(f"class {m} component {k}: covariance not symmetric")
                try:
                    np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    raise DataError(
                        f"class {m} component {k}: covariance not positive definite"
                    ) from None
                if not weight > 0:
                    raise DataError(f"class {m} component {k}: weight must be positive")
                checked.append(MixtureComponent(mean, cov, float(weight)))
            total = sum(c.weight for c in checked)
            if abs(total - 1.0) > 1e-9:
                raise DataError(f"class {m}: component weights sum to {total}, not 1")
            classes.append(tuple(checked))
        object.__setattr__(self, "classes", tuple(classes))

    @property
    def num_classes(self):
        return len(self.classes)

    @property
    def dim(self):
        return self.classes[0][0].mean.shape[0]

    def log_class_density(self, X):
        """Log density of each class at ``X``; shape (n, num_classes)."""
        from scipy.special import logsumexp
        from scipy.stats import multivariate_normal

        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty((X.shape[0], self.num_classes))
        for m, comps in enumerate(self.classes):
            terms = np.column_stack(
                [
                    np.log(c.weight) + multivariate_normal(c.mean, c.cov).logpdf(X).reshape(-1)
                    for c in comps
                ]
            )
            out[:, m] = logsumexp(terms, axis=1)
        return out


_I2 = np.eye(2)

FOUR_CLASS_SPEC = ClassMixtureSpec(
    (
        (((-6, -1), _I2, 1 / 2), ((-8, 2), _I2, 1 / 2)),
        (((3, 6), _I2, 4 / 15), ((4, 4), _I2, 6 / 15), ((5, 6), _I2, 5 / 15)),
        (((0, -4), _I2, 9 / 13), ((0, -2), _I2, 4 / 13)),
        (((-1, 5), _I2, 6 / 15), ((-2, 4), _I2, 5 / 15), ((-2, 5), _I2, 4 / 15)),
    )
)


def _draw_class(rng, comps, n):
    weights = np.array([c.weight for c in comps])
    which = rng.choice(len(comps), size=n, p=weights / weights.sum())
    dim = comps[0].mean.shape[0]
    out = np.empty((n, dim))
    for k, comp in enumerate(comps):
        sel = which == k
        z = rng.standard_normal((int(sel.sum()), dim))
        out[sel] = comp.mean + z @ np.linalg.cholesky(comp.cov).T
    return out


def generate_synthetic(spec: ClassMixtureSpec, counts, seed: int) -> Dataset:
    """Draw ``counts[m]`` samples from class ``m``'s mixture, class by class."""
    counts = [int(c) for c in counts]
    if len(counts) != spec.num_classes:
        raise DataError(f"expected {spec.num_classes} class counts, got {len(counts)}")
    if any(c < 0 for c in counts):
        raise DataError("class counts must be non-negative")
    rng = np.random.default_rng(seed)
    X = [_draw_class(rng, comps, n) for comps, n in zip(spec.classes, counts)]
    y = np.repeat(np.arange(spec.num_classes), counts)
    return Dataset(np.vstack(X).reshape(-1, spec.dim), y, spec.num_classes)


def generate_node_data(spec: ClassMixtureSpec, topology: Topology, node_sizes, seed: int):
    """Generate every node's data independently from ``spec``.

    Node ``j`` receives ``node_sizes[j]`` samples split evenly between its two
    classes (the lower class id takes the odd sample).
    """
    pairs = topology.class_sets()
    if topology.num_classes != spec.num_classes:
        raise DataError("topology and mixture spec disagree on the number of classes")
    if len(node_sizes) != len(pairs):
        raise DataError(f"expected {len(pairs)} node sizes, got {len(node_sizes)}")
    seeds = np.random.SeedSequence(seed).spawn(len(pairs))
    nodes = []
    for j, (pair, size, ss) in enumerate(zip(pairs, node_sizes, seeds), start=1):
        counts = [0] * spec.num_classes
        counts[pair[0]] = int(size) - int(size) // 2
        counts[pair[1]] = int(size) // 2
        data = generate_synthetic(spec, counts, ss.generate_state(1)[0])
        nodes.append(NodeData(j, data, pair))
    return nodes


def assign_to_nodes(data: Dataset, topology: Topology, seed: int, *, match_star_counts=False):
    """Partition a pooled dataset across the nodes of ``topology``.

    Samples of a class held by several nodes are shuffled and split into
    near-equal disjoint chunks, one per node. With ``match_star_counts`` (star
    topology only) node ``j`` instead receives as many class-0 samples as it
    has class-``j`` samples, scaled down proportionally if class 0 is short;
    leftover class-0 samples are dropped.

    Returns
    -------
    list of NodeData
    """
    if topology.num_classes != data.num_classes:
        raise DataError(
            f"topology has {topology.num_classes} classes but data has {data.num_classes}"
        )
    if match_star_counts and topology.kind is not TopologyKind.STAR:
        raise DataError("match_star_counts only applies to the star topology")
    rng = np.random.default_rng(seed)
    pairs = topology.class_sets()
    holders = {c: [j for j, p in enumerate(pairs) if c in p] for c in range(data.num_classes)}
    node_idx = [[] for _ in pairs]
    for c in range(data.num_classes):
        idx = rng.permutation(np.flatnonzero(data.y == c))
        nodes = holders[c]
        if not nodes:
            continue
        if match_star_counts and c == 0:
            want = np.array([np.sum(data.y == pairs[j][1]) for j in nodes])
            if want.sum() > idx.size:
                want = np.floor(want * idx.size / want.sum()).astype(np.int64)
            chunks = np.split(idx[: want.sum()], np.cumsum(want)[:-1])
        else:
            chunks = np.array_split(idx, len(nodes))
        for j, chunk in zip(nodes, chunks):
            node_idx[j].append(chunk)
    out = []
    for j, pair in enumerate(pairs):
        idx = np.sort(np.concatenate(node_idx[j]))
        local = data.take(idx)
        counts = local.class_counts()
        for c in pair:
            if counts[c] == 0:
                raise DataError(f"node {j + 1} has no samples of class {c}")
        out.append(NodeData(j + 1, local, pair))
    return out


def balance(data: Dataset, cap: int = 1000, seed: int = 0) -> Dataset:
    """Subsample every class larger than ``cap`` down to exactly ``cap``.

    Smaller classes are kept whole; the original sample order is preserved.
    """
    if cap < 1:
        raise DataError("balance cap must be at least 1")
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(data.num_classes):
        idx = np.flatnonzero(data.y == c)
        if idx.size > cap:
            idx = rng.choice(idx, size=cap, replace=False)
        keep.append(idx)
    keep = np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)
    if keep.size == len(data):
        return data
    return data.take(keep)


def train_test_split(data: Dataset, test_fraction: float, seed: int):
    """Stratified random split into (train, test).

    Each class contributes ``round(n_c * test_fraction)`` test samples, clamped
    so both sides keep at least one sample of every present class.
    """
    if not 0 < test_fraction < 1:
        raise DataError("test_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    test = []
    for c, n_c in enumerate(data.class_counts()):
        if n_c == 0:
            continue
        if n_c < 2:
            raise DataError(f"class {c} has fewer than 2 samples; cannot split")
        idx = rng.permutation(np.flatnonzero(data.y == c))
        n_test = min(max(int(round(n_c * test_fraction)), 1), n_c - 1)
        test.append(idx[:n_test])
    test = np.sort(np.concatenate(test)) if test else np.zeros(0, dtype=np.int64)
    mask = np.zeros(len(data), dtype=bool)
    mask[test] = True
    return data.take(np.flatnonzero(~mask)), data.take(test)


def _parse_float(cell, row, column):
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"row {row}: non-numeric value {cell!r} in column {column!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}: non-finite value {cell!r} in column {column!r}")
    return value


def _read_table(path, label_column, feature_columns):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row expected") from None
        header = [h.strip() for h in header]
        position = {name: i for i, name in enumerate(header)}
        if label_column is not None and label_column not in position:
            raise DataError(f"{path}: missing label column {label_column!r}")
        if feature_columns is None:
            feature_columns = [h for h in header if h != label_column]
        missing = [c for c in feature_columns if c not in position]
        if missing:
            raise DataError(f"{path}: missing feature columns {missing}")
        fidx = [position[c] for c in feature_columns]
        X, y = [], []
        # row numbers count the header as row 1
        for row, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(header):
                raise DataError(
                    f"{path}: row {row} has {len(cells)} fields, header has {len(header)}"
                )
            X.append([_parse_float(cells[i], row, header[i]) for i in fidx])
            if label_column is not None:
                value = _parse_float(cells[position[label_column]], row, label_column)
                if value != int(value) or value < 0:
                    raise DataError(f"row {row}: label {cells[position[label_column]]!r} "
                                    "is not a non-negative integer")
                y.append(int(value))
    X = np.array(X, dtype=np.float64).reshape(len(X), len(fidx))
    return X, (np.array(y, dtype=np.int64) if label_column is not None else None)


def load_csv(path, label_column="label", feature_columns=None, num_classes=None) -> Dataset:
    """Read a labeled CSV file (header row required).

    Feature columns default to every column except ``label_column``.
    """
    X, y = _read_table(path, label_column, feature_columns)
    return Dataset(X, y, num_classes)


def read_feature_csv(path, feature_columns=None, label_column="label"):
    """Read only the feature matrix of a CSV; a label column is skipped if present."""
    if not Path(path).is_file():
        raise DataError(f"no such file: {path}")
    with Path(path).open(newline="", encoding="utf-8") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    if label_column not in header:
        label_column = None
    elif feature_columns is None:
        feature_columns = [h for h in header if h != label_column]
    X, _ = _read_table(path, None, feature_columns)
    return X


def write_csv(data: Dataset, path, label_column="label"):
    """Write ``f0..f{d-1}`` feature columns plus the label column.

    Floats use ``repr`` so a round trip through :func:`load_csv` is exact.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{i}" for i in range(data.dim)] + [label_column])
        for x, label in zip(data.X, data.y):
            writer.writerow([repr(float(v)) for v in x] + [int(label)])
    return path

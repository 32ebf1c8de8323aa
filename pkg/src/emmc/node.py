"""Node-side fitting (classifier + density) and the one-shot summary message.

A node never sees anything but its own data: :func:`fit_node` receives one
:class:`~emmc.datasets.Dataset` and returns a self-contained
:class:`NodeSummary`, which :func:`serialize` turns into the JSON document
that is sent to the coordinator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _json
from ._seeding import derive_seed
from .classifiers import classifier_from_state, make_classifier
from .datasets import Dataset, balance
from .exceptions import DataError, SchemaError
from .gmm import GaussianMixture

__all__ = [
    "NodeConfig",
    "NodeSummary",
    "fit_node",
    "serialize",
    "deserialize",
    "write_summary",
    "read_summary",
    "read_summaries",
    "SUMMARY_SUFFIX",
]

SUMMARY_SUFFIX = ".nodesum.json"


@dataclass(frozen=True)
class NodeConfig:
    """Hyperparameters of one node's local fit.

    ``prior_counts`` selects whether the reported sample count is taken
    after (``"post_balance"``) or before (``"pre_balance"``) balancing.
    """

    classifier: str = "logistic"
    classifier_params: dict = field(default_factory=dict)
    n_components: int = 3
    max_iter: int = 500
    tol: float = 1e-6
    reg_covar: float = 1e-6
    balance_cap: int | None = None
    prior_counts: str = "post_balance"
    seed: int = 0

    def __post_init__(self):
        if self.prior_counts not in ("post_balance", "pre_balance"):
            raise DataError(f"prior_counts must be post_balance or pre_balance, "
                            f"got {self.prior_counts!r}")


@dataclass(frozen=True, eq=False)
class NodeSummary:
    """Everything the coordinator learns about one node.

    ``classifier`` must provide ``classes_`` and ``predict_proba``; ``gmm``
    must provide ``score_samples`` (log density). Fitted
    :class:`~emmc.gmm.GaussianMixture` and the classifiers of
    :mod:`emmc.classifiers` also serialize.
    """

    node_id: int
    n: int
    classes: tuple
    classifier: object
    gmm: object
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        classes = tuple(int(c) for c in self.classes)
        if len(classes) != 2 or classes[0] == classes[1]:
            raise DataError(f"node {self.node_id}: class set must hold exactly 2 distinct "
                            f"ids, got {list(classes)}")
        classes = tuple(sorted(classes))
        if int(self.n) < 2:
            raise DataError(f"node {self.node_id}: sample count must be at least 2")
        clf_classes = tuple(int(c) for c in getattr(self.classifier, "classes_", classes))
        if clf_classes != classes:
            raise DataError(f"node {self.node_id}: classifier classes {list(clf_classes)} "
                            f"differ from node classes {list(classes)}")
        d_clf = getattr(self.classifier, "n_features_in_", None)
        d_gmm = getattr(self.gmm, "n_features_in_", None)
        if d_clf is not None and d_gmm is not None and d_clf != d_gmm:
            raise DataError(f"node {self.node_id}: classifier has {d_clf} features, "
                            f"density has {d_gmm}")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "node_id", int(self.node_id))

    @property
    def dim(self):
        return getattr(self.gmm, "n_features_in_", None)

    def predict_proba(self, X):
        """Local posterior over ``classes``, shape (n, 2)."""
        return self.classifier.predict_proba(X)

    def log_density(self, X):
        return self.gmm.score_samples(X)

    def to_dict(self):
        return {
            "node_id": self.node_id,
            "n": self.n,
            "classes": list(self.classes),
            "classifier": {"kind": self.classifier.kind, "params": self.classifier.get_state()},
            "gmm": self.gmm.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise SchemaError("", "summary document must be a JSON object")
        for key in ("node_id", "n", "classes", "classifier", "gmm", "meta"):
            if key not in doc:
                raise SchemaError(key, "missing field")
        for key in ("node_id", "n"):
            if not isinstance(doc[key], int) or isinstance(doc[key], bool):
                raise SchemaError(key, "expected an integer")
        classes = doc["classes"]
        if not isinstance(classes, list) or not all(
            isinstance(c, int) and not isinstance(c, bool) for c in classes
        ):
            raise SchemaError("classes", "expected a list of integers")
        if len(classes) != 2 or len(set(classes)) != 2:
            raise SchemaError("classes", f"a node holds exactly 2 distinct classes, got {classes}")
        if doc["n"] < 2:
            raise SchemaError("n", "sample count must be at least 2")
        clf_doc = doc["classifier"]
        if not isinstance(clf_doc, dict):
            raise SchemaError("classifier", "expected an object")
        for key in ("kind", "params"):
            if key not in clf_doc:
                raise SchemaError(f"classifier.{key}", "missing field")
        if not isinstance(doc["meta"], dict):
            raise SchemaError("meta", "expected an object")
        classes = sorted(classes)
        classifier = classifier_from_state(clf_doc["kind"], clf_doc["params"], classes)
        gmm = GaussianMixture.from_dict(doc["gmm"])
        if classifier.n_features_in_ != gmm.n_features_in_:
            raise SchemaError("gmm.dim", "density and classifier dimensions differ")
        return cls(doc["node_id"], doc["n"], tuple(classes), classifier, gmm, doc["meta"])


def fit_node(node_id, data: Dataset, config: NodeConfig = NodeConfig(), classes=None):
    """Fit the local binary classifier and feature density of one node.

    Parameters
    ----------
    node_id : int
    data : Dataset
        The node's own samples; must hold exactly two classes.
    config : NodeConfig
    classes : pair of int, optional
        Expected class set; defaults to the classes present in ``data``.
        Passing it turns an absent class into an error that names it.

    Returns
    -------
    NodeSummary
    """
    present = sorted(int(c) for c in np.unique(data.y))
    if len(present) > 2:
        raise DataError(f"node {node_id}: expected 2 classes, data holds {present}")
    if classes is None:
        if len(present) != 2:
            raise DataError(f"node {node_id}: expected 2 classes, data holds {present}")
        classes = present
    classes = tuple(sorted(int(c) for c in classes))
    n_pre = len(data)
    if config.balance_cap is not None:
        data = balance(data, config.balance_cap, derive_seed(config.seed, "balance"))
    clf = make_classifier(config.classifier, **config.classifier_params)
    try:
        clf.fit(data.X, data.y, classes=classes)
    except DataError as exc:
        raise DataError(f"node {node_id}: {exc}") from None
    gmm_seed = derive_seed(config.seed, "gmm")
    gmm = GaussianMixture(
        n_components=config.n_components,
        tol=config.tol,
        reg_covar=config.reg_covar,
        max_iter=config.max_iter,
        random_state=gmm_seed,
    ).fit(data.X)
    counts = data.class_counts()
    n = len(data) if config.prior_counts == "post_balance" else n_pre
    meta = {
        "seed": int(config.seed),
        "gmm_seed": int(gmm_seed),
        "n_pre_balance": int(n_pre),
        "n_post_balance": int(len(data)),
        "prior_counts": config.prior_counts,
        "balance_cap": config.balance_cap,
        "class_counts": {str(c): int(counts[c]) for c in classes},
        "classifier_hyperparams": clf.get_params(),
        "gmm_fit": {
            "n_components": int(config.n_components),
            "tol": config.tol,
            "reg_covar": config.reg_covar,
            "max_iter": int(config.max_iter),
            "n_iter": gmm.report_.n_iter,
            "converged": gmm.report_.converged,
            "log_likelihood": gmm.report_.log_likelihood,
        },
    }
    if hasattr(clf, "converged_"):
        meta["classifier_fit"] = {"n_iter": clf.n_iter_, "converged": clf.converged_}
    return NodeSummary(node_id, n, classes, clf, gmm, meta)


def serialize(summary: NodeSummary) -> bytes:
    return (_json.dumps(summary.to_dict()) + "\n").encode("utf-8")


def deserialize(payload) -> NodeSummary:
    if isinstance(payload, (bytes, bytearray)):
        try:
            payload = payload.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaError("", f"summary is not UTF-8: {exc}") from None
    try:
        doc = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"malformed or truncated summary document: {exc}") from None
    return NodeSummary.from_dict(doc)


def write_summary(summary: NodeSummary, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"node_{summary.node_id}{SUMMARY_SUFFIX}"
    path.write_bytes(serialize(summary))
    return path


def read_summary(path) -> NodeSummary:
    path = Path(path)
    try:
        return deserialize(path.read_bytes())
    except SchemaError as exc:
        raise SchemaError(exc.path, f"{exc.detail} (in {path.name})") from None


def read_summaries(directory):
    """Every ``*.nodesum.json`` under ``directory``, ordered by node id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"no such directory: {directory}")
    summaries = [read_summary(p) for p in sorted(directory.glob(f"*{SUMMARY_SUFFIX}"))]
    if not summaries:
        raise DataError(f"no {SUMMARY_SUFFIX} files in {directory}")
    ids = [s.node_id for s in summaries]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate node ids in {directory}: {sorted(ids)}")
    return sorted(summaries, key=lambda s: s.node_id)

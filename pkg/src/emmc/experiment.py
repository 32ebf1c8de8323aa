"""End-to-end experiment runner: data -> nodes -> summaries -> ensemble -> metrics.

Every random draw uses a seed derived from the master seed (see
:mod:`emmc._seeding`), so identical configurations give identical reports.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _json
from ._seeding import SCHEME, derive_seed
from .classifiers import MultinomialLogisticClassifier, make_classifier
from .datasets import (
    FOUR_CLASS_SPEC,
    Dataset,
    Topology,
    TopologyKind,
    assign_to_nodes,
    generate_node_data,
    generate_synthetic,
    load_csv,
    train_test_split,
)
from .ensemble import EnsembleModel
from .exceptions import ConfigError, EMMCError
from .node import NodeConfig, fit_node, read_summaries, write_summary
from .stats import MetricsReport, evaluate, replicate_summary

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = ["ExperimentConfig", "RunReport", "run_experiment", "load_config"]

log = logging.getLogger(__name__)

# GMM sizes chosen from the likelihood scree of the built-in four-class simulation
DEFAULT_COMPONENTS = {
    TopologyKind.STAR: [3, 3, 3],
    TopologyKind.RING: [3, 2, 2, 3],
    TopologyKind.FULLY_CONNECTED: [3, 2, 2, 3, 3, 3],
}
DEFAULT_NODE_SIZES = {
    TopologyKind.STAR: [14500, 13500, 14500],
    TopologyKind.RING: [14000] * 4,
    TopologyKind.FULLY_CONNECTED: [14000] * 6,
}
DEFAULT_TEST_COUNTS = [100, 150, 100, 150]

_SECTIONS = {
    "data": {"source", "generation", "node_sizes", "pooled_counts", "test_counts", "train_csv",
             "test_csv", "label_column", "feature_columns", "star_match_counts"},
    "topology": {"kind"},
    "nodes": {"classifier", "classifier_params", "n_components", "balance_cap", "tol",
              "reg_covar", "max_iter", "prior_counts"},
    "run": {"replicates", "seed", "test_fraction", "baseline", "exchange", "jobs", "output"},
}


@dataclass
class ExperimentConfig:
    """All knobs of one experiment; see ``configs/*.toml`` for the layout."""

    source: str = "synthetic"
    generation: str = "per_node"
    topology: str = "star"
    node_sizes: list | None = None
    pooled_counts: list | None = None
    test_counts: list = field(default_factory=lambda: list(DEFAULT_TEST_COUNTS))
    train_csv: str | None = None
    test_csv: str | None = None
    label_column: str = "label"
    feature_columns: list | None = None
    star_match_counts: bool = False
    classifier: str = "logistic"
    classifier_params: dict = field(default_factory=dict)
    n_components: list | int | None = None
    balance_cap: int | None = None
    tol: float = 1e-6
    reg_covar: float = 1e-6
    max_iter: int = 500
    prior_counts: str = "post_balance"
    replicates: int = 1
    seed: int = 0
    test_fraction: float = 0.25
    baseline: bool = True
    exchange: str = "memory"
    jobs: int = 1
    output: str | None = None

    def validate(self, check_files=True):
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {self.source!r}")
        if self.generation not in ("per_node", "pooled"):
            raise ConfigError(f"data.generation must be 'per_node' or 'pooled'")
        try:
            kind = TopologyKind(self.topology)
        except ValueError:
            raise ConfigError(f"unknown topology {self.topology!r}") from None
        if not isinstance(self.replicates, int) or self.replicates < 1:
            raise ConfigError("run.replicates must be a positive integer")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("run.test_fraction must lie strictly between 0 and 1")
        if self.exchange not in ("memory", "files"):
            raise ConfigError("run.exchange must be 'memory' or 'files'")
        if self.jobs < 1:
            raise ConfigError("run.jobs must be at least 1")
        if self.prior_counts not in ("post_balance", "pre_balance"):
            raise ConfigError("nodes.prior_counts must be 'post_balance' or 'pre_balance'")
        if self.balance_cap is not None and self.balance_cap < 1:
            raise ConfigError("nodes.balance_cap must be at least 1")
        try:
            make_classifier(self.classifier, **self.classifier_params)
        except (EMMCError, TypeError) as exc:
            raise ConfigError(f"nodes.classifier: {exc}") from None
        if self.source == "csv":
            if not self.train_csv:
                raise ConfigError("data.train_csv is required when data.source = 'csv'")
            if check_files:
                for name in ("train_csv", "test_csv"):
                    path = getattr(self, name)
                    if path and not Path(path).is_file():
                        raise ConfigError(f"data.{name}: no such file {path}")
        elif self.generation == "pooled" and not self.pooled_counts:
            raise ConfigError("data.pooled_counts is required for pooled generation")
        if self.star_match_counts and kind is not TopologyKind.STAR:
            raise ConfigError("data.star_match_counts requires the star topology")
        return self

    @property
    def topology_kind(self):
        return TopologyKind(self.topology)

    def resolved(self, num_classes):
        """Copy with per-topology defaults filled in."""
        topo = Topology(self.topology_kind, num_classes)
        cfg = dataclasses.replace(self)
        J = topo.num_nodes
        builtin = self.source == "synthetic" and num_classes == FOUR_CLASS_SPEC.num_classes
        if cfg.n_components is None:
            cfg.n_components = list(DEFAULT_COMPONENTS[topo.kind]) if builtin else [3] * J
        elif isinstance(cfg.n_components, int):
            cfg.n_components = [cfg.n_components] * J
        if len(cfg.n_components) != J:
            raise ConfigError(f"nodes.n_components needs {J} entries for {topo.kind.value}")
        if cfg.source == "synthetic" and cfg.generation == "per_node" and cfg.node_sizes is None:
            if not builtin:
                raise ConfigError("data.node_sizes is required")
            cfg.node_sizes = list(DEFAULT_NODE_SIZES[topo.kind])
        if cfg.node_sizes is not None and len(cfg.node_sizes) != J and cfg.source == "synthetic":
            raise ConfigError(f"data.node_sizes needs {J} entries for {topo.kind.value}")
        return cfg

    def to_dict(self):
        return dataclasses.asdict(self)


def load_config(path, check_files=True) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    flat = {}
    for section, body in doc.items():
        if section not in _SECTIONS or not isinstance(body, dict):
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, value in body.items():
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{path}: unknown key {section}.{key}")
            flat["topology" if section == "topology" else key] = value
    base = path.parent
    for key in ("train_csv", "test_csv"):
        if flat.get(key) and not Path(flat[key]).is_absolute():
            flat[key] = str(base / flat[key])
    return ExperimentConfig(**flat).validate(check_files=check_files)


@dataclass
class RunReport:
    config: ExperimentConfig
    ensemble: MetricsReport | None
    baseline: MetricsReport | None
    replicates: list
    num_classes: int
    output: Path | None = None

    @property
    def failed(self):
        return [r for r in self.replicates if r["status"] != "ok"]


def _load_pool(cfg):
    data = load_csv(cfg.train_csv, cfg.label_column, cfg.feature_columns)
    test = None
    if cfg.test_csv:
        test = load_csv(cfg.test_csv, cfg.label_column, cfg.feature_columns)
        k = max(data.num_classes, test.num_classes)
        data, test = Dataset(data.X, data.y, k), Dataset(test.X, test.y, k)
    return data, test


def _replicate_data(cfg, r, num_classes, pool):
    topo = Topology(cfg.topology_kind, num_classes)
    data_seed = derive_seed(cfg.seed, r, "data")
    if cfg.source == "synthetic":
        test = generate_synthetic(FOUR_CLASS_SPEC, cfg.test_counts, derive_seed(cfg.seed, r, "test"))
        if cfg.generation == "per_node":
            return generate_node_data(FOUR_CLASS_SPEC, topo, cfg.node_sizes, data_seed), test
        train = generate_synthetic(FOUR_CLASS_SPEC, cfg.pooled_counts, data_seed)
    else:
        train, test = pool
        if test is None:
            train, test = train_test_split(train, cfg.test_fraction, derive_seed(cfg.seed, r, "split"))
    nodes = assign_to_nodes(train, topo, derive_seed(cfg.seed, r, "assign"),
                            match_star_counts=cfg.star_match_counts)
    return nodes, test


def _run_replicate(cfg, r, num_classes, pool, workdir):
    nodes, test = _replicate_data(cfg, r, num_classes, pool)
    summaries = []
    for nd, K in zip(nodes, cfg.n_components):
        node_cfg = NodeConfig(
            classifier=cfg.classifier,
            classifier_params=dict(cfg.classifier_params),
            n_components=int(K),
            tol=cfg.tol,
            reg_covar=cfg.reg_covar,
            max_iter=cfg.max_iter,
            balance_cap=cfg.balance_cap,
            prior_counts=cfg.prior_counts,
            seed=derive_seed(cfg.seed, r, nd.node_id, "node"),
        )
        summaries.append(fit_node(nd.node_id, nd.data, node_cfg, classes=nd.classes))
    if cfg.exchange == "files":
        node_dir = Path(workdir) / f"replicate_{r}" / "nodes"
        for s in summaries:
            write_summary(s, node_dir)
        summaries = read_summaries(node_dir)
    model = EnsembleModel(summaries, num_classes)
    out = {
        "index": r,
        "status": "ok",
        "ensemble": evaluate(model.predict(test.X), test.y, num_classes),
        "jensen_violation_rate": model.jensen_condition_report(test.X).rate,
        "node_sizes": [s.n for s in summaries],
    }
    if cfg.baseline:
        pooled = Dataset.concatenate([nd.data for nd in nodes], num_classes)
        base = MultinomialLogisticClassifier(**_baseline_params(cfg)).fit(pooled.X, pooled.y)
        out["baseline"] = evaluate(base.predict(test.X), test.y, num_classes)
    return out


def _baseline_params(cfg):
    if cfg.classifier != "logistic":
        return {}
    return {k: v for k, v in cfg.classifier_params.items() if k in ("alpha", "tol", "max_iter")}


def _guarded_replicate(args):
    cfg, r, num_classes, pool, workdir = args
    try:
        return _run_replicate(cfg, r, num_classes, pool, workdir)
    except (EMMCError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("replicate %d failed: %s", r, exc)
        return {"index": r, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def run_experiment(config: ExperimentConfig, output=None, jobs=None) -> RunReport:
    """Run every replicate and write ``metrics.csv``, ``replicates.csv`` and
    ``manifest.json`` to ``output`` (or ``config.output``) when set."""
    config.validate()
    pool = None
    if config.source == "csv":
        pool = _load_pool(config)
        num_classes = pool[0].num_classes if pool[1] is None else pool[1].num_classes
    else:
        num_classes = FOUR_CLASS_SPEC.num_classes
    cfg = config.resolved(num_classes)
    output = Path(output or cfg.output) if (output or cfg.output) else None
    jobs = jobs or cfg.jobs

    with tempfile.TemporaryDirectory() as tmp:
        workdir = output if output is not None else Path(tmp)
        tasks = [(cfg, r, num_classes, pool, workdir) for r in range(cfg.replicates)]
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                results = list(ex.map(_guarded_replicate, tasks))
        else:
            results = [_guarded_replicate(t) for t in tasks]

    ok = [r for r in results if r["status"] == "ok"]
    ensemble = replicate_summary([r["ensemble"] for r in ok]) if ok else None
    baseline = (replicate_summary([r["baseline"] for r in ok])
                if ok and cfg.baseline else None)
    report = RunReport(cfg, ensemble, baseline, results, num_classes, output)
    if output is not None:
        write_report(report, output)
    return report


def _fmt(value):
    if value is None:
        return ""
    value = float(value)
    return "" if math.isnan(value) else repr(value)


def write_report(report: RunReport, output):
    output = Path(output)
    output.mkdir(parents=True, exist_ok=True)
    methods = [("ensemble", report.ensemble), ("full_data", report.baseline)]
    with (output / "metrics.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "statistic", "class", "mean", "sd", "n_replicates"])
        for name, summary in methods:
            if summary is None:
                continue
            for stat, c, mean, sd in summary.rows():
                writer.writerow([name, stat, c, _fmt(mean), _fmt(sd), summary.n_replicates])
    with (output / "replicates.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["replicate", "method", "statistic", "class", "value"])
        for rep in report.replicates:
            if rep["status"] != "ok":
                continue
            for key, name in (("ensemble", "ensemble"), ("baseline", "full_data")):
                if key not in rep:
                    continue
                for stat, c, value, _ in rep[key].rows():
                    writer.writerow([rep["index"], name, stat, c, _fmt(value)])
    manifest = {
        "config": report.config.to_dict(),
        "num_classes": report.num_classes,
        "seed_scheme": SCHEME,
        "seed_keys": {
            "data": "(replicate, 'data')",
            "test": "(replicate, 'test')",
            "split": "(replicate, 'split')",
            "assign": "(replicate, 'assign')",
            "node": "(replicate, node_id, 'node')",
        },
        "classifier_hyperparams": make_classifier(
            report.config.classifier, **report.config.classifier_params
        ).get_params(),
        "replicates": [
            {
                "index": r["index"],
                "status": r["status"],
                **({"error": r["error"]} if r["status"] != "ok" else {
                    "jensen_violation_rate": r["jensen_violation_rate"],
                    "node_sizes": r["node_sizes"],
                }),
            }
            for r in report.replicates
        ],
    }
    (output / "manifest.json").write_text(_json.dumps(manifest) + "\n", encoding="utf-8")
    return output

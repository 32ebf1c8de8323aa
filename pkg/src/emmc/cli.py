"""Command line entry point: ``emmc <subcommand> [--config PATH] [--seed N] [--jobs N] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _json
from .classifiers import CLASSIFIER_KINDS
from .datasets import (
    FOUR_CLASS_SPEC,
    Dataset,
    Topology,
    generate_node_data,
    generate_synthetic,
    load_csv,
    read_feature_csv,
    write_csv,
)
from .ensemble import EnsembleModel
from .exceptions import ConfigError, DataError, NumericError
from .experiment import DEFAULT_TEST_COUNTS, ExperimentConfig, load_config, run_experiment
from .gmm import scree, select_elbow
from .node import NodeConfig, fit_node, read_summaries, write_summary
from .potd import (
    PCAReducer,
    PrincipalTransportDirections,
    specificity_experiment,
    write_specificity_csv,
)
from .stats import drift_test, drift_test_by_class, evaluate

log = logging.getLogger("emmc")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _out_dir(args, default="."):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _fmt(x):
    x = float(x)
    return "" if np.isnan(x) else repr(x)


def cmd_run(args):
    if not args.config:
        raise ConfigError("run requires --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.replicates is not None:
        cfg.replicates = args.replicates
        cfg.validate()
    if args.exchange is not None:
        cfg.exchange = args.exchange
        cfg.validate()
    report = run_experiment(cfg, output=args.out, jobs=args.jobs)
    print(f"replicates: {len(report.replicates)} ok, {len(report.failed)} failed")
    for name, summary in (("ensemble", report.ensemble), ("full_data", report.baseline)):
        if summary is None:
            continue
        for stat, c, mean, sd in summary.rows():
            sd_text = "" if sd is None or np.isnan(sd) else f" ({100 * sd:.2f}%)"
            print(f"{name:9s} {stat:9s} class {c}: {100 * mean:.2f}%{sd_text}")
    if report.output is not None:
        print(f"reports written to {report.output}")
    return 0 if not report.failed else EXIT_NUMERIC


def cmd_gen_data(args):
    out = _out_dir(args)
    seed = 0 if args.seed is None else args.seed
    if args.topology:
        topo = Topology(args.topology, FOUR_CLASS_SPEC.num_classes)
        sizes = args.node_sizes
        if sizes is None:
            from .experiment import DEFAULT_NODE_SIZES

            sizes = DEFAULT_NODE_SIZES[topo.kind]
        for nd in generate_node_data(FOUR_CLASS_SPEC, topo, sizes, seed):
            path = write_csv(nd.data, out / f"node_{nd.node_id}.csv")
            print(f"node {nd.node_id} classes {list(nd.classes)}: {len(nd.data)} rows -> {path}")
    counts = args.counts or DEFAULT_TEST_COUNTS
    data = generate_synthetic(FOUR_CLASS_SPEC, counts, seed + 1 if args.topology else seed)
    path = write_csv(data, out / ("test.csv" if args.topology else "data.csv"))
    print(f"{len(data)} rows -> {path}")
    return 0


def cmd_scree(args):
    data = load_csv(args.data, args.label_column)
    ks = list(range(args.k_min, args.k_max + 1))
    points = scree(data.X, ks, random_state=0 if args.seed is None else args.seed,
                   tol=args.tol, reg_covar=args.reg_covar)
    rows = [(k, repr(ll)) for k, ll in points]
    if args.out:
        _write_rows(_out_dir(args) / "scree.csv", ["k", "log_likelihood"], rows)
    print("k,ll")
    for k, ll in rows:
        print(f"{k},{ll}")
    print(f"elbow: K={select_elbow(points)}")
    return 0


def cmd_fit_node(args):
    data = load_csv(args.data, args.label_column)
    params = json.loads(args.classifier_params) if args.classifier_params else {}
    config = NodeConfig(
        classifier=args.classifier,
        classifier_params=params,
        n_components=args.k,
        balance_cap=args.balance_cap,
        prior_counts=args.prior_counts,
        seed=0 if args.seed is None else args.seed,
    )
    summary = fit_node(args.node_id, data, config)
    path = write_summary(summary, _out_dir(args))
    print(f"node {summary.node_id} classes {list(summary.classes)} n={summary.n} -> {path}")
    return 0


def cmd_aggregate(args):
    summaries = read_summaries(args.summaries)
    model = EnsembleModel(summaries, args.num_classes)
    manifest = model.manifest()
    manifest["summaries"] = sorted(p.name for p in Path(args.summaries).glob("*.nodesum.json"))
    path = _out_dir(args) / "ensemble.json"
    path.write_text(_json.dumps(manifest) + "\n", encoding="utf-8")
    print(f"{len(summaries)} nodes, {model.num_classes} classes -> {path}")
    return 0


def cmd_predict(args):
    model = EnsembleModel(read_summaries(args.summaries), args.num_classes)
    X = read_feature_csv(args.data, label_column=args.label_column)
    result = model.posterior(X)
    predicted = np.argmax(result.posterior, axis=1)
    header = (["predicted"] + [f"p_{m}" for m in range(model.num_classes)]
              + [f"w_node{j}" for j in model.node_ids])
    rows = [
        [int(c)] + [repr(float(v)) for v in p] + [repr(float(v)) for v in w]
        for c, p, w in zip(predicted, result.posterior, result.weights)
    ]
    path = _write_rows(_out_dir(args) / "predictions.csv", header, rows)
    print(f"{len(rows)} predictions -> {path}")
    return 0


def cmd_evaluate(args):
    with Path(args.predictions).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if "predicted" not in (reader.fieldnames or []):
            raise DataError(f"{args.predictions}: missing column 'predicted'")
        predicted = np.array([int(row["predicted"]) for row in reader], dtype=np.int64)
    truth = load_csv(args.truth, args.label_column)
    num_classes = args.num_classes or max(truth.num_classes, int(predicted.max()) + 1)
    report = evaluate(predicted, truth.y, num_classes)
    rows = [(stat, c, _fmt(v)) for stat, c, v, _ in report.rows()]
    if args.out:
        _write_rows(_out_dir(args) / "metrics.csv", ["statistic", "class", "value"], rows)
    for stat, c, v in rows:
        print(f"{stat},{c},{v}")
    return 0


def cmd_drift_test(args):
    train = load_csv(args.train, args.label_column)
    test = load_csv(args.test, args.label_column)
    k = max(train.num_classes, test.num_classes)
    train, test = Dataset(train.X, train.y, k), Dataset(test.X, test.y, k)
    seed = 0 if args.seed is None else args.seed
    overall = drift_test(train.X, test.X, args.permutations, seed)
    per_class = drift_test_by_class(train, test, args.permutations, seed)
    doc = {
        "kl_hat": overall.kl_hat,
        "p_value": overall.p_value,
        "permutations": overall.permutations,
        "per_class": {str(c): r.p_value for c, r in per_class.items()},
    }
    text = _json.dumps(doc)
    if args.out:
        (_out_dir(args) / "drift_test.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_potd(args):
    data = load_csv(args.data, args.label_column)
    out = _out_dir(args)
    seed = 0 if args.seed is None else args.seed
    attacks = [c for c in range(1, data.num_classes) if np.any(data.y == c)]
    normal = data.X[data.y == 0]
    if normal.shape[0] == 0 or not attacks:
        raise DataError("potd needs class 0 (normal) and at least one attack class")
    directions, groups = {}, {}
    for m in attacks:
        sub = data.restrict([0, m])
        size = min(args.n_sub, int(np.sum(sub.y == m)), normal.shape[0])
        est = PrincipalTransportDirections(args.r, center=args.center, n_subsample=size,
                                           random_state=seed + m).fit(sub.X, sub.y)
        directions[m] = est.directions_
        groups[m] = (data.X[data.y == m], normal)
        _write_rows(out / f"directions_{m}.csv",
                    ["feature"] + [f"dir{i}" for i in range(args.r)],
                    [[i] + [repr(float(v)) for v in row]
                     for i, row in enumerate(est.components_)])
        _write_rows(out / f"scree_{m}.csv", ["component", "explained_variance_ratio"],
                    [[i, repr(float(v))] for i, v in enumerate(est.explained_variance_ratio_)])
        print(f"attack {m}: top-{args.r} explained "
              f"{100 * est.explained_variance_ratio_[:args.r].sum():.1f}%")
    if args.reps > 0:
        n_sub = min(args.n_sub, min(min(len(a), len(b)) for a, b in groups.values()))
        records = specificity_experiment(groups, directions, n_sub, args.reps, seed)
        path = write_specificity_csv(records, out / "specificity.csv")
        print(f"{len(records)} distances -> {path}")
    return 0


def cmd_pca(args):
    train = load_csv(args.train, args.label_column)
    reducer = PCAReducer(args.r).fit(train.X)
    out = _out_dir(args)
    write_csv(Dataset(reducer.transform(train.X), train.y, train.num_classes),
              out / "train_reduced.csv")
    if args.test:
        test = load_csv(args.test, args.label_column)
        write_csv(Dataset(reducer.transform(test.X), test.y, test.num_classes),
                  out / "test_reduced.csv")
    _write_rows(out / "components.csv", ["feature"] + [f"pc{i}" for i in range(args.r)],
                [[i] + [repr(float(v)) for v in row] for i, row in enumerate(reducer.components_)])
    _write_rows(out / "explained_variance.csv", ["component", "explained_variance_ratio"],
                [[i, repr(float(v))] for i, v in enumerate(reducer.explained_variance_ratio_)])
    print(f"top-{args.r} explained variance "
          f"{100 * reducer.explained_variance_ratio_[:args.r].sum():.1f}% -> {out}")
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment TOML file")
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--jobs", type=int, default=None, help="parallel workers")
    common.add_argument("--out", help="output directory")
    common.add_argument("--label-column", default="label")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="emmc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run a full experiment")
    p.add_argument("--replicates", type=int)
    p.add_argument("--exchange", choices=["memory", "files"])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen-data", parents=[common], help="simulate the built-in four-class mixture data")
    p.add_argument("--counts", type=_int_list, help="per-class counts, e.g. 100,150,100,150")
    p.add_argument("--topology", choices=["star", "ring", "fully_connected"])
    p.add_argument("--node-sizes", type=_int_list)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("scree", parents=[common], help="GMM log-likelihood for a range of K")
    p.add_argument("--data", required=True)
    p.add_argument("--k-min", type=int, default=1)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--reg-covar", type=float, default=1e-6)
    p.set_defaults(func=cmd_scree)

    p = sub.add_parser("fit-node", parents=[common], help="fit one node, write its summary")
    p.add_argument("--data", required=True, help="two-class CSV of this node")
    p.add_argument("--node-id", type=int, required=True)
    p.add_argument("--k", type=int, default=3, help="GMM components")
    p.add_argument("--classifier", choices=sorted(CLASSIFIER_KINDS), default="logistic")
    p.add_argument("--classifier-params", help="JSON object of classifier hyperparameters")
    p.add_argument("--balance-cap", type=int)
    p.add_argument("--prior-counts", choices=["post_balance", "pre_balance"],
                   default="post_balance")
    p.set_defaults(func=cmd_fit_node)

    p = sub.add_parser("aggregate", parents=[common], help="assemble node summaries")
    p.add_argument("--summaries", required=True, help="directory of *.nodesum.json")
    p.add_argument("--num-classes", type=int)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("predict", parents=[common], help="ensemble predictions for a CSV")
    p.add_argument("--summaries", required=True)
    p.add_argument("--data", required=True, help="feature CSV (label column ignored)")
    p.add_argument("--num-classes", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="per-class precision and recall")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--num-classes", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("drift-test", parents=[common], help="KL permutation drift test")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--permutations", type=int, default=100)
    p.set_defaults(func=cmd_drift_test)

    p = sub.add_parser("potd", parents=[common], help="feature subspaces per attack class")
    p.add_argument("--data", required=True, help="CSV with class 0 normal, 1..M attacks")
    p.add_argument("--r", type=int, default=4)
    p.add_argument("--n-sub", type=int, default=1000)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--center", action="store_true")
    p.set_defaults(func=cmd_potd)

    p = sub.add_parser("pca", parents=[common], help="PCA dimension reduction")
    p.add_argument("--train", required=True)
    p.add_argument("--test")
    p.add_argument("--r", type=int, default=4)
    p.set_defaults(func=cmd_pca)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"emmc: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"emmc: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"emmc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""One-shot multi-node multi-class classification from censored nodes.

Each node holds two classes, fits a binary classifier and a Gaussian mixture
density on its own data, and ships a single summary. A coordinator combines
the summaries into a posterior over all classes.
"""

from .classifiers import (
    GaussianNBBinaryClassifier,
    LogisticBinaryClassifier,
    MultinomialLogisticClassifier,
    make_classifier,
)
from .datasets import (
    FOUR_CLASS_SPEC,
    ClassMixtureSpec,
    Dataset,
    MixtureComponent,
    Topology,
    assign_to_nodes,
    balance,
    generate_node_data,
    generate_synthetic,
    load_csv,
    train_test_split,
    write_csv,
)
from .ensemble import EMMCClassifier, EnsembleModel, JensenReport, PosteriorResult
from .exceptions import ConfigError, DataError, EMMCError, NumericError, SchemaError
from .experiment import ExperimentConfig, RunReport, load_config, run_experiment
from .gmm import GaussianMixture, scree, select_elbow, select_k_bic
from .node import NodeConfig, NodeSummary, deserialize, fit_node, read_summaries, serialize, write_summary
from .potd import PCAReducer, PrincipalTransportDirections, potd_directions, specificity_experiment
from .stats import drift_test, evaluate, kl_estimate, optimal_assignment, replicate_summary, wasserstein

__version__ = "0.1.0"

__all__ = [
    "ClassMixtureSpec", "ConfigError", "DataError", "Dataset", "EMMCClassifier", "EMMCError",
    "EnsembleModel", "ExperimentConfig", "GaussianMixture", "GaussianNBBinaryClassifier",
    "JensenReport", "LogisticBinaryClassifier", "MixtureComponent",
    "MultinomialLogisticClassifier", "NodeConfig", "NodeSummary", "NumericError", "PCAReducer",
    "PosteriorResult", "PrincipalTransportDirections", "RunReport", "SchemaError", "FOUR_CLASS_SPEC",
    "Topology", "assign_to_nodes", "balance", "deserialize", "drift_test", "evaluate",
    "fit_node", "generate_node_data", "generate_synthetic", "kl_estimate", "load_config",
    "load_csv", "make_classifier", "optimal_assignment", "potd_directions", "read_summaries",
    "replicate_summary", "run_experiment", "scree", "select_elbow", "select_k_bic",
    "serialize", "specificity_experiment", "train_test_split", "wasserstein", "write_csv",
    "write_summary",
]

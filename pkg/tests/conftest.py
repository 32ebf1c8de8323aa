import numpy as np
import pytest

from emmc.datasets import FOUR_CLASS_SPEC, Topology, generate_node_data, generate_synthetic
from emmc.ensemble import EnsembleModel
from emmc.node import NodeConfig, fit_node

_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title}"
        if detail:
            line += f" [{detail}]"
        _ACCEPTANCE.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def star_nodes():
    topo = Topology("star", FOUR_CLASS_SPEC.num_classes)
    return generate_node_data(FOUR_CLASS_SPEC, topo, [1500, 1500, 1500], seed=11)


@pytest.fixture(scope="session")
def star_summaries(star_nodes):
    return [
        fit_node(nd.node_id, nd.data, NodeConfig(n_components=3, seed=nd.node_id))
        for nd in star_nodes
    ]


@pytest.fixture(scope="session")
def star_ensemble(star_summaries):
    return EnsembleModel(star_summaries, FOUR_CLASS_SPEC.num_classes)


@pytest.fixture(scope="session")
def four_class_test():
    return generate_synthetic(FOUR_CLASS_SPEC, [100, 150, 100, 150], seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

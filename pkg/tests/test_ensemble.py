import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from emmc.datasets import FOUR_CLASS_SPEC, Dataset, Topology, assign_to_nodes, generate_synthetic
from emmc.ensemble import EMMCClassifier, EnsembleModel
from emmc.exceptions import DataError, NumericError
from emmc.node import NodeConfig, NodeSummary, fit_node
from oracles import analytic_summaries, global_bayes_posterior


class ConstProba:
    def __init__(self, classes, p_first, d=2):
        self.classes_ = np.array(classes)
        self.p_first = p_first
        self.n_features_in_ = d

    def predict_proba(self, X):
        X = np.atleast_2d(X)
        p = np.full(X.shape[0], self.p_first)
        return np.column_stack([p, 1.0 - p])


class ConstDensity:
    def __init__(self, value=0.0, d=2):
        self.value = value
        self.n_features_in_ = d

    def score_samples(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.value)


def _stub(node_id, classes, n, p_first=0.5, log_f=0.0):
    return NodeSummary(node_id, n, classes, ConstProba(classes, p_first), ConstDensity(log_f))


class TestBuild:
    def test_priors(self):
        model = EnsembleModel([_stub(1, (0, 1), 100), _stub(2, (0, 1), 300)])
        assert model.priors.tolist() == [0.25, 0.75]
        assert abs(model.priors.sum() - 1.0) <= 1e-12

    def test_single_node(self):
        model = EnsembleModel([_stub(1, (0, 1), 10)])
        assert model.priors.tolist() == [1.0]

    def test_star_coverage(self, star_summaries):
        EnsembleModel(star_summaries, 4)
        with pytest.raises(DataError, match="^class 3 uncovered$"):
            EnsembleModel(star_summaries[:2], 4)

    def test_several_uncovered(self):
        with pytest.raises(DataError, match="classes 2, 3 uncovered"):
            EnsembleModel([_stub(1, (0, 1), 5)], num_classes=4)

    def test_dimension_mismatch(self):
        odd = NodeSummary(2, 5, (0, 2), ConstProba((0, 2), 0.5, d=3), ConstDensity(d=3))
        with pytest.raises(DataError, match="dimension"):
            EnsembleModel([_stub(1, (0, 1), 5), odd])

    def test_duplicate_ids(self):
        with pytest.raises(DataError, match="duplicate"):
            EnsembleModel([_stub(1, (0, 1), 5), _stub(1, (0, 2), 5)])

    def test_manifest(self, star_ensemble):
        doc = star_ensemble.manifest()
        assert doc["num_classes"] == 4 and [n["node_id"] for n in doc["nodes"]] == [1, 2, 3]


class TestPosterior:
    def test_single_node_equals_local(self, star_summaries, rng):
        s = star_summaries[0]
        model = EnsembleModel([s], num_classes=2)
        X = rng.normal(scale=4, size=(30, 2))
        post = model.posterior(X).posterior
        assert np.array_equal(post, s.predict_proba(X))

    def test_equal_weights(self):
        model = EnsembleModel([_stub(1, (0, 1), 50, 0.2), _stub(2, (0, 2), 50, 0.6)])
        res = model.posterior(np.zeros((4, 2)))
        assert np.allclose(res.weights, 0.5, atol=1e-15)
        assert np.allclose(res.posterior[:, 0], (0.2 + 0.6) / 2)
        assert np.allclose(res.posterior[0], [0.4, 0.4, 0.2])

    def test_single_point(self, star_ensemble):
        res = star_ensemble.posterior(np.array([-6.0, -1.0]))
        assert res.posterior.shape == (1, 4) and res.weights.shape == (1, 3)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (20, 2), elements=st.floats(-60, 60)))
    def test_normalized_everywhere(self, star_ensemble, X):
        res = star_ensemble.posterior(X)
        assert np.max(np.abs(res.posterior.sum(axis=1) - 1.0)) <= 1e-9
        assert np.max(np.abs(res.weights.sum(axis=1) - 1.0)) <= 1e-12
        assert np.all((res.posterior >= 0) & (res.posterior <= 1 + 1e-12))

    def test_far_away_points(self, star_ensemble):
        # node densities all underflow in linear space here
        res = star_ensemble.posterior(np.array([[1e4, -1e4], [300.0, 300.0]]))
        assert np.all(np.isfinite(res.posterior))

    def test_count_scaling_invariance(self, star_summaries, rng):
        X = rng.normal(scale=4, size=(50, 2))
        scaled = [NodeSummary(s.node_id, 7 * s.n, s.classes, s.classifier, s.gmm)
                  for s in star_summaries]
        a = EnsembleModel(star_summaries).posterior(X).weights
        b = EnsembleModel(scaled).posterior(X).weights
        assert np.allclose(a, b, atol=1e-12)

    def test_log_density_shift_invariance(self):
        a = EnsembleModel([_stub(1, (0, 1), 10, 0.3, -2.0), _stub(2, (0, 2), 30, 0.9, -5.0)])
        b = EnsembleModel([_stub(1, (0, 1), 10, 0.3, 98.0), _stub(2, (0, 2), 30, 0.9, 95.0)])
        X = np.zeros((3, 2))
        assert np.allclose(a.posterior(X).weights, b.posterior(X).weights, atol=1e-12)

    def test_node_order_invariance(self, star_summaries, rng):
        X = rng.normal(scale=4, size=(50, 2))
        a = EnsembleModel(star_summaries).predict_proba(X)
        b = EnsembleModel(star_summaries[::-1]).predict_proba(X)
        assert np.allclose(a, b, atol=1e-14)

    def test_dimension_mismatch(self, star_ensemble):
        with pytest.raises(DataError, match="features"):
            star_ensemble.posterior(np.zeros((2, 3)))

    def test_broken_local_posterior_detected(self):
        class Bad(ConstProba):
            def predict_proba(self, X):
                return super().predict_proba(X) * 0.9

        bad = NodeSummary(1, 5, (0, 1), Bad((0, 1), 0.5), ConstDensity())
        with pytest.raises(NumericError, match="deviate"):
            EnsembleModel([bad]).posterior(np.zeros((1, 2)))

    @pytest.mark.parametrize("kind", ["star", "ring", "fully_connected"])
    def test_plug_in_bayes(self, kind, rng):
        topo = Topology(kind, 4)
        pairs = topo.class_sets()
        totals = np.array([300, 450, 300, 450])
        counts = []
        for pair in pairs:
            counts.append({m: totals[m] // sum(m in p for p in pairs) for m in pair})
        class_totals = [sum(c.get(m, 0) for c in counts) for m in range(4)]
        model = EnsembleModel(analytic_summaries(FOUR_CLASS_SPEC, pairs, counts), 4)
        X = rng.uniform(-10, 7, size=(200, 2))
        expected = global_bayes_posterior(FOUR_CLASS_SPEC, class_totals, X)
        assert np.max(np.abs(model.predict_proba(X) - expected)) <= 1e-10


class TestPredict:
    def test_tie_goes_to_lowest_class(self):
        model = EnsembleModel([_stub(1, (0, 1), 10, 0.5)])
        assert model.predict(np.zeros((1, 2))).tolist() == [0]

    def test_argmax(self):
        model = EnsembleModel([_stub(1, (0, 1), 40, 0.2), _stub(2, (0, 2), 10, 0.6)])
        # posterior = (0.8*0.2 + 0.2*0.6, 0.8*0.8, 0.2*0.4)
        assert model.predict(np.zeros((1, 2))).tolist() == [1]

    def test_four_class_star(self, star_ensemble, four_class_test):
        acc = np.mean(star_ensemble.predict(four_class_test.X) == four_class_test.y)
        assert acc >= 0.97


class TestJensen:
    def test_single_node_never_violated(self, star_summaries, rng):
        report = EnsembleModel(star_summaries[:1]).jensen_condition_report(
            rng.normal(size=(40, 2))
        )
        assert report.rate == 0.0

    def test_equality_holds(self):
        model = EnsembleModel([_stub(1, (0, 1), 10, 1.0), _stub(2, (0, 2), 10, 1.0)])
        report = model.jensen_condition_report(np.zeros((3, 2)))
        assert not report.violations.any()

    def test_violation_detected(self):
        model = EnsembleModel([_stub(1, (0, 1), 10, 1.0, 0.0), _stub(2, (0, 2), 10, 1.0, -9.0)])
        per = model.jensen_condition_report(np.zeros((2, 2))).per_node_class()
        assert per[(2, 0)] == 1.0 and per[(1, 0)] == 0.0

    def test_star_rate_reported(self, star_ensemble, four_class_test):
        report = star_ensemble.jensen_condition_report(four_class_test.X)
        assert report.violations.shape == (500, 3, 2)
        assert 0.0 <= report.rate <= 1.0


def test_estimator_matches_separate_nodes(star_nodes):
    parts = [nd.data for nd in star_nodes]
    pooled = Dataset.concatenate(parts, 4)
    groups = np.concatenate([[nd.node_id] * len(nd.data) for nd in star_nodes])
    est = EMMCClassifier(n_components=2, random_state=3).fit(pooled.X, pooled.y, groups)
    from emmc._seeding import derive_seed

    manual = EnsembleModel(
        [fit_node(nd.node_id, nd.data,
                  NodeConfig(n_components=2, seed=derive_seed(3, nd.node_id, "node")))
         for nd in star_nodes], 4
    )
    X = generate_synthetic(FOUR_CLASS_SPEC, [20, 20, 20, 20], seed=0).X
    assert np.array_equal(est.predict_proba(X), manual.predict_proba(X))
    assert est.score(X, est.predict(X)) == 1.0


def test_ring_from_pooled_data():
    data = generate_synthetic(FOUR_CLASS_SPEC, [1200, 1200, 1200, 1200], seed=2)
    nodes = assign_to_nodes(data, Topology("ring", 4), seed=1)
    model = EnsembleModel(
        [fit_node(nd.node_id, nd.data, NodeConfig(n_components=3, seed=nd.node_id))
         for nd in nodes], 4
    )
    test = generate_synthetic(FOUR_CLASS_SPEC, [100, 150, 100, 150], seed=3)
    assert np.mean(model.predict(test.X) == test.y) >= 0.97

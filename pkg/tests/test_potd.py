import numpy as np
import pytest
from scipy.stats import ortho_group

from emmc.exceptions import DataError
from emmc.potd import (
    DirectionMatrix,
    PCAReducer,
    PrincipalTransportDirections,
    displacement,
    pca_reduce,
    potd_directions,
    project,
    specificity_experiment,
    write_specificity_csv,
)
from emmc.stats import wasserstein
from oracles import brute_force_w2


def _shifted_pair(rng, n=200, d=6, shift=None, noise=1.0):
    shift = np.eye(d)[0] * 5.0 if shift is None else shift
    normal = rng.normal(scale=noise, size=(n, d))
    attack = rng.normal(scale=noise, size=(n, d)) + shift
    return attack, normal


class TestDisplacement:
    def test_translation(self, rng):
        attack = rng.normal(size=(40, 3))
        v = np.array([0.5, -1.0, 2.0])
        normal = (attack + v)[rng.permutation(40)]
        disp = displacement(attack, normal)
        assert np.allclose(disp.rows, v, atol=1e-12)

    def test_identical_is_zero(self, rng):
        a = rng.normal(size=(20, 2))
        assert np.all(displacement(a, a).rows == 0)

    def test_small_case_matches_brute_force(self, rng):
        a, b = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        disp = displacement(a, b)
        assert np.sqrt(np.mean(np.sum(disp.rows**2, axis=1))) == pytest.approx(
            brute_force_w2(a, b), abs=1e-9
        )

    def test_consistent_with_wasserstein(self, rng):
        a, b = _shifted_pair(rng, n=100)
        disp = displacement(a, b)
        assert abs(np.mean(np.sum(disp.rows**2, axis=1)) - wasserstein(a, b) ** 2) <= 1e-9

    def test_unequal_sizes(self, rng):
        with pytest.raises(DataError, match="sample sizes differ"):
            displacement(rng.normal(size=(5, 2)), rng.normal(size=(6, 2)))


class TestDirections:
    def test_constant_rows(self):
        v = np.array([3.0, -4.0, 0.0])
        dirs = potd_directions(np.tile(v, (10, 1)), r=2)
        assert np.allclose(np.abs(dirs.components[:, 0]), np.abs(v) / 5.0)
        assert dirs.explained_variance_ratio[0] == pytest.approx(1.0)

    def test_mean_shift_recovery(self, rng):
        attack, normal = _shifted_pair(rng, n=300, d=5, noise=0.5)
        dirs = potd_directions(displacement(attack, normal), r=3)
        assert abs(dirs.components[:, 0] @ np.eye(5)[0]) >= 0.99

    def test_orthonormal_and_ratios(self, rng):
        M = rng.normal(size=(50, 7)) @ np.diag([5, 4, 3, 2, 1, 0.5, 0.1])
        dirs = potd_directions(M, r=4)
        assert np.allclose(dirs.components.T @ dirs.components, np.eye(4), atol=1e-10)
        ratios = dirs.explained_variance_ratio
        assert np.all(np.diff(ratios) <= 1e-15) and abs(ratios.sum() - 1.0) <= 1e-10

    def test_sign_convention(self, rng):
        dirs = potd_directions(rng.normal(size=(30, 5)), r=5)
        B = dirs.components
        assert np.all(B[np.argmax(np.abs(B), axis=0), np.arange(5)] > 0)

    def test_rank_deficient_basis_completed(self):
        dirs = potd_directions(np.array([[1.0, 0.0, 0.0, 0.0]]), r=3)
        B = dirs.components
        assert B.shape == (4, 3)
        assert np.allclose(B.T @ B, np.eye(3), atol=1e-10)

    def test_row_permutation_invariance(self, rng):
        M = rng.normal(size=(40, 4)) @ np.diag([4, 3, 2, 1])
        a = potd_directions(M, r=4).components
        b = potd_directions(M[rng.permutation(40)], r=4).components
        assert np.allclose(np.abs(a), np.abs(b), atol=1e-10)

    def test_uncentered_keeps_translation(self):
        rows = np.tile([0.0, 2.0], (20, 1))
        rows[::2, 0] += 0.01
        assert abs(potd_directions(rows, r=1).components[1, 0]) > 0.99
        centered = potd_directions(rows, r=1, center=True).components
        assert abs(centered[0, 0]) > 0.99

    @pytest.mark.parametrize("r", [0, 4])
    def test_r_out_of_range(self, r):
        with pytest.raises(DataError, match="1..3"):
            potd_directions(np.ones((5, 3)), r=r)


class TestProject:
    def test_identity_columns(self, rng):
        X = rng.normal(size=(10, 5))
        assert np.array_equal(project(X, np.eye(5)[:, :2]), X[:, :2])

    def test_idempotent(self, rng):
        B = ortho_group.rvs(6, random_state=1)[:, :3]
        X = rng.normal(size=(20, 6))
        P = project(X, B)
        assert np.allclose(project(P @ B.T, B), P, atol=1e-10)

    def test_contraction(self, rng):
        B = ortho_group.rvs(6, random_state=2)[:, :2]
        X = rng.normal(size=(50, 6))
        assert np.all(np.linalg.norm(project(X, B), axis=1) <= np.linalg.norm(X, axis=1) + 1e-12)

    def test_direction_matrix_input(self, rng):
        dirs = DirectionMatrix(np.eye(3)[:, :1], np.array([1.0, 0, 0]))
        assert project(rng.normal(size=(4, 3)), dirs).shape == (4, 1)

    def test_dim_mismatch(self, rng):
        with pytest.raises(DataError, match="cannot project"):
            project(rng.normal(size=(4, 3)), np.eye(4)[:, :2])


class TestTransformer:
    def test_fit_transform(self, rng):
        attack, normal = _shifted_pair(rng, n=150, d=4)
        X = np.vstack([normal, attack])
        y = np.r_[np.zeros(150), np.full(150, 2)]
        est = PrincipalTransportDirections(n_directions=2, random_state=0)
        Z = est.fit_transform(X, y)
        assert Z.shape == (300, 2) and est.components_.shape == (4, 2)
        assert abs(est.components_[0, 0]) >= 0.99

    def test_subsample(self, rng):
        attack, normal = _shifted_pair(rng, n=100, d=3)
        X = np.vstack([normal, attack[:60]])
        y = np.r_[np.zeros(100), np.ones(60)]
        est = PrincipalTransportDirections(2, n_subsample=50, random_state=1).fit(X, y)
        assert est.displacement_.rows.shape == (50, 3)
        with pytest.raises(DataError, match="exceeds"):
            PrincipalTransportDirections(2, n_subsample=61).fit(X, y)


def _four_attack_groups(rng, n=250, d=8, shift=3.0):
    groups, dirs = {}, {}
    for m in range(1, 5):
        normal = rng.normal(size=(n, d))
        attack = rng.normal(size=(n, d))
        attack[:, m - 1] += shift
        groups[m] = (attack, normal)
        X = np.vstack([normal, attack])
        y = np.r_[np.zeros(n), np.full(n, m)]
        dirs[m] = PrincipalTransportDirections(2, random_state=m).fit(X, y).directions_
    return groups, dirs


class TestSpecificity:
    def test_matched_subspace_wins(self, rng):
        groups, dirs = _four_attack_groups(rng)
        recs = specificity_experiment(groups, dirs, n_sub=100, reps=5, seed=0)
        assert len(recs) == 5 * 4 * 4
        table = {(r.attack, r.rep, r.subspace): r.distance for r in recs}
        for m in range(1, 5):
            for rep in range(5):
                best = max(range(1, 5), key=lambda s: table[(m, rep, s)])
                assert best == m

    def test_single_rep(self, rng):
        groups, dirs = _four_attack_groups(rng, n=60)
        recs = specificity_experiment(groups, dirs, n_sub=30, reps=1, seed=0)
        assert len(recs) == 16 and {r.rep for r in recs} == {0}

    def test_identical_groups_near_zero(self, rng):
        a = rng.normal(size=(50, 3))
        recs = specificity_experiment({1: (a, a)}, {1: np.eye(3)[:, :2]}, n_sub=50, reps=2)
        assert all(r.distance < 1e-12 for r in recs)

    def test_deterministic(self, rng):
        groups, dirs = _four_attack_groups(rng, n=60)
        a = specificity_experiment(groups, dirs, n_sub=30, reps=3, seed=4)
        b = specificity_experiment(groups, dirs, n_sub=30, reps=3, seed=4)
        assert a == b

    def test_insufficient_samples(self, rng):
        a = rng.normal(size=(10, 2))
        with pytest.raises(DataError, match="need 20 samples"):
            specificity_experiment({1: (a, a)}, {1: np.eye(2)}, n_sub=20, reps=1)

    def test_csv(self, rng, tmp_path):
        a = rng.normal(size=(10, 2))
        recs = specificity_experiment({1: (a, a + 1)}, {1: np.eye(2)}, n_sub=10, reps=2)
        text = write_specificity_csv(recs, tmp_path / "s.csv").read_text().splitlines()
        assert text[0] == "subspace,attack,rep,distance" and len(text) == 3


class TestPCA:
    def test_embedded_low_rank_exact(self, rng):
        X = np.zeros((40, 6))
        X[:, :2] = rng.normal(size=(40, 2))
        reducer = PCAReducer(2).fit(X)
        assert np.allclose(reducer.inverse_transform(reducer.transform(X)), X, atol=1e-10)

    def test_full_rank_preserves_distances(self, rng):
        X = rng.normal(size=(30, 4))
        Z, _, _ = pca_reduce(X, 4)
        dx = np.linalg.norm(X[:, None] - X[None], axis=2)
        dz = np.linalg.norm(Z[:, None] - Z[None], axis=2)
        assert np.max(np.abs(dx - dz)) <= 1e-9

    def test_dominant_spectrum(self, rng):
        scales = np.r_[[10.0] * 4, [0.1] * 24]
        Q = ortho_group.rvs(28, random_state=0)
        X = (rng.normal(size=(2000, 28)) * scales) @ Q
        _, dirs, _ = pca_reduce(X, 4)
        assert dirs.explained_variance_ratio[:4].sum() >= 0.9

    def test_fit_on_train_only(self, rng):
        train = rng.normal(size=(100, 3)) + 5
        test = rng.normal(size=(10, 3))
        reducer = PCAReducer(2).fit(train)
        assert np.allclose(reducer.transform(test), (test - train.mean(axis=0))
                           @ reducer.components_)

    def test_errors(self, rng):
        with pytest.raises(DataError):
            PCAReducer(5).fit(rng.normal(size=(10, 3)))
        reducer = PCAReducer(2).fit(rng.normal(size=(10, 3)))
        with pytest.raises(DataError, match="features"):
            reducer.transform(rng.normal(size=(2, 4)))

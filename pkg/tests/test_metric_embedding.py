"""Tests for local metric learning and metric-space neighbor queries."""

import numpy as np
import pytest

from sparsebary.metric import (
    DegenerateDesignError,
    MetricField,
    _field_sq,
    _jacobi_eigh,
    _project_psd,
    learn_local_metrics,
    mahalanobis_sq,
    metric_knn,
)


def random_symmetric(rng, d):
    a = rng.normal(size=(d, d))
    return 0.5 * (a + a.T)


class TestJacobiEigh:
    def test_matches_library_eigendecomposition(self):
        rng = np.random.default_rng(42)
        for d in (1, 2, 3, 5, 7):
            for _ in range(5):
                a = random_symmetric(rng, d) * rng.choice([0.1, 1.0, 100.0])
                vals, vecs = _jacobi_eigh(a)
                np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, a,
                                           atol=1e-10 * max(1.0, np.abs(a).max()))
                np.testing.assert_allclose(np.sort(vals),
                                           np.linalg.eigvalsh(a), atol=1e-10)
                np.testing.assert_allclose(vecs.T @ vecs, np.eye(d),
                                           atol=1e-12)

    def test_diagonal_input_exact(self):
        vals, vecs = _jacobi_eigh(np.diag([3.0, -1.0, 0.5]))
        np.testing.assert_allclose(np.sort(vals), [-1.0, 0.5, 3.0],
                                   atol=1e-15)


class TestProjectPsd:
    def test_psd_input_unchanged(self):
        rng = np.random.default_rng(42)
        a = rng.normal(size=(4, 4))
        spd = a @ a.T + 0.1 * np.eye(4)
        np.testing.assert_array_equal(_project_psd(spd), spd)

    def test_clamps_negative_eigenvalues(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            a = random_symmetric(rng, 5)
            p = _project_psd(a)
            w, v = np.linalg.eigh(a)
            want = v @ np.diag(np.maximum(w, 0.0)) @ v.T
            np.testing.assert_allclose(p, want, atol=1e-10)
            assert np.linalg.eigvalsh(p).min() >= -1e-12


class TestLearnLocalMetrics:
    def test_euclidean_distances_recover_identity(self):
        # point-mass snapshots make the measure distance the parameter
        # distance, so each local form should be the identity
        rng = np.random.default_rng(42)
        pts = rng.normal(size=(16, 3)) * 1.5
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        f = learn_local_metrics(pts, dist)
        eye = np.eye(3)
        fit, true = [], []
        for i in range(16):
            bare = f.matrices[i] - f.eta * eye
            assert np.linalg.norm(bare - eye) <= 0.1
            for j in range(16):
                if i != j:
                    d = pts[j] - pts[i]
                    fit.append(float(d @ bare @ d))
                    true.append(float(d @ d))
        assert np.corrcoef(fit, true)[0, 1] >= 0.999

    def test_linear_map_recovers_gram_matrix(self):
        # distances |A(x - y)| are exactly quadratic, so the fit lands on
        # A^T A and the ridge correction cancels by construction
        rng = np.random.default_rng(42)
        a = np.array([[1.2, 0.3, 0.0], [0.0, 0.9, -0.4], [0.2, 0.0, 1.5]])
        gram = a.T @ a
        pts = rng.normal(size=(16, 3))
        gaps = pts[:, None, :] - pts[None, :, :]
        dist = np.linalg.norm(gaps @ a.T, axis=-1)
        f = learn_local_metrics(pts, dist)
        for i in range(16):
            rel = np.linalg.norm(f.matrices[i] - gram) / np.linalg.norm(gram)
            assert rel <= 0.01

    def test_zero_iterations_gives_exact_ridge(self):
        rng = np.random.default_rng(42)
        pts = rng.normal(size=(5, 2))
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        f = learn_local_metrics(pts, dist, eta=1.0, max_iters=0)
        for i in range(5):
            np.testing.assert_array_equal(f.matrices[i], np.eye(2))

    def test_default_eta_is_scaled_mean_spread(self):
        rng = np.random.default_rng(42)
        pts = rng.normal(size=(6, 2))
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        f = learn_local_metrics(pts, dist, max_iters=0)
        gaps = pts[:, None, :] - pts[None, :, :]
        want = 1e-3 * float(np.mean(np.sum(gaps * gaps, axis=-1)))
        assert f.eta == pytest.approx(want, rel=1e-12)

    def test_fit_beats_zero_matrix_objective(self):
        rng = np.random.default_rng(42)
        pts = rng.normal(size=(8, 2))
        dist = np.abs(rng.normal(size=(8, 8)))
        dist = 0.5 * (dist + dist.T)
        np.fill_diagonal(dist, 0.0)
        f = learn_local_metrics(pts, dist, max_iters=500)
        eye = np.eye(2)
        for i in range(8):
            mask = np.arange(8) != i
            deltas = pts[mask] - pts[i]
            targets = dist[i, mask] ** 2 - f.eta * np.sum(deltas ** 2, axis=1)
            bare = f.matrices[i] - f.eta * eye
            got = np.sum((np.einsum("md,de,me->m", deltas, bare, deltas)
                          - targets) ** 2)
            at_zero = np.sum(targets ** 2)
            assert got <= at_zero + 1e-12

    def test_input_validation(self):
        pts = np.zeros((2, 2))
        with pytest.raises(DegenerateDesignError):
            learn_local_metrics(pts, np.zeros((2, 2)), max_iters=5)
        good = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        asym = np.array([[0.0, 1.0, 2.0], [0.5, 0.0, 1.0], [2.0, 1.0, 0.0]])
        with pytest.raises(ValueError):
            learn_local_metrics(good, asym)
        with pytest.raises(ValueError):
            learn_local_metrics(good, -np.ones((3, 3)))


class TestMetricQueries:
    def field_of_identities(self, pts):
        mats = np.repeat(np.eye(pts.shape[1])[None], pts.shape[0], axis=0)
        return MetricField(points=pts, matrices=mats, eta=0.0)

    def test_mahalanobis_sq_hand_value(self):
        field = MetricField(points=np.zeros((1, 2)),
                            matrices=np.array([[[2.0, 1.0], [1.0, 3.0]]]),
                            eta=0.0)
        m = field.local_metric(0)
        assert mahalanobis_sq(m, np.array([1.0, -1.0]),
                              np.zeros(2)) == pytest.approx(3.0)

    def test_field_sq_matches_scalar_loop(self):
        rng = np.random.default_rng(42)
        pts = rng.normal(size=(7, 3))
        mats = np.stack([random_symmetric(rng, 3) + 4.0 * np.eye(3)
                         for _ in range(7)])
        field = MetricField(points=pts, matrices=mats, eta=0.0)
        x = rng.normal(size=3)
        vec = _field_sq(x, field)
        for i in range(7):
            scalar = mahalanobis_sq(field.local_metric(i), x, pts[i])
            assert vec[i] == pytest.approx(scalar, abs=1e-12)

    def test_knn_euclidean_order_and_ties(self):
        pts = np.array([[0.0, 1.0], [0.0, -1.0], [0.0, 2.0]])
        field = self.field_of_identities(pts)
        order = metric_knn(np.zeros(2), field, 3)
        assert list(order) == [0, 1, 2]
        with pytest.raises(ValueError):
            metric_knn(np.zeros(2), field, 0)
        with pytest.raises(ValueError):
            metric_knn(np.zeros(2), field, 4)

"""Tests for simplex and sparse-simplex projections."""

import itertools

import numpy as np
import pytest

from sparsebary.sparse_simplex import (
    SUPPORT_THRESHOLD,
    SparseWeights,
    gssp,
    project_simplex,
)


def brute_force_gssp(v: np.ndarray, n: int) -> tuple[float, np.ndarray]:
    """Exhaustive projection onto the n-sparse simplex.

    Tries every support of size n, projects the subvector onto the dense
    simplex, and keeps the candidate with the smallest squared distance.
    Returns (best squared distance, best dense vector).
    """
    best_dist = np.inf
    best = None
    for subset in itertools.combinations(range(v.size), n):
        idx = np.array(subset)
        w = np.zeros_like(v)
        w[idx] = project_simplex(v[idx])
        dist = float(np.sum((w - v) ** 2))
        if dist < best_dist - 1e-15:
            best_dist = dist
            best = w
    return best_dist, best


class TestProjectSimplex:
    def test_already_on_simplex_is_fixed(self):
        w = np.array([0.2, 0.5, 0.3])
        np.testing.assert_allclose(project_simplex(w), w, atol=1e-15)

    def test_output_on_simplex(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            v = rng.normal(size=rng.integers(1, 12)) * 10.0
            w = project_simplex(v)
            assert np.all(w >= 0)
            assert abs(w.sum() - 1.0) < 1e-12

    def test_matches_quadratic_program(self):
        # projection minimizes ||w - v||^2; check against a fine grid
        # search on a 2-vector where the solution is closed form
        v = np.array([0.9, 0.3])
        w = project_simplex(v)
        np.testing.assert_allclose(w, [0.8, 0.2], atol=1e-14)

    def test_large_negative_entry_zeroed(self):
        w = project_simplex(np.array([5.0, -5.0]))
        np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-15)

    def test_shift_invariance(self):
        # adding a constant to every entry does not move the projection
        rng = np.random.default_rng(42)
        v = rng.normal(size=7)
        np.testing.assert_allclose(project_simplex(v),
                                   project_simplex(v + 3.7), atol=1e-12)

    def test_rejects_empty_and_matrix_input(self):
        with pytest.raises(ValueError):
            project_simplex(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            project_simplex(np.array([]))


class TestGssp:
    def test_keeps_top_entries(self):
        sw = gssp(np.array([0.1, 0.7, 0.05, 0.3]), 2)
        assert list(sw.support) == [1, 3]
        np.testing.assert_allclose(sw.dense, [0.0, 0.7, 0.0, 0.3], atol=1e-15)

    def test_ties_toward_lower_index(self):
        sw = gssp(np.array([0.5, 0.5, 0.5]), 1)
        assert list(sw.support) == [0]
        assert sw.dense[0] == 1.0

    def test_n_equal_size_is_plain_projection(self):
        rng = np.random.default_rng(42)
        v = rng.normal(size=6)
        sw = gssp(v, 6)
        np.testing.assert_allclose(sw.dense, project_simplex(v), atol=1e-14)

    def test_matches_brute_force(self):
        # acceptance-grade equivalence with exhaustive support search
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(1000):
            size = int(rng.integers(2, 7))
            n = int(rng.integers(1, min(3, size) + 1))
            v = rng.normal(size=size) * rng.choice([0.1, 1.0, 10.0])
            sw = gssp(v, n)
            got = float(np.sum((sw.dense - v) ** 2))
            want, _ = brute_force_gssp(v, n)
            worst = max(worst, abs(got - want))
        assert worst <= 1e-10

    def test_support_threshold_snaps_to_zero(self):
        v = np.array([1.0, SUPPORT_THRESHOLD / 4.0, 0.0])
        sw = gssp(v, 2)
        assert list(sw.support) == [0]
        assert sw.dense[1] == 0.0

    def test_rejects_bad_sparsity(self):
        with pytest.raises(ValueError):
            gssp(np.ones(3), 0)
        with pytest.raises(ValueError):
            gssp(np.ones(3), 4)


class TestSparseWeights:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            SparseWeights(dense=np.array([0.5, 0.6]), support=np.array([0, 1]),
                          n_max=2)
        with pytest.raises(ValueError):
            SparseWeights(dense=np.array([0.5, 0.5]), support=np.array([0]),
                          n_max=2)
        with pytest.raises(ValueError):
            SparseWeights(dense=np.array([0.5, 0.5]), support=np.array([0, 1]),
                          n_max=1)

    def test_support_sorted(self):
        sw = SparseWeights(dense=np.array([0.3, 0.0, 0.7]),
                           support=np.array([2, 0]), n_max=2)
        assert list(sw.support) == [0, 2]
        assert sw.size == 3

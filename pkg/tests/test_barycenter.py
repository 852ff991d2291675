"""Tests for debiased barycenters and the barycentric approximation loss."""

import numpy as np
import pytest

from sparsebary.barycenter import (
    BarycenterProblem,
    LossEngine,
    StepTooLargeError,
    barycentric_loss,
    loss_gradient,
    sinkhorn_barycenter,
)
from sparsebary.grid import default_grid, uniform_square
from sparsebary.sinkhorn import ConvergenceWarning, EntropicConfig

# several checks assert exact identities (shortcut returns, determinism)
# that hold at any fixed-point depth, so partial convergence is fine here
pytestmark = pytest.mark.filterwarnings(
    "ignore::sparsebary.sinkhorn.ConvergenceWarning")


@pytest.fixture(scope="module")
def squares():
    g = default_grid()
    return (uniform_square(g, (4.0, 4.0), 1.5),
            uniform_square(g, (7.0, 4.0), 1.5),
            uniform_square(g, (5.5, 7.0), 1.5))


def center_of_mass(measure):
    g = measure.grid
    r = g.row_coords() @ measure.mass.sum(axis=1)
    c = g.col_coords() @ measure.mass.sum(axis=0)
    return np.array([r, c])


class TestBarycenterProblem:
    def test_validation(self, squares):
        with pytest.raises(ValueError):
            BarycenterProblem(atoms=(), weights=np.array([]))
        with pytest.raises(ValueError):
            BarycenterProblem(atoms=squares, weights=np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            BarycenterProblem(atoms=squares, weights=np.array([0.7, 0.6, -0.3]))
        with pytest.raises(ValueError):
            BarycenterProblem(atoms=squares, weights=np.ones(3) / 3,
                              fixed_point_iters=0)


class TestSinkhornBarycenter:
    def test_single_atom_returned_exactly(self, squares):
        out = sinkhorn_barycenter(BarycenterProblem(
            atoms=squares, weights=np.array([0.0, 1.0, 0.0])))
        np.testing.assert_array_equal(out.mass, squares[1].mass)

    def test_identical_active_atoms_short_circuit(self, squares):
        twin = (squares[0], squares[0], squares[2])
        out = sinkhorn_barycenter(BarycenterProblem(
            atoms=twin, weights=np.array([0.4, 0.6, 0.0])))
        np.testing.assert_array_equal(out.mass, squares[0].mass)

    def test_zero_weight_padding_is_inert(self, squares):
        w = np.array([0.3, 0.7])
        a = sinkhorn_barycenter(BarycenterProblem(
            atoms=squares[:2], weights=w))
        b = sinkhorn_barycenter(BarycenterProblem(
            atoms=squares, weights=np.array([0.3, 0.7, 0.0])))
        np.testing.assert_array_equal(a.mass, b.mass)

    def test_center_of_mass_interpolates(self, squares):
        # quadratic-cost barycenters transport linearly, so the center of
        # mass is the weighted average of the atom centers
        w = np.array([0.25, 0.75])
        out = sinkhorn_barycenter(BarycenterProblem(
            atoms=squares[:2], weights=w))
        want = 0.25 * center_of_mass(squares[0]) + 0.75 * center_of_mass(
            squares[1])
        np.testing.assert_allclose(center_of_mass(out), want, atol=2e-2)

    def test_deterministic(self, squares):
        p = BarycenterProblem(atoms=squares, weights=np.array([0.2, 0.3, 0.5]))
        np.testing.assert_array_equal(sinkhorn_barycenter(p).mass,
                                      sinkhorn_barycenter(p).mass)


class TestBarycentricLoss:
    def test_zero_at_generating_weights(self, squares):
        cfg = EntropicConfig()
        w = np.array([0.3, 0.0, 0.7])
        target = sinkhorn_barycenter(BarycenterProblem(
            atoms=squares, weights=w, entropic=cfg))
        # the bias floor of the divergence is 10 * stop_tol * epsilon
        floor = 10.0 * cfg.stop_tol * default_grid().pixel_size ** 2
        assert barycentric_loss(target, w, squares, cfg) <= floor

    def test_positive_away_from_target(self, squares):
        cfg = EntropicConfig()
        loss = barycentric_loss(squares[2], np.array([1.0, 0.0, 0.0]),
                                squares, cfg)
        assert loss > 0.1

    def test_engine_matches_cold_evaluation(self, squares):
        cfg = EntropicConfig()
        w = np.array([0.5, 0.5, 0.0])
        engine = LossEngine(squares[2], squares, cfg)
        warm_first = engine.loss(w)
        cold = barycentric_loss(squares[2], w, squares, cfg)
        assert warm_first == pytest.approx(cold, rel=1e-12)
        assert engine.solve_count == 1


class TestLossGradient:
    def test_points_toward_target_atom(self, squares):
        cfg = EntropicConfig()
        g = loss_gradient(squares[0], np.array([0.5, 0.5]), squares[:2],
                          [0, 1], cfg)
        assert g.shape == (2,)
        assert g[0] < 0 < g[1]

    def test_deterministic(self, squares):
        cfg = EntropicConfig()
        a = loss_gradient(squares[0], np.array([0.5, 0.5]), squares[:2],
                          [0, 1], cfg)
        b = loss_gradient(squares[0], np.array([0.5, 0.5]), squares[:2],
                          [0, 1], cfg)
        np.testing.assert_array_equal(a, b)

    def test_small_at_generating_weights(self, squares):
        cfg = EntropicConfig()
        w = np.array([0.4, 0.6])
        target = sinkhorn_barycenter(BarycenterProblem(
            atoms=squares[:2], weights=w, entropic=cfg))
        g = loss_gradient(target, w, squares[:2], [0, 1], cfg)
        assert np.abs(g).max() <= 1e-3

    def test_forward_agrees_with_central(self, squares):
        cfg = EntropicConfig()
        w = np.array([0.5, 0.5])
        c = loss_gradient(squares[0], w, squares[:2], [0, 1], cfg,
                          scheme="central")
        f = loss_gradient(squares[0], w, squares[:2], [0, 1], cfg,
                          scheme="forward")
        assert np.all(np.sign(c) == np.sign(f))
        assert np.abs(c - f).max() <= 0.05 * max(1.0, np.abs(c).max())

    def test_step_validation(self, squares):
        cfg = EntropicConfig()
        with pytest.raises(StepTooLargeError):
            loss_gradient(squares[0], np.array([0.5, 0.5]), squares[:2],
                          [0, 1], cfg, fd_step=1.0)

"""Tests for the sparse projected-descent solvers."""

import numpy as np
import pytest

from sparsebary.barycenter import BarycenterProblem, sinkhorn_barycenter
from sparsebary.descent import DescentConfig, DescentTrace, DivergedError, gas, pg, rgsp
from sparsebary.grid import Grid2D, uniform_square
from sparsebary.sinkhorn import EntropicConfig

# a coarse grid keeps every solve cheap; descent behavior is grid-agnostic
pytestmark = pytest.mark.filterwarnings(
    "ignore::sparsebary.sinkhorn.ConvergenceWarning")

CENTERS = [(5, 5), (7, 7), (2, 2), (2, 10), (10, 2), (6, 6)]


@pytest.fixture(scope="module")
def atoms():
    g = Grid2D(height=16, width=16, pixel_size=0.75, origin=(0.375, 0.375))
    return tuple(uniform_square(g, c, 2.25) for c in CENTERS)


@pytest.fixture(scope="module")
def pair_target(atoms):
    # barycenter supported on the first two atoms, so the run-0 start
    # already sits on the right face and only the weights need recovering
    w = np.array([0.6, 0.4, 0, 0, 0, 0])
    return w, sinkhorn_barycenter(BarycenterProblem(atoms=atoms, weights=w))


@pytest.fixture(scope="module")
def triple_target(atoms):
    w = np.array([0.5, 0.3, 0, 0, 0, 0.2])
    return w, sinkhorn_barycenter(BarycenterProblem(atoms=atoms, weights=w))


def check_trace_shape(trace: DescentTrace, n: int) -> None:
    assert len(trace.loss_history) == len(trace.support_history)
    assert len(trace.loss_history) == len(trace.solve_counts)
    assert trace.best_loss == min(trace.loss_history)
    assert trace.final_weights.n_max == n
    assert trace.final_weights.dense.sum() == pytest.approx(1.0, abs=1e-10)
    for supp in trace.support_history:
        assert len(supp) <= n
        assert list(supp) == sorted(supp)


class TestValidation:
    def test_config_rejects_bad_fields(self):
        with pytest.raises(ValueError):
            DescentConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            DescentConfig(max_outer_iters=0)
        with pytest.raises(ValueError):
            DescentConfig(rel_tol=-1e-9)
        with pytest.raises(ValueError):
            DescentConfig(restarts=0)
        with pytest.raises(ValueError):
            DescentConfig(fd_step=1.0)

    def test_sparsity_out_of_range(self, atoms, pair_target):
        _, target = pair_target
        with pytest.raises(ValueError):
            pg(target, atoms, 0)
        with pytest.raises(ValueError):
            pg(target, atoms, len(atoms) + 1)

    def test_rgsp_needs_room_for_candidates(self, atoms, pair_target):
        _, target = pair_target
        with pytest.raises(ValueError):
            rgsp(target, atoms, 3)


class TestProjectedGradient:
    def test_recovers_pair_weights(self, atoms, pair_target):
        w_true, target = pair_target
        trace = pg(target, atoms, 2,
                   DescentConfig(learning_rate=0.1, max_outer_iters=80))
        check_trace_shape(trace, 2)
        assert trace.best_loss <= 1e-3
        assert np.abs(trace.final_weights.dense - w_true).sum() <= 2e-2
        assert trace.loss_history[-1] < trace.loss_history[0]

    def test_target_in_dictionary_drains_to_vertex(self, atoms):
        trace = pg(atoms[0], atoms, 2,
                   DescentConfig(learning_rate=0.2, max_outer_iters=80))
        assert trace.converged
        assert tuple(trace.final_weights.support) == (0,)
        assert trace.best_loss == 0.0

    def test_single_atom_dictionary(self, atoms):
        trace = pg(atoms[0], atoms[:1], 1, DescentConfig(max_outer_iters=10))
        check_trace_shape(trace, 1)
        assert tuple(trace.final_weights.support) == (0,)
        assert trace.best_loss == 0.0

    def test_solve_budget_per_iteration(self, atoms, triple_target):
        _, target = triple_target
        trace = pg(target, atoms, 3,
                   DescentConfig(learning_rate=0.02, max_outer_iters=8))
        assert trace.solve_counts[0] <= 1
        for count, supp in zip(trace.solve_counts[1:], trace.support_history):
            assert count <= len(supp) + 2

    def test_deterministic(self, atoms, pair_target):
        _, target = pair_target
        cfg = DescentConfig(learning_rate=0.1, max_outer_iters=10)
        a = pg(target, atoms, 2, cfg)
        b = pg(target, atoms, 2, cfg)
        assert a.loss_history == b.loss_history
        np.testing.assert_array_equal(a.final_weights.dense,
                                      b.final_weights.dense)

    def test_restarts_can_find_distant_support(self, atoms):
        # run 0 starts on {0} and is pinned there; a random restart that
        # lands on the matching atom wins with an exactly zero loss
        trace = pg(atoms[5], atoms, 1,
                   DescentConfig(max_outer_iters=8, restarts=8, seed=3))
        assert trace.restart_index > 0
        assert tuple(trace.final_weights.support) == (5,)
        assert trace.best_loss == 0.0

    def test_divergence_raises(self, atoms, pair_target):
        # a fixed step at twice the stable size oscillates and blows up
        _, target = pair_target
        with pytest.raises(DivergedError):
            pg(target, atoms, 2,
               DescentConfig(learning_rate=0.5, max_outer_iters=80))


class TestAdaptiveSparsity:
    def test_support_shrinks_onto_dictionary_atom(self, atoms):
        trace = gas(atoms[0], atoms, 2,
                    DescentConfig(learning_rate=0.2, max_outer_iters=80))
        check_trace_shape(trace, 2)
        assert tuple(trace.final_weights.support) == (0,)
        assert trace.best_loss == 0.0

    def test_budget_matches_projected_gradient(self, atoms, pair_target):
        _, target = pair_target
        trace = gas(target, atoms, 2,
                    DescentConfig(learning_rate=0.1, max_outer_iters=8))
        for count, supp in zip(trace.solve_counts[1:], trace.support_history):
            assert count <= len(supp) + 2

    def test_matches_pg_while_support_is_full(self, atoms, pair_target):
        # with the step support never shrinking below n the two algorithms
        # perform identical updates
        _, target = pair_target
        cfg = DescentConfig(learning_rate=0.1, max_outer_iters=6)
        a = pg(target, atoms, 2, cfg)
        b = gas(target, atoms, 2, cfg)
        assert a.loss_history == b.loss_history


class TestRestrictedPursuit:
    def test_improves_on_initial_loss(self, atoms, triple_target):
        _, target = triple_target
        trace = rgsp(target, atoms, 2,
                     DescentConfig(learning_rate=0.02, max_outer_iters=3))
        check_trace_shape(trace, 2)
        assert trace.best_loss < trace.loss_history[0]

    def test_rounds_are_heavier_than_pg_iterations(self, atoms, triple_target):
        _, target = triple_target
        trace = rgsp(target, atoms, 2,
                     DescentConfig(learning_rate=0.02, max_outer_iters=2))
        # each round spends a full gradient plus a dense restricted solve
        assert all(c > len(atoms) for c in trace.solve_counts[1:])


class TestHierarchy:
    def test_richer_budget_is_no_worse(self, atoms, triple_target):
        _, target = triple_target
        cfg = DescentConfig(learning_rate=0.02, max_outer_iters=150)
        best = {n: pg(target, atoms, n, cfg).best_loss for n in (2, 3)}
        assert best[3] <= 1.05 * best[2] + 1e-12

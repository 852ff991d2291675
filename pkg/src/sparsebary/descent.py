"""Sparse projected-descent solvers for best n-term barycentric weights.

All three algorithms minimize the divergence from a target measure to the
barycenter of a dictionary of atoms, over weight vectors with at most ``n``
nonzero entries on the probability simplex:

* ``pg``   - projected gradient at fixed sparsity, stepping on the current
  support and re-projecting onto the sparse simplex;
* ``gas``  - like ``pg`` but the sparsity level adapts to the support of
  the gradient step, never exceeding the budget;
* ``rgsp`` - per outer round, a full gradient ranks all coordinates, the
  2n largest-magnitude ones merge with the current support, a short dense
  projected-gradient solve runs on that restricted face (at most 3n
  coordinates), and the result is re-projected onto the sparse simplex.

Gradients come from forward finite differences along renormalized
coordinate paths, so one pg/gas iteration spends at most ``|support| + 2``
barycenter solves; every trace records the per-iteration solve count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sparsebary.barycenter import LossEngine
from sparsebary.grid import GridMeasure
from sparsebary.sinkhorn import EntropicConfig, effective_epsilon
from sparsebary.sparse_simplex import (
    SUPPORT_THRESHOLD,
    SparseWeights,
    gssp,
    project_simplex,
)

__all__ = ["DescentConfig", "DescentTrace", "DivergedError", "pg", "gas", "rgsp"]

_WINDOW = 5  # convergence is judged on loss movement over this many iterations
_RGSP_INNER = 25  # dense restricted solve length inside each rgsp round


class DivergedError(RuntimeError):
    """Raised when the loss grows an order of magnitude above its start."""


@dataclass(frozen=True)
class DescentConfig:
    """Settings shared by the sparse descent solvers.

    ``restarts`` counts initializations in total: the first uses uniform
    weights on the lowest ``n`` indices, later ones draw a uniform random
    n-subset from the seeded generator.
    """

    learning_rate: float = 0.5
    max_outer_iters: int = 200
    rel_tol: float = 1e-6
    restarts: int = 1
    seed: int = 0
    fd_step: float = 1e-3

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be nonnegative")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if not 0 < self.fd_step < 1:
            raise ValueError("fd_step must lie in (0, 1)")


@dataclass
class DescentTrace:
    """Per-iteration record of one solver call (best restart when several)."""

    loss_history: list[float]
    support_history: list[tuple[int, ...]]
    final_weights: SparseWeights
    best_loss: float
    converged: bool
    solve_counts: list[int]
    restart_index: int
    algorithm: str


def _initial_dense(n_atoms: int, n: int, run: int, rng: np.random.Generator,
                   ) -> np.ndarray:
    if run == 0:
        idx = np.arange(n)
    else:
        idx = np.sort(rng.choice(n_atoms, size=n, replace=False))
    dense = np.zeros(n_atoms)
    dense[idx] = 1.0 / n
    return dense


def _window_converged(history: list[float], rel_tol: float) -> bool:
    if len(history) < _WINDOW + 1:
        return False
    recent = history[-(_WINDOW + 1):]
    span = max(recent) - min(recent)
    return span <= rel_tol * max(abs(recent[0]), abs(recent[-1]), 1e-300)


def _check_divergence(loss: float, initial: float, floor: float) -> None:
    if loss > max(10.0 * initial, floor):
        raise DivergedError(
            f"loss {loss:.6e} grew past ten times the initial {initial:.6e}")


def _as_sparse(dense: np.ndarray, n_max: int) -> SparseWeights:
    return SparseWeights(dense=dense, support=np.flatnonzero(dense), n_max=n_max)


def _run_descent(algorithm: str, target: GridMeasure, atoms, n: int,
                 cfg: DescentConfig, entropic: EntropicConfig,
                 fixed_point_iters: int) -> DescentTrace:
    atoms = tuple(atoms)
    n_atoms = len(atoms)
    if not 1 <= n <= n_atoms:
        raise ValueError(f"sparsity level {n} out of range for {n_atoms} atoms")
    if algorithm == "rgsp" and 3 * n > n_atoms:
        raise ValueError("rgsp requires 3 * n <= number of atoms")
    engine = LossEngine(target, atoms, entropic, fixed_point_iters)
    eps = effective_epsilon(entropic, atoms[0].grid)
    # absolute floor so noise around a near-zero start never reads as divergence
    div_floor = 1e3 * entropic.stop_tol * eps
    rng = np.random.default_rng(cfg.seed)
    tau = cfg.learning_rate

    best_trace: DescentTrace | None = None
    for run in range(cfg.restarts):
        dense = _initial_dense(n_atoms, n, run, rng)
        before = engine.solve_count
        loss = engine.loss(dense)
        losses = [loss]
        supports = [tuple(int(i) for i in np.flatnonzero(dense))]
        solves = [engine.solve_count - before]
        best_loss = loss
        best_dense = dense.copy()
        converged = False

        for _ in range(cfg.max_outer_iters):
            before = engine.solve_count
            if algorithm in ("pg", "gas"):
                active = [int(i) for i in np.flatnonzero(dense)]
                grad = engine.gradient(dense, active, cfg.fd_step,
                                       scheme="forward")
                trial = dense.copy()
                trial[active] -= tau * grad
                if algorithm == "gas":
                    level = min(n, max(1, int((trial > SUPPORT_THRESHOLD).sum())))
                else:
                    level = n
                sw = gssp(trial, level)
                dense = sw.dense
            else:  # rgsp
                full = engine.gradient(dense, list(range(n_atoms)), cfg.fd_step,
                                       scheme="forward")
                ranked = np.argsort(-np.abs(full), kind="stable")[:2 * n]
                restricted = np.union1d(ranked, np.flatnonzero(dense)).astype(int)
                sub = dense[restricted]
                for _ in range(_RGSP_INNER):
                    embedded = np.zeros(n_atoms)
                    embedded[restricted] = sub
                    sub_grad = engine.gradient(embedded, list(restricted),
                                               cfg.fd_step, scheme="forward")
                    sub = project_simplex(sub - tau * sub_grad)
                    embedded = np.zeros(n_atoms)
                    embedded[restricted] = sub
                    engine.loss(embedded)  # settles the state for the next pass
                embedded = np.zeros(n_atoms)
                embedded[restricted] = sub
                sw = gssp(embedded, n)
                dense = sw.dense
            loss = engine.loss(dense)
            losses.append(loss)
            supports.append(tuple(int(i) for i in sw.support))
            solves.append(engine.solve_count - before)
            if loss < best_loss:
                best_loss = loss
                best_dense = dense.copy()
            _check_divergence(loss, losses[0], div_floor)
            if _window_converged(losses, cfg.rel_tol):
                converged = True
                break

        if best_trace is None or best_loss < best_trace.best_loss:
            best_trace = DescentTrace(
                loss_history=losses, support_history=supports,
                final_weights=_as_sparse(best_dense, n), best_loss=best_loss,
                converged=converged, solve_counts=solves, restart_index=run,
                algorithm=algorithm)
    assert best_trace is not None
    return best_trace


def pg(target: GridMeasure, atoms, n: int, cfg: DescentConfig = DescentConfig(),
       entropic: EntropicConfig = EntropicConfig(),
       fixed_point_iters: int = 100) -> DescentTrace:
    """Projected gradient at fixed sparsity ``n``.

    Each iteration differences the loss on the current support, takes a
    gradient step there, and re-projects onto the n-sparse simplex.  The
    returned trace belongs to the restart with the lowest observed loss,
    and its ``final_weights`` are the best iterate of that restart.
    """
    return _run_descent("pg", target, atoms, n, cfg, entropic, fixed_point_iters)


def gas(target: GridMeasure, atoms, n: int, cfg: DescentConfig = DescentConfig(),
        entropic: EntropicConfig = EntropicConfig(),
        fixed_point_iters: int = 100) -> DescentTrace:
    """Adaptive-sparsity variant of :func:`pg`.

    After the gradient step the sparsity level drops to the size of the
    step's support whenever that is below the budget ``n``, so the support
    can only shrink or hold; ties and thresholds follow the sparse
    projection rules.
    """
    return _run_descent("gas", target, atoms, n, cfg, entropic, fixed_point_iters)


def rgsp(target: GridMeasure, atoms, n: int, cfg: DescentConfig = DescentConfig(),
         entropic: EntropicConfig = EntropicConfig(),
         fixed_point_iters: int = 100) -> DescentTrace:
    """Restricted greedy support pursuit.

    Requires ``3 * n`` at most the number of atoms.  Each outer round costs
    a full-vector gradient (one forward difference per atom) plus a fixed
    25-iteration dense projected-gradient solve on the merged candidate
    face, so rounds are much heavier than ``pg`` or ``gas`` iterations;
    budget ``max_outer_iters`` accordingly.
    """
    return _run_descent("rgsp", target, atoms, n, cfg, entropic,
                        fixed_point_iters)

"""Debiased entropic barycenters and the barycentric approximation loss.

The barycenter of atoms ``alpha_k`` with simplex weights ``w`` minimizes the
weighted sum of debiased divergences to the atoms.  It is computed by a
log-domain fixed point over one scaling potential per atom plus one
debiasing potential; the debiasing update is half-damped.  Convergence is
tracked on the output itself: the residual is the total-variation change
of the mass iterate over one step.  With a single distinct active atom the
fixed point is that atom, returned exactly, which is what makes the
divergence a usable approximation loss.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from sparsebary.grid import GridMeasure
from sparsebary.sinkhorn import (
    ConvergenceWarning,
    EntropicConfig,
    _lambda_schedule,
    _PairGeometry,
    _safe_log,
    effective_epsilon,
    ot_eps,
    self_transport_cost,
)

__all__ = [
    "BarycenterProblem",
    "StepTooLargeError",
    "sinkhorn_barycenter",
    "barycentric_loss",
    "loss_gradient",
]


class StepTooLargeError(ValueError):
    """Raised when a finite-difference step cannot stay inside [0, 1]."""


# Fixed-point steps per warm evaluation.  Keeping this identical across
# calls pins every evaluation to the same phase of the slow convergence
# tail, so the shared tail error cancels in finite differences.
_WARM_ITERS = 10

# A move of the weight vector beyond this total-variation distance from the
# last solved weights invalidates the warm potentials; the solve then runs
# the full budget again.  Finite-difference probes stay far below this.
_REPRIME_TV = 0.02


@dataclass(frozen=True)
class BarycenterProblem:
    """Atoms on a common grid, simplex weights, and solver settings."""

    atoms: tuple[GridMeasure, ...]
    weights: np.ndarray = field(repr=False)
    entropic: EntropicConfig = EntropicConfig()
    fixed_point_iters: int = 100

    def __post_init__(self) -> None:
        if not self.atoms:
            raise ValueError("at least one atom is required")
        grid = self.atoms[0].grid
        for a in self.atoms[1:]:
            if a.grid != grid:
                raise ValueError("atoms must share a common grid")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(self.atoms),):
            raise ValueError("one weight per atom is required")
        if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must lie on the probability simplex")
        if self.fixed_point_iters < 1:
            raise ValueError("fixed_point_iters must be at least 1")
        if self.entropic.anneal_steps >= self.fixed_point_iters:
            raise ValueError("anneal_steps must leave room for fixed-point steps")
        object.__setattr__(self, "weights", w)


class _BaryState:
    """Warm-start potentials keyed by atom index."""

    def __init__(self, shape: tuple[int, int]) -> None:
        self.psi: dict[int, np.ndarray] = {}
        self.delta = np.zeros(shape)
        self.mass: np.ndarray | None = None  # output of the latest solve
        self.last_weights: np.ndarray | None = None  # weights of that solve
        self.primed = False  # True once one annealed solve has completed


def _solve_barycenter(atoms: tuple[GridMeasure, ...], weights: np.ndarray,
                      cfg: EntropicConfig, fixed_point_iters: int,
                      geom: _PairGeometry | None = None,
                      state: _BaryState | None = None,
                      use_shortcut: bool = True,
                      ) -> tuple[np.ndarray, _BaryState, float, bool]:
    """Run the debiased fixed point; returns (mass, state, residual, converged).

    ``state`` carries potentials from a previous nearby solve; when primed,
    annealing is skipped and iterations start at the target temperature.
    A state primed beyond ``_REPRIME_TV`` of the requested weights is
    discarded and the solve anneals from scratch: potentials settled at
    far-away weights are worse than no information, and continuing from
    them makes the result depend on the evaluation path.  The residual is
    the total-variation change of the output mass over the last iteration,
    compared against ``stop_tol`` directly.  With ``use_shortcut=False``
    the degenerate single-measure case is iterated like any other, which
    finite differencing relies on for phase-matched evaluations.
    """
    grid = atoms[0].grid
    if geom is None:
        geom = _PairGeometry(grid, grid)
    eps = effective_epsilon(cfg, grid)
    lam = 2.0 * eps
    if state is None:
        state = _BaryState(grid.shape)
    active = [int(k) for k in np.flatnonzero(weights > 0)]
    first = atoms[active[0]].mass
    if use_shortcut and all(np.array_equal(atoms[k].mass, first)
                            for k in active[1:]):
        # A divergence sum over one distinct measure is minimized by that
        # measure; return it exactly and leave any warm state untouched.
        return first.copy(), state, 0.0, True
    if state.last_weights is not None and _moved_far(state.last_weights,
                                                     weights):
        # a fresh annealed solve beats warm-starting from far-away
        # potentials, and makes the value independent of evaluation order
        state = _BaryState(grid.shape)
    logs = {k: _safe_log(atoms[k].mass) for k in active}
    for k in active:
        if k not in state.psi:
            state.psi[k] = np.zeros(grid.shape)

    schedule = [] if state.primed else _lambda_schedule(cfg, eps, geom.diameter)
    iters = 0
    residual = np.inf
    converged = False
    mass = state.mass

    def step(lam_t: float) -> float:
        nonlocal mass
        smaps = {}
        lbeta = state.delta.copy()
        for k in active:
            phi = lam_t * logs[k] - geom.lse_on_a(state.psi[k], lam_t)
            smaps[k] = geom.lse_on_a(phi, lam_t)
            lbeta = lbeta + weights[k] * smaps[k]
        for k in active:
            state.psi[k] = lbeta - smaps[k]
        state.delta = 0.5 * (state.delta + lbeta - geom.lse_on_a(state.delta, lam_t))
        arg = (lbeta - float(lbeta.max())) / lam_t
        new_mass = np.zeros(grid.shape)
        np.exp(arg, out=new_mass, where=arg > -745.0)
        new_mass /= new_mass.sum()
        diff = (0.5 * float(np.abs(new_mass - mass).sum())
                if mass is not None else np.inf)
        mass = new_mass
        return diff

    for lam_t in schedule:
        step(lam_t)
        iters += 1
    while iters < fixed_point_iters:
        residual = step(lam)
        iters += 1
        if residual <= cfg.stop_tol:
            converged = True
            break
    state.primed = True
    state.mass = mass
    state.last_weights = weights.copy()
    return mass, state, residual, converged


def _moved_far(anchor: np.ndarray | None, weights: np.ndarray) -> bool:
    """True when ``weights`` sit beyond ``_REPRIME_TV`` of ``anchor``.

    Warm potentials are only trusted near the weights they were stored at;
    a missing anchor counts as far.  Every warm-start tied to the moving
    barycenter (its own potentials, transport potentials against it) must
    key off this predicate at its own anchor, otherwise stale potentials
    leak into far evaluations and the values become path dependent.
    """
    if anchor is None:
        return True
    moved = 0.5 * float(np.abs(np.asarray(weights, dtype=np.float64)
                               - anchor).sum())
    return moved > _REPRIME_TV


def _warm_budget(state: _BaryState, weights: np.ndarray, full: int) -> int:
    """Iteration budget for the next solve against this warm state.

    Far moves (see :func:`_moved_far`) get the full budget, everything
    closer continues for ``_WARM_ITERS`` steps.
    """
    if _moved_far(state.last_weights, weights):
        return full
    return min(_WARM_ITERS, full)


def sinkhorn_barycenter(problem: BarycenterProblem) -> GridMeasure:
    """Debiased barycenter of the problem's atoms at its simplex weights.

    Atoms with zero weight are skipped entirely, so padding the atom list
    leaves the result unchanged.  When every active atom is the same
    measure the output is that measure, bit for bit.  The fixed-point
    residual is the total-variation change of the mass over the final
    iteration; a warning is emitted when it exceeds ``10 * stop_tol``.
    """
    mass, _, residual, _ = _solve_barycenter(
        problem.atoms, problem.weights, problem.entropic,
        problem.fixed_point_iters)
    if residual > 10.0 * problem.entropic.stop_tol:
        warnings.warn(
            f"barycenter fixed point stopped with residual {residual:.3e}",
            ConvergenceWarning, stacklevel=2)
    return GridMeasure(grid=problem.atoms[0].grid, mass=mass)


class LossEngine:
    """Warm-started evaluator of the barycentric approximation loss.

    Evaluates ``divergence(target, barycenter(weights))`` for sequences of
    nearby weight vectors, reusing barycenter and transport potentials
    between calls.  ``solve_count`` tallies barycenter solves so iteration
    budgets can be audited.
    """

    def __init__(self, target: GridMeasure, atoms: tuple[GridMeasure, ...],
                 cfg: EntropicConfig, fixed_point_iters: int = 100) -> None:
        grid = atoms[0].grid
        if abs(target.grid.pixel_size - grid.pixel_size) > 1e-12 * grid.pixel_size:
            raise ValueError("target and atoms must share the pixel size")
        self.target = target
        self.atoms = tuple(atoms)
        self.cfg = cfg
        self.fixed_point_iters = fixed_point_iters
        self.eps = effective_epsilon(cfg, grid)
        self._geom_bary = _PairGeometry(grid, grid)
        self._state = _BaryState(grid.shape)
        self._cross_init = None
        self._beta_self_init: np.ndarray | None = None
        self._cross_anchor: np.ndarray | None = None  # weights those were stored at
        self._target_self: float | None = None
        self.solve_count = 0
        self.last_measure: GridMeasure | None = None

    def _target_self_cost(self) -> float:
        if self._target_self is None:
            cost, _, _, _ = self_transport_cost(self.target, self.cfg)
            self._target_self = cost
        return self._target_self

    def loss(self, weights: np.ndarray) -> float:
        """Divergence from the target to the barycenter at ``weights``.

        The first solve and any call that moves the weights far from the
        previously solved ones run the full ``fixed_point_iters`` budget;
        nearby calls continue the warm state for a short fixed number of
        steps, which keeps finite differences consistent.
        """
        return self._loss_impl(weights, use_shortcut=True)

    def _loss_impl(self, weights: np.ndarray, use_shortcut: bool,
                   budget: int | None = None) -> float:
        w = np.asarray(weights, dtype=np.float64)
        if _moved_far(self._cross_anchor, w):
            # the barycenter changed a lot since these potentials were
            # stored, so they are stale; solve the transports cold
            self._cross_init = None
            self._beta_self_init = None
        if budget is None:
            budget = _warm_budget(self._state, w, self.fixed_point_iters)
        mass, self._state, _, _ = _solve_barycenter(
            self.atoms, w, self.cfg, budget,
            geom=self._geom_bary, state=self._state,
            use_shortcut=use_shortcut)
        self.solve_count += 1
        beta = GridMeasure(grid=self.atoms[0].grid, mass=mass)
        self.last_measure = beta
        cross = ot_eps(self.target, beta, self.cfg, init=self._cross_init)
        self._cross_init = cross.potentials
        self_b, pot_b, _, _ = self_transport_cost(beta, self.cfg,
                                                  init=self._beta_self_init)
        self._beta_self_init = pot_b
        self._cross_anchor = w.copy()
        return max(cross.cost - 0.5 * self._target_self_cost() - 0.5 * self_b, 0.0)

    def _snapshot(self) -> tuple:
        # the solvers rebind state arrays instead of mutating them, so a
        # shallow copy of the potential dict pins the whole state
        s = self._state
        return (dict(s.psi), s.delta, s.mass, s.last_weights, s.primed,
                self._cross_init, self._beta_self_init, self._cross_anchor)

    def _restore(self, snap: tuple) -> None:
        s = self._state
        (psi, s.delta, s.mass, s.last_weights, s.primed,
         self._cross_init, self._beta_self_init, self._cross_anchor) = snap
        s.psi = dict(psi)

    def gradient(self, weights: np.ndarray, active_set, fd_step: float,
                 scheme: str = "central") -> np.ndarray:
        """Finite-difference loss gradient along renormalized directions.

        Component ``i`` differences the loss along ``t -> (w + t e_i) /
        (1 + t)``, the feasible path that perturbs coordinate ``i`` and
        renormalizes.  Central differences are used where the backward
        point stays on the simplex; coordinates smaller than the step fall
        back to a forward difference from the base point.

        Every difference is evaluated from one snapshot of the solver
        state settled at ``weights``: each perturbed point restarts from
        that snapshot for the same short budget, so the shared truncation
        of the fixed point cancels inside each difference instead of
        leaking between coordinates.
        """
        if not 0 < fd_step:
            raise ValueError("fd_step must be positive")
        if fd_step >= 1.0:
            raise StepTooLargeError(
                f"fd_step {fd_step} pushes perturbed weights outside [0, 1]")
        if scheme not in ("central", "forward"):
            raise ValueError(f"unknown scheme {scheme!r}")
        w = np.asarray(weights, dtype=np.float64)
        settled = not _moved_far(self._state.last_weights, w)
        if not settled:
            self._loss_impl(w, use_shortcut=False,
                            budget=self.fixed_point_iters)
        snap = self._snapshot()
        base: float | None = None
        out = np.empty(len(active_set))
        for pos, i in enumerate(active_set):
            plus = w.copy()
            plus[i] += fd_step
            plus /= 1.0 + fd_step
            self._restore(snap)
            lp = self._loss_impl(plus, use_shortcut=False,
                                 budget=min(_WARM_ITERS, self.fixed_point_iters))
            if scheme == "central" and w[i] >= fd_step:
                minus = w.copy()
                minus[i] -= fd_step
                minus /= 1.0 - fd_step
                self._restore(snap)
                lm = self._loss_impl(minus, use_shortcut=False,
                                     budget=min(_WARM_ITERS,
                                                self.fixed_point_iters))
                out[pos] = (lp - lm) / (2.0 * fd_step)
            else:
                if base is None:
                    self._restore(snap)
                    base = self._loss_impl(w, use_shortcut=False,
                                           budget=min(_WARM_ITERS,
                                                      self.fixed_point_iters))
                out[pos] = (lp - base) / fd_step
        self._restore(snap)
        return out


def barycentric_loss(target: GridMeasure, weights: np.ndarray,
                     atoms: tuple[GridMeasure, ...], cfg: EntropicConfig,
                     fixed_point_iters: int = 100) -> float:
    """Divergence from ``target`` to the barycenter of ``atoms`` at ``weights``.

    Cold, deterministic evaluation; iterative pipelines should hold a
    :class:`LossEngine` instead to reuse potentials between nearby calls.
    """
    problem = BarycenterProblem(atoms=tuple(atoms), weights=weights,
                                entropic=cfg, fixed_point_iters=fixed_point_iters)
    engine = LossEngine(target, problem.atoms, cfg, fixed_point_iters)
    return engine.loss(problem.weights)


def loss_gradient(target: GridMeasure, weights: np.ndarray,
                  atoms: tuple[GridMeasure, ...], active_set,
                  cfg: EntropicConfig, fd_step: float = 1e-3,
                  scheme: str = "central",
                  fixed_point_iters: int = 100) -> np.ndarray:
    """Finite-difference gradient of the barycentric loss on an active set.

    Returns one component per entry of ``active_set``, the derivative of
    the loss along the renormalized perturbation path of that coordinate.
    Deterministic for fixed inputs.

    Raises
    ------
    StepTooLargeError
        If ``fd_step`` is at least 1, so that the backward renormalization
        would push weights outside ``[0, 1]``.
    """
    w = np.asarray(weights, dtype=np.float64)
    active = [int(i) for i in active_set]
    if len(set(active)) != len(active):
        raise ValueError("active_set may not repeat indices")
    if any(i < 0 or i >= len(atoms) for i in active):
        raise ValueError("active_set index out of range")
    engine = LossEngine(target, tuple(atoms), cfg, fixed_point_iters)
    return engine.gradient(w, active, fd_step, scheme=scheme)

"""Entropy-regularized optimal transport between grid measures.

The primal objective regularizes the transport cost with ``2 * epsilon``
times the KL divergence of the plan against the product measure, so
``epsilon`` stays homogeneous to a squared length and the Gibbs kernel is
``exp(-cost / (2 * epsilon))``.  All iterations run in the log domain with
symmetric half-damped softmin updates, an annealed temperature schedule,
and the separable grid transform from :mod:`sparsebary._kernels`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from sparsebary._kernels import lse_grid
from sparsebary.grid import Grid2D, GridMeasure

__all__ = [
    "EntropicConfig",
    "DualPotentials",
    "OtResult",
    "ConvergenceWarning",
    "effective_epsilon",
    "ot_eps",
    "self_transport_cost",
    "sinkhorn_divergence",
    "pairwise_distance_matrix",
]


class ConvergenceWarning(UserWarning):
    """Emitted when a transport solve stops far from its fixed point."""


@dataclass(frozen=True)
class EntropicConfig:
    """Settings shared by every Sinkhorn-type computation.

    Parameters
    ----------
    epsilon : float or None
        Regularization strength, homogeneous to ``pixel_size ** 2``;
        ``None`` resolves to the squared pixel size of the operand grid.
    max_iters : int
        Total iteration budget, annealing steps included.
    stop_tol : float
        Convergence threshold on the sup-norm fixed-point residual of the
        potentials, measured in units of ``epsilon``.
    anneal_steps : int
        Number of leading iterations run on a geometric temperature decay
        from ``(anneal_start_scale * diameter) ** 2`` down to ``epsilon``.
    anneal_start_scale : float
        Multiple of the grid diameter that seeds the annealing schedule.
    """

    epsilon: float | None = None
    max_iters: int = 500
    stop_tol: float = 1e-6
    anneal_steps: int = 30
    anneal_start_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.stop_tol > 0:
            raise ValueError("stop_tol must be positive")
        if self.anneal_steps < 0:
            raise ValueError("anneal_steps must be nonnegative")
        if self.anneal_steps >= self.max_iters:
            raise ValueError("anneal_steps must leave room for fixed-point iterations")
        if not self.anneal_start_scale >= 1.0:
            raise ValueError("anneal_start_scale must be at least 1")


@dataclass(frozen=True)
class DualPotentials:
    """Pair of dual potentials, one per operand grid, in squared-length units."""

    f: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class OtResult:
    """Outcome of one entropic transport solve."""

    cost: float
    potentials: DualPotentials
    residual: float
    iterations: int
    converged: bool


def effective_epsilon(cfg: EntropicConfig, grid: Grid2D) -> float:
    """Resolve the configured epsilon, defaulting to the squared pixel size."""
    return cfg.epsilon if cfg.epsilon is not None else grid.pixel_size ** 2


def _safe_log(mass: np.ndarray) -> np.ndarray:
    out = np.full(mass.shape, -np.inf)
    pos = mass > 0
    out[pos] = np.log(mass[pos])
    return out


def _gibbs(gap2: np.ndarray, lam: float) -> np.ndarray:
    arg = -gap2 / lam
    out = np.zeros_like(gap2)
    np.exp(arg, out=out, where=arg > -745.0)
    return out


class _PairGeometry:
    """Squared coordinate gaps between two grids, plus per-lambda Gibbs tables.

    Grids must share the pixel size; shapes and origins may differ.
    """

    def __init__(self, grid_a: Grid2D, grid_b: Grid2D) -> None:
        if abs(grid_a.pixel_size - grid_b.pixel_size) > 1e-12 * grid_a.pixel_size:
            raise ValueError("grids must share the same pixel_size")
        ra, ca = grid_a.row_coords(), grid_a.col_coords()
        rb, cb = grid_b.row_coords(), grid_b.col_coords()
        # outputs on A, source on B
        self.g2r_a = np.ascontiguousarray((ra[:, None] - rb[None, :]) ** 2)
        self.g2c_a = np.ascontiguousarray((ca[:, None] - cb[None, :]) ** 2)
        # outputs on B, source on A
        self.g2r_b = np.ascontiguousarray(self.g2r_a.T)
        self.g2c_b = np.ascontiguousarray(self.g2c_a.T)
        self.diameter = max(grid_a.diameter(), grid_b.diameter())
        self._lam = None
        self._tables: tuple[np.ndarray, ...] | None = None

    def tables(self, lam: float) -> tuple[np.ndarray, ...]:
        if self._lam != lam:
            self._tables = (_gibbs(self.g2r_a, lam), _gibbs(self.g2c_a, lam),
                            _gibbs(self.g2r_b, lam), _gibbs(self.g2c_b, lam))
            self._lam = lam
        return self._tables

    def lse_on_a(self, pot_b: np.ndarray, lam: float) -> np.ndarray:
        """``out(x) = lam * logsumexp_y((pot_b(y) - |x - y|^2) / lam)`` on grid A."""
        tr, tc, _, _ = self.tables(lam)
        return lse_grid(pot_b, self.g2r_a, self.g2c_a, tr, tc, lam)

    def lse_on_b(self, pot_a: np.ndarray, lam: float) -> np.ndarray:
        _, _, tr, tc = self.tables(lam)
        return lse_grid(pot_a, self.g2r_b, self.g2c_b, tr, tc, lam)

    def softmin_on_a(self, pot_b: np.ndarray, lam: float) -> np.ndarray:
        """Soft minimum of ``|x - y|^2 - pot_b(y)`` over grid B, sampled on A."""
        return -self.lse_on_a(pot_b, lam)

    def softmin_on_b(self, pot_a: np.ndarray, lam: float) -> np.ndarray:
        return -self.lse_on_b(pot_a, lam)


def _lambda_schedule(cfg: EntropicConfig, eps: float, diameter: float) -> list[float]:
    """Geometric annealing temperatures, ending at the target ``2 * eps``."""
    target = 2.0 * eps
    if cfg.anneal_steps == 0:
        return []
    start = 2.0 * (cfg.anneal_start_scale * max(diameter, 1e-300)) ** 2
    if start <= target:
        return []
    steps = cfg.anneal_steps
    ratio = (target / start) ** (1.0 / steps)
    return [max(target, start * ratio ** (k + 1)) for k in range(steps)]


def ot_eps(alpha: GridMeasure, beta: GridMeasure, cfg: EntropicConfig,
           init: DualPotentials | None = None) -> OtResult:
    """Entropic transport cost between two grid measures.

    Runs symmetric half-damped log-domain softmin updates until the
    fixed-point residual drops below ``stop_tol * epsilon`` or the
    iteration budget runs out.  The returned cost is the dual value
    ``<alpha, f> + <beta, g>``.

    Parameters
    ----------
    alpha, beta : GridMeasure
        Operands; their grids must share the pixel size.
    cfg : EntropicConfig
        Solver settings.
    init : DualPotentials, optional
        Warm-start potentials.  When given, annealing is skipped and the
        iteration starts at the target temperature.

    Returns
    -------
    OtResult
        ``converged`` is False whenever the residual still exceeds the
        stopping threshold; callers treat residuals above ten times the
        threshold as a reportable convergence failure.
    """
    geom = _PairGeometry(alpha.grid, beta.grid)
    eps = effective_epsilon(cfg, alpha.grid)
    lam = 2.0 * eps
    log_a = _safe_log(alpha.mass)
    log_b = _safe_log(beta.mass)
    supp_a = alpha.mass > 0
    supp_b = beta.mass > 0

    if init is not None:
        f = init.f.copy()
        g = init.g.copy()
        schedule: list[float] = []
    else:
        f = np.zeros(alpha.grid.shape)
        g = np.zeros(beta.grid.shape)
        schedule = _lambda_schedule(cfg, eps, geom.diameter)

    iters = 0
    residual = np.inf
    converged = False
    for lam_t in schedule:
        tg = geom.softmin_on_a(g + lam_t * log_b, lam_t)
        tf = geom.softmin_on_b(f + lam_t * log_a, lam_t)
        f = 0.5 * (f + tg)
        g = 0.5 * (g + tf)
        iters += 1
    while iters < cfg.max_iters:
        tg = geom.softmin_on_a(g + lam * log_b, lam)
        tf = geom.softmin_on_b(f + lam * log_a, lam)
        residual = max(
            float(np.abs((f - tg)[supp_a]).max()),
            float(np.abs((g - tf)[supp_b]).max()),
        )
        f = 0.5 * (f + tg)
        g = 0.5 * (g + tf)
        iters += 1
        if residual <= cfg.stop_tol * eps:
            converged = True
            break

    cost = float(np.dot(alpha.mass.ravel(), f.ravel())
                 + np.dot(beta.mass.ravel(), g.ravel()))
    return OtResult(cost=cost, potentials=DualPotentials(f=f, g=g),
                    residual=residual, iterations=iters, converged=converged)


def self_transport_cost(alpha: GridMeasure, cfg: EntropicConfig,
                        init: np.ndarray | None = None) -> tuple[float, np.ndarray,
                                                                 float, bool]:
    """Entropic transport cost of a measure against itself.

    Uses the symmetric single-potential fixed point ``p = softmin(p)``;
    the cost is ``2 * <alpha, p>``.  Returns ``(cost, potential, residual,
    converged)``.
    """
    geom = _PairGeometry(alpha.grid, alpha.grid)
    eps = effective_epsilon(cfg, alpha.grid)
    lam = 2.0 * eps
    log_a = _safe_log(alpha.mass)
    supp = alpha.mass > 0

    if init is not None:
        p = init.copy()
        schedule: list[float] = []
    else:
        p = np.zeros(alpha.grid.shape)
        schedule = _lambda_schedule(cfg, eps, geom.diameter)

    iters = 0
    residual = np.inf
    converged = False
    for lam_t in schedule:
        tp = geom.softmin_on_a(p + lam_t * log_a, lam_t)
        p = 0.5 * (p + tp)
        iters += 1
    while iters < cfg.max_iters:
        tp = geom.softmin_on_a(p + lam * log_a, lam)
        residual = float(np.abs((p - tp)[supp]).max())
        p = 0.5 * (p + tp)
        iters += 1
        if residual <= cfg.stop_tol * eps:
            converged = True
            break
    cost = 2.0 * float(np.dot(alpha.mass.ravel(), p.ravel()))
    return cost, p, residual, converged


def _warn_if_stuck(residual: float, cfg: EntropicConfig, eps: float,
                   what: str) -> None:
    if residual > 10.0 * cfg.stop_tol * eps:
        warnings.warn(f"{what} stopped with residual {residual:.3e}, "
                      f"above 10 * stop_tol * epsilon", ConvergenceWarning,
                      stacklevel=3)


def sinkhorn_divergence(alpha: GridMeasure, beta: GridMeasure,
                        cfg: EntropicConfig) -> float:
    """Debiased divergence: cross cost minus half of each self cost.

    Symmetric, nonnegative up to solver residual, and zero when both
    arguments coincide; tiny negative round-off is clamped to zero.
    """
    if alpha.grid == beta.grid and np.array_equal(alpha.mass, beta.mass):
        return 0.0
    eps = effective_epsilon(cfg, alpha.grid)
    cross = ot_eps(alpha, beta, cfg)
    _warn_if_stuck(cross.residual, cfg, eps, "cross transport solve")
    self_a, _, res_a, _ = self_transport_cost(alpha, cfg)
    _warn_if_stuck(res_a, cfg, eps, "first self transport solve")
    self_b, _, res_b, _ = self_transport_cost(beta, cfg)
    _warn_if_stuck(res_b, cfg, eps, "second self transport solve")
    return max(cross.cost - 0.5 * self_a - 0.5 * self_b, 0.0)


def pairwise_distance_matrix(measures: list[GridMeasure] | tuple[GridMeasure, ...],
                             cfg: EntropicConfig) -> np.ndarray:
    """Symmetric matrix of square roots of pairwise debiased divergences.

    Self costs are solved once per measure and shared across the pairs.
    The diagonal is exactly zero by definition of the divergence.
    """
    n = len(measures)
    eps = effective_epsilon(cfg, measures[0].grid) if n else 0.0
    selves = np.empty(n)
    for i, m in enumerate(measures):
        selves[i], _, res, _ = self_transport_cost(m, cfg)
        _warn_if_stuck(res, cfg, eps, f"self transport solve {i}")
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            cross = ot_eps(measures[i], measures[j], cfg)
            _warn_if_stuck(cross.residual, cfg, eps, f"cross solve ({i}, {j})")
            div = max(cross.cost - 0.5 * selves[i] - 0.5 * selves[j], 0.0)
            out[i, j] = out[j, i] = np.sqrt(div)
    return out

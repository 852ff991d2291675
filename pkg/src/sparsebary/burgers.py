"""Viscous Burgers' flow on a 2D grid as a dataset generator.

Each parameter vector (time, center, width, viscosity) maps to the state of
a finite-volume solve of  u_t + div(u^2/2, u^2/2) = visc * laplace(u)
started from a uniform square bump, then renormalized to a probability
measure on the grid.  The scheme is donor-cell upwind for the advective
flux (valid because states stay nonnegative) with an explicit 5-point
Laplacian and zero-flux boundaries, so total mass is conserved up to
round-off and a discrete maximum principle holds under the step-size
restrictions enforced here.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from sparsebary._kernels import burgers_step
from sparsebary.grid import Grid2D, GridMeasure, default_grid, new_normalized, uniform_square
from sparsebary.regression import TrainingSet

__all__ = [
    "BoundaryTouchWarning",
    "BurgersParams",
    "CflViolationError",
    "PARAMETER_BOX",
    "SolverSpec",
    "generate_dataset",
    "sample_parameters",
    "solve_burgers",
]

# sampling ranges for (time, center_row, center_col, width, viscosity)
PARAMETER_BOX: tuple[tuple[float, float], ...] = (
    (0.0, 5.0), (2.0, 6.0), (2.0, 6.0), (1.0, 2.0), (5e-5, 1e-1))

_BOUNDARY_FRACTION = 1e-3  # warn when this much mass reaches the border ring
_MAX_STEPS = 10_000_000


class CflViolationError(RuntimeError):
    """Raised when the adaptive step size underflows or the state breaks."""


class BoundaryTouchWarning(UserWarning):
    """Emitted when noticeable mass reaches the boundary ring of the grid."""


@dataclass(frozen=True)
class BurgersParams:
    """One flow configuration: evolve for ``time`` from a square bump."""

    time: float
    center: tuple[float, float]
    width: float
    viscosity: float

    def __post_init__(self) -> None:
        if not self.time >= 0:
            raise ValueError("time must be nonnegative")
        if len(self.center) != 2:
            raise ValueError("center must have two coordinates")
        if not self.width > 0:
            raise ValueError("width must be positive")
        if not self.viscosity >= 0:
            raise ValueError("viscosity must be nonnegative")
        object.__setattr__(self, "center",
                           (float(self.center[0]), float(self.center[1])))

    def as_vector(self) -> np.ndarray:
        return np.array([self.time, self.center[0], self.center[1],
                         self.width, self.viscosity])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "BurgersParams":
        v = np.asarray(vec, dtype=np.float64).reshape(-1)
        if v.shape[0] != 5:
            raise ValueError("parameter vector must have 5 entries")
        return cls(time=float(v[0]), center=(float(v[1]), float(v[2])),
                   width=float(v[3]), viscosity=float(v[4]))


@dataclass(frozen=True)
class SolverSpec:
    """Grid and explicit-stability margins for the finite-volume solver.

    cfl bounds the advective step ``dt <= cfl * dx / max(u)``;
    diffusion_safety bounds the viscous step ``dt <= safety * dx^2 / visc``.
    Both at most 0.5 keeps the update a convex combination of neighbor
    values, hence nonnegative.
    """

    grid: Grid2D = field(default_factory=default_grid)
    cfl: float = 0.25
    diffusion_safety: float = 0.1

    def __post_init__(self) -> None:
        if not 0 < self.cfl <= 0.5:
            raise ValueError("cfl must lie in (0, 0.5]")
        if not 0 < self.diffusion_safety <= 0.5:
            raise ValueError("diffusion_safety must lie in (0, 0.5]")


def solve_burgers(params: BurgersParams, spec: SolverSpec = SolverSpec(),
                  advection: bool = True, return_diagnostics: bool = False):
    """March the flow to ``params.time`` and return the renormalized state.

    With ``advection=False`` only the viscous term acts (pure heat flow),
    which is useful for validating against closed-form diffusion.  At
    ``time == 0`` the initial square is returned untouched.

    Raises
    ------
    CflViolationError
        If the state stops being finite or the adaptive step underflows.

    Warns
    -----
    BoundaryTouchWarning
        If more than 0.1% of the mass sits on the border ring at the end,
        meaning the zero-flux box visibly confines the flow.
    """
    grid = spec.grid
    start = uniform_square(grid, params.center, params.width)
    dx0 = grid.pixel_size
    peak0 = float(start.mass.max()) / (dx0 * dx0)
    if params.time == 0.0:
        if return_diagnostics:
            return start, {"steps": 0, "mass_drift": 0.0,
                           "min_value": 0.0, "max_value": peak0,
                           "initial_max": peak0,
                           "boundary_fraction": _ring_fraction(start.mass)}
        return start

    dx = grid.pixel_size
    u = start.mass / (dx * dx)
    total0 = float(u.sum())
    visc = params.viscosity
    t_done = 0.0
    steps = 0
    min_seen = float(u.min())
    max_seen = float(u.max())
    while True:
        remaining = params.time - t_done
        if remaining <= 1e-14 * max(1.0, params.time):
            break
        umax = float(u.max())
        if not np.isfinite(umax):
            raise CflViolationError("state became non-finite")
        dt = remaining
        if advection and umax > 0:
            dt = min(dt, spec.cfl * dx / umax)
        if visc > 0:
            dt = min(dt, spec.diffusion_safety * dx * dx / visc)
        if dt <= 1e-14 * max(1.0, params.time):
            raise CflViolationError("adaptive step size underflowed")
        if steps >= _MAX_STEPS:
            raise CflViolationError("step budget exhausted")
        u = burgers_step(u, dt, dx, visc, advection)
        t_done += dt
        steps += 1
        low = float(u.min())
        if low < min_seen:
            min_seen = low
        high = float(u.max())
        if high > max_seen:
            max_seen = high

    drift = abs(float(u.sum()) - total0) / total0
    out = new_normalized(grid, u)
    fraction = _ring_fraction(out.mass)
    if fraction > _BOUNDARY_FRACTION:
        warnings.warn(
            f"{fraction:.3%} of the mass reached the boundary ring; the "
            "zero-flux box is confining this flow", BoundaryTouchWarning,
            stacklevel=2)
    if return_diagnostics:
        return out, {"steps": steps, "mass_drift": drift,
                     "min_value": min_seen, "max_value": max_seen,
                     "initial_max": peak0, "boundary_fraction": fraction}
    return out


def _ring_fraction(mass: np.ndarray) -> float:
    ring = (mass[0, :].sum() + mass[-1, :].sum()
            + mass[1:-1, 0].sum() + mass[1:-1, -1].sum())
    return float(ring)


def sample_parameters(count: int, seed: int) -> list[BurgersParams]:
    """Draw parameter vectors uniformly from :data:`PARAMETER_BOX`."""
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    lows = np.array([lo for lo, _ in PARAMETER_BOX])
    highs = np.array([hi for _, hi in PARAMETER_BOX])
    draws = rng.uniform(lows, highs, size=(count, 5))
    return [BurgersParams.from_vector(row) for row in draws]


def generate_dataset(count: int, seed: int,
                     spec: SolverSpec = SolverSpec()) -> TrainingSet:
    """Sample parameters and solve each flow; distances are left unset."""
    params = sample_parameters(count, seed)
    measures = tuple(solve_burgers(p, spec) for p in params)
    x = np.vstack([p.as_vector() for p in params])
    return TrainingSet(X=x, measures=measures, grid=spec.grid)

"""Probability measures supported on regular 2D pixel grids."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid2D",
    "GridMeasure",
    "NegativeMassError",
    "ZeroMassError",
    "EmptySupportError",
    "new_normalized",
    "uniform_square",
    "default_grid",
]

_MASS_TOL = 1e-12


class NegativeMassError(ValueError):
    """Raised when a mass array contains negative entries."""


class ZeroMassError(ValueError):
    """Raised when a mass array sums to zero and cannot be normalized."""


class EmptySupportError(ValueError):
    """Raised when a requested region covers no pixel center."""


@dataclass(frozen=True)
class Grid2D:
    """Regular grid of square pixels.

    ``height`` and ``width`` count pixels along the first and second array
    axes.  ``origin`` holds the physical coordinates of the center of pixel
    ``(0, 0)``; pixel ``(i, j)`` sits at ``origin + pixel_size * (i, j)``.
    """

    height: int
    width: int
    pixel_size: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError("grid must contain at least one pixel")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")

    def row_coords(self) -> np.ndarray:
        """Physical coordinates of pixel centers along the first axis."""
        return self.origin[0] + self.pixel_size * np.arange(self.height)

    def col_coords(self) -> np.ndarray:
        """Physical coordinates of pixel centers along the second axis."""
        return self.origin[1] + self.pixel_size * np.arange(self.width)

    def points(self) -> np.ndarray:
        """All pixel centers as an ``(height * width, 2)`` array, row-major."""
        rr, cc = np.meshgrid(self.row_coords(), self.col_coords(), indexing="ij")
        return np.stack([rr.ravel(), cc.ravel()], axis=1)

    def diameter(self) -> float:
        """Diagonal extent of the pixel-center bounding box."""
        dr = self.pixel_size * (self.height - 1)
        dc = self.pixel_size * (self.width - 1)
        return float(np.hypot(dr, dc))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class GridMeasure:
    """Probability measure with one nonnegative mass per pixel.

    Construct through :func:`new_normalized` or :func:`uniform_square`;
    direct construction validates but does not rescale.
    """

    grid: Grid2D
    mass: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        mass = np.asarray(self.mass, dtype=np.float64)
        if mass.shape != self.grid.shape:
            raise ValueError(
                f"mass shape {mass.shape} does not match grid {self.grid.shape}")
        if np.any(mass < 0):
            raise NegativeMassError("mass entries must be nonnegative")
        total = float(mass.sum())
        if abs(total - 1.0) > _MASS_TOL:
            raise ValueError(f"mass must sum to 1 within {_MASS_TOL}, got {total!r}")
        object.__setattr__(self, "mass", mass)

    def total_variation(self, other: "GridMeasure") -> float:
        """Total-variation distance, half the L1 difference of mass arrays."""
        if self.grid != other.grid:
            raise ValueError("measures live on different grids")
        return 0.5 * float(np.abs(self.mass - other.mass).sum())


def default_grid() -> Grid2D:
    """64 x 64 grid of pixel centers covering the square [0, 12]^2."""
    px = 12.0 / 64.0
    return Grid2D(height=64, width=64, pixel_size=px, origin=(px / 2, px / 2))


def new_normalized(grid: Grid2D, raw: np.ndarray) -> GridMeasure:
    """Build a :class:`GridMeasure` by rescaling a nonnegative array.

    Raises
    ------
    NegativeMassError
        If ``raw`` has a negative entry.
    ZeroMassError
        If ``raw`` sums to zero.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if arr.shape != grid.shape:
        raise ValueError(f"array shape {arr.shape} does not match grid {grid.shape}")
    if np.any(arr < 0):
        raise NegativeMassError("mass entries must be nonnegative")
    total = float(arr.sum())
    if total <= 0.0:
        raise ZeroMassError("cannot normalize an all-zero mass array")
    return GridMeasure(grid=grid, mass=arr / total)


def uniform_square(grid: Grid2D, center: tuple[float, float],
                   side: float) -> GridMeasure:
    """Uniform measure over the pixel centers covered by an axis-aligned square.

    A pixel center belongs to the square when it lies inside the half-open
    box ``[c - side/2, c + side/2)`` along both axes, so a center that falls
    exactly on the maximal edge is excluded.

    Raises
    ------
    EmptySupportError
        If no pixel center falls inside the square.
    """
    if not side > 0:
        raise ValueError("side must be positive")
    half = 0.5 * side
    rows = grid.row_coords()
    cols = grid.col_coords()
    in_r = (rows >= center[0] - half) & (rows < center[0] + half)
    in_c = (cols >= center[1] - half) & (cols < center[1] + half)
    count = int(in_r.sum()) * int(in_c.sum())
    if count == 0:
        raise EmptySupportError(
            f"square at {center} with side {side} covers no pixel center")
    mass = np.zeros(grid.shape)
    mass[np.ix_(in_r, in_c)] = 1.0 / count
    return GridMeasure(grid=grid, mass=mass)

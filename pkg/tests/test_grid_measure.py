"""Tests for grid geometry and grid-supported measures."""

import numpy as np
import pytest

from sparsebary.grid import (
    EmptySupportError,
    Grid2D,
    GridMeasure,
    NegativeMassError,
    ZeroMassError,
    default_grid,
    new_normalized,
    uniform_square,
)


class TestGrid2D:
    def test_default_grid_geometry(self):
        g = default_grid()
        assert g.shape == (64, 64)
        assert g.pixel_size == pytest.approx(0.1875)
        # pixel centers tile [0, 12]^2: first at px/2, last at 12 - px/2
        rows = g.row_coords()
        assert rows[0] == pytest.approx(0.09375)
        assert rows[-1] == pytest.approx(12.0 - 0.09375)

    def test_points_row_major(self):
        g = Grid2D(height=2, width=3, pixel_size=1.0)
        pts = g.points()
        assert pts.shape == (6, 2)
        np.testing.assert_allclose(pts[1], [0.0, 1.0])
        np.testing.assert_allclose(pts[3], [1.0, 0.0])

    def test_diameter(self):
        g = Grid2D(height=2, width=2, pixel_size=2.0)
        assert g.diameter() == pytest.approx(np.hypot(2.0, 2.0))

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            Grid2D(height=0, width=4, pixel_size=1.0)
        with pytest.raises(ValueError):
            Grid2D(height=4, width=4, pixel_size=0.0)


class TestGridMeasure:
    def test_validates_shape_and_sign(self):
        g = Grid2D(height=2, width=2, pixel_size=1.0)
        with pytest.raises(ValueError):
            GridMeasure(grid=g, mass=np.ones(4) / 4.0)
        bad = np.array([[0.5, 0.6], [-0.1, 0.0]])
        with pytest.raises(NegativeMassError):
            GridMeasure(grid=g, mass=bad)
        with pytest.raises(ValueError):
            GridMeasure(grid=g, mass=np.full((2, 2), 0.3))

    def test_total_variation(self):
        g = Grid2D(height=1, width=2, pixel_size=1.0)
        a = GridMeasure(grid=g, mass=np.array([[1.0, 0.0]]))
        b = GridMeasure(grid=g, mass=np.array([[0.0, 1.0]]))
        assert a.total_variation(b) == pytest.approx(1.0)
        assert a.total_variation(a) == 0.0

    def test_total_variation_requires_same_grid(self):
        a = GridMeasure(grid=Grid2D(1, 2, 1.0), mass=np.array([[1.0, 0.0]]))
        b = GridMeasure(grid=Grid2D(1, 2, 2.0), mass=np.array([[1.0, 0.0]]))
        with pytest.raises(ValueError):
            a.total_variation(b)


class TestNewNormalized:
    def test_rescales(self):
        g = Grid2D(height=2, width=2, pixel_size=1.0)
        m = new_normalized(g, np.full((2, 2), 3.0))
        np.testing.assert_allclose(m.mass, 0.25)

    def test_rejects_zero_and_negative(self):
        g = Grid2D(height=2, width=2, pixel_size=1.0)
        with pytest.raises(ZeroMassError):
            new_normalized(g, np.zeros((2, 2)))
        with pytest.raises(NegativeMassError):
            new_normalized(g, np.array([[1.0, -1.0], [1.0, 1.0]]))


class TestUniformSquare:
    def test_covers_expected_pixels(self):
        g = default_grid()
        m = uniform_square(g, (4.0, 4.0), 2.0)
        covered = int((m.mass > 0).sum())
        # 2.0 / 0.1875 = 10.67 pixel pitches; the half-open box admits
        # either 10 or 11 centers per axis depending on alignment
        rows = np.unique(np.nonzero(m.mass)[0])
        assert covered == rows.size ** 2
        assert rows.size in (10, 11)
        np.testing.assert_allclose(m.mass.sum(), 1.0, atol=1e-12)
        assert np.unique(m.mass[m.mass > 0]).size == 1

    def test_half_open_excludes_max_edge(self):
        g = Grid2D(height=4, width=4, pixel_size=1.0, origin=(0.0, 0.0))
        # square [0.5, 1.5) x [0.5, 1.5): center (1,1) only
        m = uniform_square(g, (1.0, 1.0), 1.0)
        assert m.mass[1, 1] == 1.0

    def test_empty_square_raises(self):
        g = Grid2D(height=4, width=4, pixel_size=1.0, origin=(0.0, 0.0))
        with pytest.raises(EmptySupportError):
            uniform_square(g, (0.5, 0.5), 0.5)

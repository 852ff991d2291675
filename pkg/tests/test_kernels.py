"""Tests for the grid log-sum-exp and finite-volume step kernels."""

import numpy as np
import pytest
from scipy.special import logsumexp

from sparsebary._kernels import (
    BACKEND,
    burgers_step_numba,
    burgers_step_numpy,
    lse_grid_numba,
    lse_grid_numpy,
)

needs_numba = pytest.mark.skipif(lse_grid_numba is None,
                                 reason="numba backend unavailable")


def make_gaps(coords_a, coords_b):
    return np.ascontiguousarray((coords_a[:, None] - coords_b[None, :]) ** 2)


def make_gibbs(gap2, lam):
    # mirror the production table: exact zeros below the exp floor
    arg = -gap2 / lam
    out = np.zeros_like(gap2)
    np.exp(arg, out=out, where=arg > -745.0)
    return out


def oracle_lse(pot, g2r, g2c, lam):
    """Dense reference: no separable trick, no shortcuts."""
    h2, w2 = g2r.shape[0], g2c.shape[0]
    out = np.empty((h2, w2))
    for i in range(h2):
        for j in range(w2):
            vals = (pot - g2r[i][:, None] - g2c[j][None, :]) / lam
            out[i, j] = lam * logsumexp(vals.ravel())
    return out


def run_case(pot, ra, rb, ca, cb, lam, fn):
    g2r = make_gaps(ra, rb)
    g2c = make_gaps(ca, cb)
    got = fn(pot, g2r, g2c, make_gibbs(g2r, lam), make_gibbs(g2c, lam), lam)
    want = oracle_lse(pot, g2r, g2c, lam)
    return got, want


class TestLseGrid:
    def setup_method(self):
        self.rng = np.random.default_rng(42)
        self.ra = np.arange(6) * 1.0
        self.rb = np.arange(5) * 1.0 + 0.25
        self.ca = np.arange(4) * 1.0
        self.cb = np.arange(7) * 1.0 - 0.5

    def cases(self):
        pot = self.rng.normal(size=(5, 7)) * 3.0
        yield pot, 2.0
        yield pot * 40.0, 0.07
        sparse = np.full((5, 7), -np.inf)
        sparse[1, 2] = 0.3
        sparse[4, 5] = -1.2
        yield sparse, 0.5

    @pytest.mark.parametrize("fn", [lse_grid_numpy,
                                    pytest.param(lse_grid_numba,
                                                 marks=needs_numba)])
    def test_matches_dense_oracle(self, fn):
        for pot, lam in self.cases():
            got, want = run_case(pot, self.ra, self.rb, self.ca, self.cb,
                                 lam, fn)
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("fn", [lse_grid_numpy,
                                    pytest.param(lse_grid_numba,
                                                 marks=needs_numba)])
    def test_all_empty_source_gives_neg_inf(self, fn):
        pot = np.full((5, 7), -np.inf)
        got, _ = run_case(pot, self.ra, self.rb, self.ca, self.cb, 1.0, fn)
        assert np.all(np.isneginf(got))

    @pytest.mark.parametrize("fn", [lse_grid_numpy,
                                    pytest.param(lse_grid_numba,
                                                 marks=needs_numba)])
    def test_underflowing_tables_rescued(self, fn):
        # grids far apart at small temperature: every Gibbs entry is an
        # exact zero and the slow path must reconstruct the result
        pot = self.rng.normal(size=(5, 7))
        rb = self.rb + 30.0
        cb = self.cb - 25.0
        lam = 0.02
        got, want = run_case(pot, self.ra, rb, self.ca, cb, lam, fn)
        assert np.all(np.isfinite(got))
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    @needs_numba
    def test_backends_agree_bitwise_tight(self):
        for pot, lam in self.cases():
            a, _ = run_case(pot, self.ra, self.rb, self.ca, self.cb, lam,
                            lse_grid_numpy)
            b, _ = run_case(pot, self.ra, self.rb, self.ca, self.cb, lam,
                            lse_grid_numba)
            np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)


def reference_step(u, dt, dx, visc, advect):
    """Literal transcription of the finite-volume update for one step."""
    new = u.astype(np.float64).copy()
    h, w = u.shape
    if advect:
        r = dt / dx
        for i in range(h - 1):
            for j in range(w):
                f = 0.5 * u[i, j] ** 2
                new[i, j] -= r * f
                new[i + 1, j] += r * f
        for i in range(h):
            for j in range(w - 1):
                f = 0.5 * u[i, j] ** 2
                new[i, j] -= r * f
                new[i, j + 1] += r * f
    if visc > 0.0:
        k = dt * visc / (dx * dx)
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < h and 0 <= jj < w:
                        acc += u[ii, jj] - u[i, j]
                new[i, j] += k * acc
    return new


class TestBurgersStep:
    def setup_method(self):
        rng = np.random.default_rng(42)
        self.u = rng.uniform(0.0, 2.0, size=(9, 8))
        self.u[0, :] = 0.0
        self.u[:, -1] = 0.0

    @pytest.mark.parametrize("fn", [burgers_step_numpy,
                                    pytest.param(burgers_step_numba,
                                                 marks=needs_numba)])
    @pytest.mark.parametrize("advect,visc", [(True, 0.0), (False, 0.05),
                                             (True, 0.05)])
    def test_matches_reference(self, fn, advect, visc):
        got = fn(self.u, 0.01, 0.25, visc, advect)
        want = reference_step(self.u, 0.01, 0.25, visc, advect)
        np.testing.assert_allclose(got, want, rtol=1e-14, atol=1e-15)

    @pytest.mark.parametrize("fn", [burgers_step_numpy,
                                    pytest.param(burgers_step_numba,
                                                 marks=needs_numba)])
    def test_conserves_total_mass(self, fn):
        out = fn(self.u, 0.005, 0.25, 0.02, True)
        assert out.sum() == pytest.approx(self.u.sum(), abs=1e-12)

    def test_zero_viscosity_skips_diffusion(self):
        out = burgers_step_numpy(self.u, 0.01, 0.25, 0.0, False)
        np.testing.assert_array_equal(out, self.u)

    def test_backend_constant_valid(self):
        assert BACKEND in ("numpy", "numba")

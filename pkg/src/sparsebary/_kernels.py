"""Hot numerical kernels with a compiled fast path and a pure-numpy fallback.

Two kernels live here because they dominate end-to-end runtime:

``lse_grid``
    Separable soft-minimum transform on a 2D grid with squared Euclidean
    ground cost.  Every Sinkhorn-type iteration in the package reduces to
    calls of this primitive, so it is worth both a compiled implementation
    and a vectorized one.

``burgers_step``
    One explicit finite-volume step of the viscous conservation law used
    by the synthetic data generator.

Backend selection happens once, at import time:

* ``SPARSEBARY_BACKEND=numpy`` forces the pure-numpy fallback.
* ``SPARSEBARY_BACKEND=numba`` requires the compiled path and raises if
  numba cannot be imported.
* unset: use numba when importable, numpy otherwise.

Both implementations follow the same algorithm and agree to floating-point
round-off; ``tests/test_kernels.py`` pins that down and
``benchmarks/bench_kernels.py`` compares their speed.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "BACKEND",
    "lse_grid",
    "burgers_step",
    "lse_grid_numpy",
    "burgers_step_numpy",
    "lse_grid_numba",
    "burgers_step_numba",
]

# Terms whose exponent falls below this never influence a double sum whose
# leading term is O(1); skipping them avoids the libm slow path.
_EXP_FLOOR = -745.0
# Relative cutoff used in the rescue scan: exp(-46) ~ 1e-20 of the lead term.
_RESCUE_CUT = -46.0
# Below this the fast-path sum may consist of denormal dust, so recompute.
_SUM_FLOOR = 1e-290


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------


def _half_pass_numpy(pot: np.ndarray, gap2: np.ndarray, gibbs: np.ndarray,
                     lam: float) -> np.ndarray:
    """One 1D sweep of the separable soft LSE.

    Computes ``out[r, q] = lam * logsumexp_j((pot[r, j] - gap2[q, j]) / lam)``
    for every row ``r`` of ``pot`` and every target slot ``q``, where
    ``gibbs = exp(-gap2 / lam)``.  Entries of ``pot`` may be ``-inf``.
    """
    m = pot.max(axis=1)
    finite = m > -np.inf
    args = np.where(finite[:, None], (pot - np.where(finite, m, 0.0)[:, None]) / lam,
                    -np.inf)
    scal = np.zeros_like(pot)
    np.exp(args, out=scal, where=args > _EXP_FLOOR)
    sums = scal @ gibbs.T
    with np.errstate(divide="ignore"):
        out = m[:, None] + lam * np.log(sums)
    out[~finite, :] = -np.inf

    bad = finite[:, None] & (sums < _SUM_FLOOR)
    if np.any(bad):
        rows, cols = np.nonzero(bad)
        vals = pot[rows, :] - gap2[cols, :]
        mx = vals.max(axis=1)
        rel = (vals - mx[:, None]) / lam
        scal2 = np.zeros_like(rel)
        np.exp(rel, out=scal2, where=rel > _RESCUE_CUT)
        out[rows, cols] = mx + lam * np.log(scal2.sum(axis=1))
    return out


def lse_grid_numpy(pot: np.ndarray, gap2_rows: np.ndarray, gap2_cols: np.ndarray,
                   gibbs_rows: np.ndarray, gibbs_cols: np.ndarray,
                   lam: float) -> np.ndarray:
    """Scaled log-sum-exp of ``pot`` against a separable squared-distance cost.

    Parameters
    ----------
    pot : (H1, W1) ndarray
        Source field in potential units; ``-inf`` marks empty pixels.
    gap2_rows : (H2, H1) ndarray
        Squared gaps between target and source row coordinates.
    gap2_cols : (W2, W1) ndarray
        Squared gaps between target and source column coordinates.
    gibbs_rows, gibbs_cols : ndarray
        Precomputed ``exp(-gap2 / lam)`` tables for the same gaps.
    lam : float
        Positive temperature, homogeneous to a squared length.

    Returns
    -------
    (H2, W2) ndarray
        ``out[i2, j2] = lam * logsumexp_{i1, j1}((pot[i1, j1]
        - gap2_rows[i2, i1] - gap2_cols[j2, j1]) / lam)``.
    """
    mid = _half_pass_numpy(pot, gap2_cols, gibbs_cols, lam)
    out_t = _half_pass_numpy(np.ascontiguousarray(mid.T), gap2_rows, gibbs_rows, lam)
    return np.ascontiguousarray(out_t.T)


def burgers_step_numpy(u: np.ndarray, dt: float, dx: float, visc: float,
                       advect: bool) -> np.ndarray:
    """One explicit step of ``u_t + (u^2/2)_x + (u^2/2)_y = visc * lap(u)``.

    Upwind (Godunov for nonnegative states) fluxes, zero-flux boundaries,
    central five-point diffusion with reflecting ghosts.
    """
    new = u.copy()
    if advect:
        # donor-cell fluxes across interior faces; outer faces carry none
        flux_r = 0.5 * u[:-1, :] ** 2
        flux_c = 0.5 * u[:, :-1] ** 2
        r = dt / dx
        new[:-1, :] -= r * flux_r
        new[1:, :] += r * flux_r
        new[:, :-1] -= r * flux_c
        new[:, 1:] += r * flux_c
    if visc > 0.0:
        lap = np.zeros_like(u)
        lap[1:, :] += u[:-1, :] - u[1:, :]
        lap[:-1, :] += u[1:, :] - u[:-1, :]
        lap[:, 1:] += u[:, :-1] - u[:, 1:]
        lap[:, :-1] += u[:, 1:] - u[:, :-1]
        new += (dt * visc / (dx * dx)) * lap
    return new


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

try:  # pragma: no cover - exercised indirectly through backend selection
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False


def _select_backend() -> str:
    req = os.environ.get("SPARSEBARY_BACKEND", "").strip().lower()
    if req == "numpy":
        return "numpy"
    if req == "numba":
        if not _HAVE_NUMBA:
            raise ImportError("SPARSEBARY_BACKEND=numba but numba is not importable")
        return "numba"
    if req not in ("", "auto"):
        raise ValueError(f"unknown SPARSEBARY_BACKEND value: {req!r}")
    return "numba" if _HAVE_NUMBA else "numpy"


BACKEND = _select_backend()


if _HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _half_pass_nb(pot, gap2, gibbs, lam):  # pragma: no cover - compiled
        nrow, nsrc = pot.shape
        ntgt = gap2.shape[0]
        scal = np.zeros((nrow, nsrc))
        mrow = np.empty(nrow)
        for r in range(nrow):
            m = -np.inf
            for j in range(nsrc):
                if pot[r, j] > m:
                    m = pot[r, j]
            mrow[r] = m
            if m > -np.inf:
                for j in range(nsrc):
                    a = (pot[r, j] - m) / lam
                    if a > _EXP_FLOOR:
                        scal[r, j] = np.exp(a)
        sums = np.dot(scal, gibbs.T)
        out = np.empty((nrow, ntgt))
        for r in range(nrow):
            if mrow[r] == -np.inf:
                for q in range(ntgt):
                    out[r, q] = -np.inf
                continue
            for q in range(ntgt):
                s = sums[r, q]
                if s >= _SUM_FLOOR:
                    out[r, q] = mrow[r] + lam * np.log(s)
                else:
                    mx = -np.inf
                    for j in range(nsrc):
                        v = pot[r, j] - gap2[q, j]
                        if v > mx:
                            mx = v
                    if mx == -np.inf:
                        out[r, q] = -np.inf
                        continue
                    acc = 0.0
                    for j in range(nsrc):
                        a = (pot[r, j] - gap2[q, j] - mx) / lam
                        if a > _RESCUE_CUT:
                            acc += np.exp(a)
                    out[r, q] = mx + lam * np.log(acc)
        return out

    @numba.njit(cache=True, nogil=True)
    def _lse_grid_nb(pot, gap2_rows, gap2_cols, gibbs_rows, gibbs_cols, lam):
        mid = _half_pass_nb(pot, gap2_cols, gibbs_cols, lam)
        out_t = _half_pass_nb(np.ascontiguousarray(mid.T), gap2_rows,
                              gibbs_rows, lam)
        return np.ascontiguousarray(out_t.T)

    @numba.njit(cache=True, nogil=True)
    def _burgers_step_nb(u, dt, dx, visc, advect):  # pragma: no cover - compiled
        nr, nc = u.shape
        new = u.copy()
        r = dt / dx
        if advect:
            for i in range(nr - 1):
                for j in range(nc):
                    f = 0.5 * u[i, j] * u[i, j]
                    new[i, j] -= r * f
                    new[i + 1, j] += r * f
            for i in range(nr):
                for j in range(nc - 1):
                    f = 0.5 * u[i, j] * u[i, j]
                    new[i, j] -= r * f
                    new[i, j + 1] += r * f
        if visc > 0.0:
            c = dt * visc / (dx * dx)
            for i in range(nr):
                for j in range(nc):
                    acc = 0.0
                    if i > 0:
                        acc += u[i - 1, j] - u[i, j]
                    if i < nr - 1:
                        acc += u[i + 1, j] - u[i, j]
                    if j > 0:
                        acc += u[i, j - 1] - u[i, j]
                    if j < nc - 1:
                        acc += u[i, j + 1] - u[i, j]
                    new[i, j] += c * acc
        return new

    def lse_grid_numba(pot, gap2_rows, gap2_cols, gibbs_rows, gibbs_cols, lam):
        """Compiled twin of :func:`lse_grid_numpy`."""
        return _lse_grid_nb(pot, gap2_rows, gap2_cols, gibbs_rows, gibbs_cols,
                            float(lam))

    def burgers_step_numba(u, dt, dx, visc, advect):
        """Compiled twin of :func:`burgers_step_numpy`."""
        return _burgers_step_nb(u, float(dt), float(dx), float(visc),
                                bool(advect))

else:  # pragma: no cover
    lse_grid_numba = None
    burgers_step_numba = None


if BACKEND == "numba":
    lse_grid = lse_grid_numba
    burgers_step = burgers_step_numba
else:
    lse_grid = lse_grid_numpy
    burgers_step = burgers_step_numpy

"""Local Mahalanobis metrics fitted to measure-space distances.

Each training point gets its own positive semidefinite matrix ``M_i`` such
that the quadratic form ``(x - x_i)^T (M_i + eta I) (x - x_i)`` approximates
the squared measure-space distance between the snapshots at ``x`` and
``x_i``.  Fitting is a projected-gradient least squares over the PSD cone;
the ridge ``eta I`` keeps every stored matrix positive definite so nearest
neighbors are always well defined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DegenerateDesignError",
    "LocalMetric",
    "MetricField",
    "learn_local_metrics",
    "mahalanobis_sq",
    "metric_knn",
]

_POWER_ITERS = 20  # power-method length for the Lipschitz estimate
_JACOBI_SWEEPS = 60
_JACOBI_TOL = 1e-12


class DegenerateDesignError(ValueError):
    """Raised when a point's neighbors give no usable least-squares system."""


@dataclass(frozen=True)
class LocalMetric:
    """One point's fitted quadratic form, ridge included."""

    matrix: np.ndarray
    eta: float


@dataclass(frozen=True)
class MetricField:
    """Fitted local metrics for every training point.

    ``matrices[i]`` already includes the ridge ``eta * I``.
    """

    points: np.ndarray
    matrices: np.ndarray
    eta: float

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        mats = np.asarray(self.matrices, dtype=np.float64)
        if pts.ndim != 2:
            raise ValueError("points must be a 2D array")
        n, d = pts.shape
        if mats.shape != (n, d, d):
            raise ValueError("matrices must have shape (n_points, d, d)")
        if not self.eta >= 0:
            raise ValueError("eta must be nonnegative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "matrices", mats)

    def local_metric(self, index: int) -> LocalMetric:
        return LocalMetric(matrix=self.matrices[index], eta=self.eta)


def _jacobi_eigh(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with ``matrix = V diag(w) V^T``.
    Sweeps stop once the off-diagonal Frobenius mass falls below 1e-12
    relative to the whole matrix.
    """
    a = np.array(matrix, dtype=np.float64, copy=True)
    d = a.shape[0]
    vecs = np.eye(d)
    for _ in range(_JACOBI_SWEEPS):
        # roundoff can push the subtraction slightly negative; clamp
        off = np.sqrt(max(float(np.sum(a * a) - np.sum(np.diag(a) ** 2)), 0.0))
        if off <= _JACOBI_TOL * max(1.0, float(np.sqrt(np.sum(a * a)))):
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                sign = 1.0 if theta >= 0 else -1.0
                if abs(theta) > 1e150:  # theta^2 would overflow
                    t = 0.5 / theta
                else:
                    t = sign / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vec_p = vecs[:, p].copy()
                vec_q = vecs[:, q].copy()
                vecs[:, p] = c * vec_p - s * vec_q
                vecs[:, q] = s * vec_p + c * vec_q
    return np.diag(a).copy(), vecs


def _project_psd(matrix: np.ndarray) -> np.ndarray:
    sym = 0.5 * (matrix + matrix.T)
    try:
        # a positive-definite matrix projects to itself; Cholesky is a far
        # cheaper certificate than the eigendecomposition it skips
        np.linalg.cholesky(sym)
        return sym
    except np.linalg.LinAlgError:
        pass
    vals, vecs = _jacobi_eigh(sym)
    clipped = np.maximum(vals, 0.0)
    out = (vecs * clipped) @ vecs.T
    return 0.5 * (out + out.T)


def _fit_one(deltas: np.ndarray, targets: np.ndarray, max_iters: int,
             ) -> np.ndarray:
    """Least squares over PSD matrices: sum_j (<d_j d_j^T, M> - targets_j)^2.

    Projected gradient with a fixed ``1/L`` step; the design matrix holds
    the flattened rank-one terms so each iteration is two matrix-vector
    products plus one PSD projection.
    """
    m, d = deltas.shape
    # row j of the design is vec(d_j d_j^T)
    design = (deltas[:, :, None] * deltas[:, None, :]).reshape(m, d * d)

    # power iteration for the gradient's Lipschitz constant 2 ||Phi^T Phi||
    v = (np.eye(d) / np.sqrt(d)).ravel()
    lip = 0.0
    for _ in range(_POWER_ITERS):
        hv = 2.0 * (design.T @ (design @ v))
        lip = float(np.linalg.norm(hv))
        if lip <= 0.0:
            break
        v = hv / lip
    if not lip > 0.0:
        raise DegenerateDesignError("neighbor geometry spans no direction")

    # 1.1 margin absorbs power-iteration underestimation, keeping every
    # step inside the monotone-descent range for least squares
    step = 1.0 / (1.1 * lip)
    vec = np.zeros(d * d)
    for _ in range(max_iters):
        grad = 2.0 * (design.T @ (design @ vec - targets))
        nxt = _project_psd((vec - step * grad).reshape(d, d)).ravel()
        if np.max(np.abs(nxt - vec)) <= 1e-15 * max(1.0, float(np.max(np.abs(nxt)))):
            vec = nxt
            break
        vec = nxt
    return vec.reshape(d, d)


def learn_local_metrics(points: np.ndarray, distances: np.ndarray,
                        eta: float | None = None,
                        max_iters: int = 12000) -> MetricField:
    """Fit one ridged PSD quadratic form per training point.

    Parameters
    ----------
    points : ndarray of shape (n_points, dim)
        Parameter-space locations.
    distances : ndarray of shape (n_points, n_points)
        Symmetric nonnegative measure-space distances.
    eta : float, optional
        Ridge weight.  Defaults to 1e-3 times the mean squared pairwise
        spread of ``points``.
    max_iters : int
        Projected-gradient iterations per point.  Zero iterations leave
        every matrix at exactly ``eta * I``.
    """
    pts = np.asarray(points, dtype=np.float64)
    dist = np.asarray(distances, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("points must be (n_points, dim) with at least 2 rows")
    n, d = pts.shape
    if dist.shape != (n, n):
        raise ValueError("distances must be square over the points")
    if np.max(np.abs(dist - dist.T)) > 1e-9 * max(1.0, float(np.max(np.abs(dist)))):
        raise ValueError("distances must be symmetric")
    if np.min(dist) < 0:
        raise ValueError("distances must be nonnegative")
    if max_iters < 0:
        raise ValueError("max_iters must be nonnegative")
    if eta is None:
        gaps = pts[:, None, :] - pts[None, :, :]
        eta = 1e-3 * float(np.mean(np.sum(gaps * gaps, axis=-1)))
    if eta < 0:
        raise ValueError("eta must be nonnegative")

    matrices = np.empty((n, d, d))
    ridge = eta * np.eye(d)
    for i in range(n):
        mask = np.arange(n) != i
        deltas = pts[mask] - pts[i]
        if not np.any(np.sum(deltas * deltas, axis=1) > 0):
            raise DegenerateDesignError(
                f"all neighbors of point {i} coincide with it")
        targets = dist[i, mask] ** 2 - eta * np.sum(deltas * deltas, axis=1)
        if max_iters == 0:
            matrices[i] = ridge
        else:
            matrices[i] = _fit_one(deltas, targets, max_iters) + ridge
    return MetricField(points=pts, matrices=matrices, eta=float(eta))


def mahalanobis_sq(metric: LocalMetric, x: np.ndarray,
                   x_ref: np.ndarray) -> float:
    """Quadratic form ``(x - x_ref)^T M (x - x_ref)`` of one local metric."""
    delta = (np.asarray(x, dtype=np.float64).reshape(-1)
             - np.asarray(x_ref, dtype=np.float64).reshape(-1))
    return float(delta @ metric.matrix @ delta)


def _field_sq(x: np.ndarray, field: MetricField) -> np.ndarray:
    """Squared local-metric distances from ``x`` to every field point."""
    query = np.asarray(x, dtype=np.float64).reshape(-1)
    if query.shape[0] != field.points.shape[1]:
        raise ValueError("query dimension does not match the field")
    diffs = field.points - query[None, :]
    return np.einsum("ni,nij,nj->n", diffs, field.matrices, diffs)


def metric_knn(x: np.ndarray, field: MetricField, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest field points under their local metrics.

    Ties break toward the lower index.
    """
    n = field.points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    vals = _field_sq(x, field)
    return np.argsort(vals, kind="stable")[:k]

"""Projections onto the probability simplex and its sparse counterpart.

The sparse target set is the union, over all index subsets of size at most
``n``, of the faces of the probability simplex supported on that subset.
Euclidean projection onto it keeps the ``n`` largest entries (ties broken
toward lower indices) and projects that subvector onto the dense simplex;
a plain L1 constraint cannot express this, which is why the greedy
select-then-project step exists as its own operation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["SUPPORT_THRESHOLD", "SparseWeights", "project_simplex", "gssp"]

# Entries at or below this after projection are treated as exact zeros.
SUPPORT_THRESHOLD = 1e-14


@dataclass(frozen=True)
class SparseWeights:
    """Dense weight vector together with its support and sparsity budget.

    Invariants: the dense vector is nonnegative, sums to one within 1e-10,
    its nonzeros sit exactly at the support indices, and the support has at
    most ``n_max`` elements.
    """

    dense: np.ndarray = field(repr=False)
    support: np.ndarray = field(repr=False)
    n_max: int

    def __post_init__(self) -> None:
        dense = np.asarray(self.dense, dtype=np.float64)
        support = np.asarray(self.support, dtype=np.int64)
        if dense.ndim != 1:
            raise ValueError("dense must be a vector")
        if np.any(dense < 0):
            raise ValueError("weights must be nonnegative")
        if abs(float(dense.sum()) - 1.0) > 1e-10:
            raise ValueError("weights must sum to 1 within 1e-10")
        nz = np.flatnonzero(dense)
        if not np.array_equal(np.sort(support), nz):
            raise ValueError("support must list exactly the nonzero indices")
        if support.size > self.n_max:
            raise ValueError(f"support size {support.size} exceeds n_max {self.n_max}")
        object.__setattr__(self, "dense", dense)
        object.__setattr__(self, "support", np.sort(support))

    @property
    def size(self) -> int:
        return int(self.dense.size)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of a vector onto the probability simplex.

    Sort-and-threshold scheme: with ``u`` the entries in decreasing order,
    find the largest ``r`` with ``u_r + (1 - sum(u_1..u_r)) / r > 0`` and
    shift every entry by the corresponding threshold, clamping at zero.
    Total on all finite inputs.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("input must be a nonempty vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, v.size + 1)
    cond = u + (1.0 - css) / idx > 0
    rho = int(np.nonzero(cond)[0][-1]) + 1
    tau = (1.0 - css[rho - 1]) / rho
    return np.maximum(v + tau, 0.0)


def gssp(v: np.ndarray, n: int) -> SparseWeights:
    """Greedy projection onto the n-sparse probability simplex.

    Selects the ``n`` largest entries of ``v`` (ties resolved toward the
    lowest index), projects that subvector onto the dense simplex, and
    scatters the result back.  Entries at or below ``SUPPORT_THRESHOLD``
    are snapped to exact zeros and dropped from the support.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("input must be a nonempty vector")
    if not 1 <= n <= v.size:
        raise ValueError(f"sparsity level {n} out of range for size {v.size}")
    order = np.argsort(-v, kind="stable")
    chosen = np.sort(order[:n])
    sub = project_simplex(v[chosen])
    keep = sub > SUPPORT_THRESHOLD
    sub = np.where(keep, sub, 0.0)
    sub = sub / sub.sum()
    dense = np.zeros_like(v)
    dense[chosen] = sub
    return SparseWeights(dense=dense, support=chosen[keep], n_max=n)

"""Measure-valued regressors over a training set of grid snapshots.

Every predictor maps a parameter vector to a :class:`Prediction` holding
simplex weights over the training snapshots together with the barycenter
those weights generate.  Unless noted otherwise the returned measure is a
cold, deterministic barycenter solve at the returned weights, so rerunning
the solve reproduces it bit for bit.

Predictors
----------
* ``nn_predict``      - copy the nearest snapshot (local metric or Euclidean);
* ``kernel_predict``  - Nadaraya-Watson (Gaussian) or inverse-distance
  weights over the nearest parameters, then one barycenter;
* ``as_predict``      - fit sparse weights so barycenter-to-candidate
  divergences match the distances predicted by local metrics;
* ``as_bench_predict``- same fit, but matching true divergences measured
  from an oracle target measure (a benchmark, not a deployable regressor);
* ``bga_predict``     - interpolate precomputed projection weights from
  :func:`bga_train`, which greedily picks an atom subset by worst-case
  projection loss;
* ``best_benchmark``  - direct sparse-weight optimization against the
  oracle target, bounding what any regressor could achieve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sparsebary.barycenter import (
    BarycenterProblem,
    LossEngine,
    _BaryState,
    _moved_far,
    _solve_barycenter,
    _warm_budget,
    sinkhorn_barycenter,
)
from sparsebary.descent import DescentConfig, gas
from sparsebary.grid import Grid2D, GridMeasure, new_normalized
from sparsebary.metric import MetricField, _field_sq, metric_knn
from sparsebary.sinkhorn import (
    EntropicConfig,
    _PairGeometry,
    effective_epsilon,
    ot_eps,
    self_transport_cost,
)
from sparsebary.sparse_simplex import (
    SUPPORT_THRESHOLD,
    SparseWeights,
    gssp,
    project_simplex,
)

__all__ = [
    "BgaModel",
    "Prediction",
    "TrainingSet",
    "as_bench_predict",
    "as_predict",
    "best_benchmark",
    "bga_predict",
    "bga_train",
    "kernel_predict",
    "kernel_weights",
    "nn_predict",
]

_WINDOW = 5  # same loss-plateau window as the descent solvers
_IDW_POWER = 1.0
_IDW_ETA = 1e-8
_NW_SIGMA = 0.5


@dataclass
class TrainingSet:
    """Parameter vectors paired with their measure snapshots.

    ``distances`` optionally holds the symmetric matrix of measure-space
    distances (square roots of divergences) between snapshots.  Self
    transport costs are cached per entropic configuration because every
    divergence against a fixed snapshot reuses them.
    """

    X: np.ndarray
    measures: tuple[GridMeasure, ...]
    grid: Grid2D
    distances: np.ndarray | None = None
    _self_costs: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=np.float64)
        self.measures = tuple(self.measures)
        if self.X.ndim != 2 or self.X.shape[0] != len(self.measures):
            raise ValueError("X must be (n_train, dim) matching the measures")
        if len(self.measures) == 0:
            raise ValueError("a training set needs at least one snapshot")
        for m in self.measures:
            if m.grid.shape != self.grid.shape or \
                    abs(m.grid.pixel_size - self.grid.pixel_size) > 1e-12:
                raise ValueError("all snapshots must live on the common grid")
        if self.distances is not None:
            d = np.asarray(self.distances, dtype=np.float64)
            n = len(self.measures)
            if d.shape != (n, n):
                raise ValueError("distances must be square over the snapshots")
            self.distances = d

    def __len__(self) -> int:
        return len(self.measures)

    def self_cost(self, index: int, cfg: EntropicConfig) -> float:
        """Cached self transport cost of snapshot ``index`` under ``cfg``."""
        key = (index, cfg)
        if key not in self._self_costs:
            cost, _, _, _ = self_transport_cost(self.measures[index], cfg)
            self._self_costs[key] = cost
        return self._self_costs[key]


@dataclass(frozen=True)
class Prediction:
    """Weights over training snapshots plus the barycenter they induce."""

    weights: SparseWeights
    measure: GridMeasure
    method_tag: str
    diagnostics: dict


def kernel_weights(x: np.ndarray, ts: TrainingSet, n: int,
                   kind: str = "gaussian", sigma: float = _NW_SIGMA,
                   power: float = _IDW_POWER,
                   eta: float = _IDW_ETA) -> SparseWeights:
    """Normalized kernel weights on the ``n`` nearest parameters.

    ``kind='gaussian'`` uses exp(-d^2 / (2 sigma^2)); ``kind='idw'`` uses
    (eta + d)^(-power).  Distances are Euclidean in parameter space and
    ties resolve toward the lower index.  Weights falling below the sparse
    support threshold are dropped and the rest renormalized.
    """
    if kind not in ("gaussian", "idw"):
        raise ValueError(f"unknown kernel kind {kind!r}")
    if not (sigma > 0 and power > 0 and eta > 0):
        raise ValueError("sigma, power and eta must be positive")
    n_train = len(ts)
    if not 1 <= n <= n_train:
        raise ValueError(f"n must lie in [1, {n_train}]")
    query = np.asarray(x, dtype=np.float64).reshape(-1)
    dists = np.linalg.norm(ts.X - query[None, :], axis=1)
    order = np.argsort(dists, kind="stable")[:n]
    d = dists[order]
    if kind == "gaussian":
        # shift by the nearest distance so the largest kernel value is 1
        arg = (d * d - d[0] * d[0]) / (2.0 * sigma * sigma)
        vals = np.zeros_like(arg)
        np.exp(-arg, out=vals, where=arg < 745.0)
    else:
        vals = (eta + d) ** (-power)
    w = vals / vals.sum()
    keep = w > SUPPORT_THRESHOLD
    w = w[keep] / w[keep].sum()
    dense = np.zeros(n_train)
    dense[order[keep]] = w
    return SparseWeights(dense=dense, support=np.sort(order[keep]), n_max=n)


def _snapshot_prediction(index: int, ts: TrainingSet, n_max: int, tag: str,
                         extra: dict) -> Prediction:
    dense = np.zeros(len(ts))
    dense[index] = 1.0
    sw = SparseWeights(dense=dense, support=np.array([index]), n_max=n_max)
    diag = {"exact_hit": True, "neighbor": int(index)}
    diag.update(extra)
    return Prediction(weights=sw, measure=ts.measures[index],
                      method_tag=tag, diagnostics=diag)


def nn_predict(x: np.ndarray, ts: TrainingSet,
               field: MetricField | None = None) -> Prediction:
    """Copy the nearest snapshot; the returned measure is that snapshot.

    With a metric field the neighbor is chosen under the local metrics,
    otherwise by Euclidean parameter distance.  This predictor returns the
    stored snapshot itself rather than re-solving a one-atom barycenter.
    """
    if field is not None:
        idx = int(metric_knn(x, field, 1)[0])
        dist_sq = float(_field_sq(x, field)[idx])
    else:
        query = np.asarray(x, dtype=np.float64).reshape(-1)
        dists = np.linalg.norm(ts.X - query[None, :], axis=1)
        idx = int(np.argmin(dists))
        dist_sq = float(dists[idx] ** 2)
    return _snapshot_prediction(idx, ts, 1, "nn", {"distance_sq": dist_sq})


def kernel_predict(x: np.ndarray, ts: TrainingSet, n: int,
                   kind: str = "gaussian",
                   entropic: EntropicConfig = EntropicConfig(),
                   fixed_point_iters: int = 100, **kernel_kw) -> Prediction:
    """Barycenter at kernel weights; tags are ``nw`` (gaussian) or ``idw``."""
    sw = kernel_weights(x, ts, n, kind=kind, **kernel_kw)
    problem = BarycenterProblem(atoms=ts.measures, weights=sw.dense,
                                entropic=entropic,
                                fixed_point_iters=fixed_point_iters)
    measure = sinkhorn_barycenter(problem)
    tag = "nw" if kind == "gaussian" else "idw"
    return Prediction(weights=sw, measure=measure, method_tag=tag,
                      diagnostics={"exact_hit": False,
                                   "support": [int(i) for i in sw.support]})


class _ResidualEngine:
    """Warm evaluator of sum_i (target_i - divergence(bary, y_i))^2."""

    def __init__(self, ts: TrainingSet, neighbors, targets: np.ndarray,
                 cfg: EntropicConfig, fixed_point_iters: int) -> None:
        self.ts = ts
        self.neighbors = [int(i) for i in neighbors]
        self.targets = np.asarray(targets, dtype=np.float64)
        self.cfg = cfg
        self.fixed_point_iters = fixed_point_iters
        self._geom = _PairGeometry(ts.grid, ts.grid)
        self._state = _BaryState(ts.grid.shape)
        self._cross = {i: None for i in self.neighbors}
        self._beta_self = None
        self._cross_anchor: np.ndarray | None = None
        self.solve_count = 0
        self.last_measure: GridMeasure | None = None

    def _snapshot(self) -> tuple:
        # the solvers rebind state arrays instead of mutating them, so a
        # shallow copy of the potential dicts pins the whole state
        s = self._state
        return (dict(s.psi), s.delta, s.mass, s.last_weights, s.primed,
                dict(self._cross), self._beta_self, self._cross_anchor)

    def _restore(self, snap: tuple) -> None:
        s = self._state
        (psi, s.delta, s.mass, s.last_weights, s.primed,
         cross, self._beta_self, self._cross_anchor) = snap
        s.psi = dict(psi)
        self._cross = dict(cross)

    def value(self, dense: np.ndarray, use_shortcut: bool = True) -> float:
        dense = np.asarray(dense, dtype=np.float64)
        if _moved_far(self._cross_anchor, dense):
            # the barycenter changed a lot since these potentials were
            # stored, so they are stale; solve the transports cold
            self._cross = {i: None for i in self.neighbors}
            self._beta_self = None
        budget = _warm_budget(self._state, dense, self.fixed_point_iters)
        mass, self._state, _, _ = _solve_barycenter(
            self.ts.measures, dense, self.cfg, budget,
            geom=self._geom, state=self._state, use_shortcut=use_shortcut)
        self.solve_count += 1
        beta = new_normalized(self.ts.grid, mass)
        self.last_measure = beta
        self_b, pot_b, _, _ = self_transport_cost(beta, self.cfg,
                                                  init=self._beta_self)
        self._beta_self = pot_b
        total = 0.0
        for pos, i in enumerate(self.neighbors):
            res = ot_eps(beta, self.ts.measures[i], self.cfg,
                         init=self._cross[i])
            self._cross[i] = res.potentials
            div = max(res.cost - 0.5 * self_b
                      - 0.5 * self.ts.self_cost(i, self.cfg), 0.0)
            total += (self.targets[pos] - div) ** 2
        self._cross_anchor = dense.copy()
        return total


def _fit_to_targets(ts: TrainingSet, neighbors: np.ndarray,
                    targets: np.ndarray, n: int, dcfg: DescentConfig,
                    entropic: EntropicConfig, fixed_point_iters: int, tag: str,
                    ) -> Prediction:
    """Sparse weights whose barycenter matches per-neighbor distance targets.

    Projected gradient with forward differences over every candidate
    coordinate (the ``k`` neighbors), so one iteration costs at most
    ``k + 2`` barycenter solves.  Each difference restarts from one
    snapshot of the solver state settled at the current iterate, with the
    base point re-evaluated at the same truncation, so the probes share
    their fixed-point phase and their order cannot influence the result.
    Starts uniform on the ``n`` neighbors with the smallest targets;
    ``neighbors`` must arrive sorted that way.
    """
    engine = _ResidualEngine(ts, neighbors, targets, entropic,
                             fixed_point_iters)
    n_train = len(ts)
    k = len(engine.neighbors)
    dense = np.zeros(n_train)
    dense[engine.neighbors[:n]] = 1.0 / n
    loss = engine.value(dense)
    history = [loss]
    best_loss = loss
    best_dense = dense.copy()
    best_measure = engine.last_measure
    h = dcfg.fd_step
    for _ in range(dcfg.max_outer_iters):
        snap = engine._snapshot()
        base = engine.value(dense, use_shortcut=False)
        grad = np.empty(k)
        for pos, i in enumerate(engine.neighbors):
            plus = dense.copy()
            plus[i] += h
            plus /= 1.0 + h
            engine._restore(snap)
            grad[pos] = (engine.value(plus, use_shortcut=False) - base) / h
        engine._restore(snap)
        sub = dense[engine.neighbors] - dcfg.learning_rate * grad
        sparse_sub = gssp(sub, n)
        dense = np.zeros(n_train)
        dense[engine.neighbors] = sparse_sub.dense
        loss = engine.value(dense)
        history.append(loss)
        if loss < best_loss:
            best_loss = loss
            best_dense = dense.copy()
            best_measure = engine.last_measure
        if len(history) > _WINDOW:
            recent = history[-(_WINDOW + 1):]
            span = max(recent) - min(recent)
            if span <= dcfg.rel_tol * max(abs(recent[0]), abs(recent[-1]),
                                          1e-300):
                break
    sw = SparseWeights(dense=best_dense, support=np.flatnonzero(best_dense),
                       n_max=n)
    # cold re-solve so the reported measure is exactly reproducible from
    # the reported weights
    problem = BarycenterProblem(atoms=ts.measures, weights=best_dense,
                                entropic=entropic,
                                fixed_point_iters=fixed_point_iters)
    measure = sinkhorn_barycenter(problem)
    assert best_measure is not None
    drift = measure.total_variation(best_measure)
    return Prediction(
        weights=sw, measure=measure, method_tag=tag,
        diagnostics={"exact_hit": False, "objective": best_loss,
                     "iterations": len(history) - 1,
                     "barycenter_solves": engine.solve_count,
                     "warm_cold_tv": drift,
                     "neighbors": [int(i) for i in neighbors],
                     "targets": [float(t) for t in targets]})


def as_predict(x: np.ndarray, ts: TrainingSet, field: MetricField, n: int,
               k: int, dcfg: DescentConfig = DescentConfig(),
               entropic: EntropicConfig = EntropicConfig(),
               fixed_point_iters: int = 100) -> Prediction:
    """Match barycenter divergences to locally predicted squared distances.

    The ``k`` nearest snapshots under the local metrics are the candidate
    atoms; the fitted weights make the divergence from the barycenter to
    each candidate track the metric prediction.  A query that coincides
    with a training parameter short-circuits to that snapshot.
    """
    if not 1 <= n <= k <= len(ts):
        raise ValueError("need 1 <= n <= k <= number of snapshots")
    msq = _field_sq(x, field)
    neighbors = metric_knn(x, field, k)
    if msq[neighbors[0]] <= 1e-18:
        return _snapshot_prediction(int(neighbors[0]), ts, n, "as", {})
    return _fit_to_targets(ts, neighbors, msq[neighbors], n, dcfg, entropic,
                           fixed_point_iters, "as")


def as_bench_predict(target: GridMeasure, ts: TrainingSet, n: int, k: int,
                     dcfg: DescentConfig = DescentConfig(),
                     entropic: EntropicConfig = EntropicConfig(),
                     fixed_point_iters: int = 100) -> Prediction:
    """Oracle variant of :func:`as_predict` using true divergences.

    Requires the target measure itself, so it benchmarks how much of the
    AS error comes from the metric predictions rather than the fit.
    Candidates are the ``k`` snapshots closest to the target in true
    divergence; a target matching a snapshot short-circuits to it.
    """
    if not 1 <= n <= k <= len(ts):
        raise ValueError("need 1 <= n <= k <= number of snapshots")
    cfg = entropic
    self_t, _, _, _ = self_transport_cost(target, cfg)
    divs = np.empty(len(ts))
    for i in range(len(ts)):
        res = ot_eps(target, ts.measures[i], cfg)
        divs[i] = max(res.cost - 0.5 * self_t - 0.5 * ts.self_cost(i, cfg),
                      0.0)
    neighbors = np.argsort(divs, kind="stable")[:k]
    eps = effective_epsilon(cfg, ts.grid)
    if divs[neighbors[0]] <= 100.0 * cfg.stop_tol * eps:
        return _snapshot_prediction(int(neighbors[0]), ts, n, "as-bench", {})
    return _fit_to_targets(ts, neighbors, divs[neighbors], n, dcfg, cfg,
                           fixed_point_iters, "as-bench")


def best_benchmark(target: GridMeasure, ts: TrainingSet, n: int,
                   dcfg: DescentConfig = DescentConfig(),
                   entropic: EntropicConfig = EntropicConfig(),
                   fixed_point_iters: int = 100) -> Prediction:
    """Directly minimize the divergence to the oracle target.

    Runs the adaptive-sparsity solver (with whatever restarts ``dcfg``
    grants) and reports its best iterate; this approximates the best
    n-term barycentric approximation of the target and lower-bounds the
    achievable regression error.
    """
    trace = gas(target, ts.measures, n, dcfg, entropic, fixed_point_iters)
    problem = BarycenterProblem(atoms=ts.measures,
                                weights=trace.final_weights.dense,
                                entropic=entropic,
                                fixed_point_iters=fixed_point_iters)
    measure = sinkhorn_barycenter(problem)
    return Prediction(
        weights=trace.final_weights, measure=measure, method_tag="best",
        diagnostics={"exact_hit": False, "loss": trace.best_loss,
                     "iterations": len(trace.loss_history) - 1,
                     "restart_index": trace.restart_index,
                     "converged": trace.converged,
                     "loss_history": [float(v) for v in trace.loss_history],
                     "support_sizes": [len(s) for s in trace.support_history]})


@dataclass(frozen=True)
class BgaModel:
    """Greedy atom subset plus per-snapshot projection weights.

    ``selected`` lists atom indices in greedy order; ``train_weights`` row
    ``t`` holds the weights (over ``selected`` slots) of snapshot ``t``'s
    projection onto the selected atoms; rows of selected atoms are exact
    unit vectors.  ``interpolator_spec`` records how rows are blended at
    prediction time.
    """

    selected: tuple[int, ...]
    train_weights: np.ndarray
    interpolator_spec: dict
    greedy_losses: tuple[float, ...]

    def __post_init__(self) -> None:
        tw = np.asarray(self.train_weights, dtype=np.float64)
        if tw.ndim != 2 or tw.shape[1] != len(self.selected):
            raise ValueError("train_weights must be (n_train, len(selected))")
        if len(set(self.selected)) != len(self.selected):
            raise ValueError("selected atoms must be distinct")
        object.__setattr__(self, "train_weights", tw)
        object.__setattr__(self, "selected",
                           tuple(int(i) for i in self.selected))


def _dense_projection(target: GridMeasure, atoms: tuple[GridMeasure, ...],
                      dcfg: DescentConfig, entropic: EntropicConfig,
                      fixed_point_iters: int, max_iters: int,
                      ) -> tuple[np.ndarray, float]:
    """Project a target onto the dense simplex span of a few atoms.

    Plain projected gradient from uniform weights with forward differences
    over all coordinates; returns the best weights and loss seen.
    """
    m = len(atoms)
    engine = LossEngine(target, atoms, entropic, fixed_point_iters)
    w = np.full(m, 1.0 / m)
    loss = engine.loss(w)
    history = [loss]
    best = (loss, w.copy())
    for _ in range(max_iters):
        grad = engine.gradient(w, list(range(m)), dcfg.fd_step,
                               scheme="forward")
        w = project_simplex(w - dcfg.learning_rate * grad)
        loss = engine.loss(w)
        history.append(loss)
        if loss < best[0]:
            best = (loss, w.copy())
        if len(history) > _WINDOW:
            recent = history[-(_WINDOW + 1):]
            span = max(recent) - min(recent)
            if span <= dcfg.rel_tol * max(abs(recent[0]), abs(recent[-1]),
                                          1e-300):
                break
    return best[1], best[0]


def bga_train(ts: TrainingSet, n: int, dcfg: DescentConfig = DescentConfig(),
              entropic: EntropicConfig = EntropicConfig(),
              fixed_point_iters: int = 100, inner_iters: int = 100,
              ) -> BgaModel:
    """Greedily pick ``n`` atoms that cover the training set, then project.

    Seeds with the two snapshots at maximal stored distance, then
    repeatedly adds the snapshot whose projection onto the current
    selection is worst (max-min step; ties take the lower index).  Needs
    ``ts.distances``.  Rows of ``train_weights`` for selected atoms are
    exact unit vectors; other rows come from dense simplex projection.
    """
    if ts.distances is None:
        raise ValueError("bga_train requires precomputed training distances")
    n_train = len(ts)
    if not 2 <= n <= n_train:
        raise ValueError(f"n must lie in [2, {n_train}]")
    flat = int(np.argmax(ts.distances))
    i0, j0 = divmod(flat, n_train)
    selected = [min(i0, j0), max(i0, j0)]
    greedy_losses: list[float] = [float(ts.distances[i0, j0])]

    while len(selected) < n:
        atoms = tuple(ts.measures[i] for i in selected)
        worst_idx = -1
        worst_loss = -np.inf
        for t in range(n_train):
            if t in selected:
                continue
            _, loss = _dense_projection(ts.measures[t], atoms, dcfg, entropic,
                                        fixed_point_iters, inner_iters)
            if loss > worst_loss:
                worst_loss = loss
                worst_idx = t
        selected.append(worst_idx)
        greedy_losses.append(worst_loss)

    atoms = tuple(ts.measures[i] for i in selected)
    slot = {atom: pos for pos, atom in enumerate(selected)}
    train_weights = np.zeros((n_train, n))
    for t in range(n_train):
        if t in slot:
            train_weights[t, slot[t]] = 1.0
        else:
            w, _ = _dense_projection(ts.measures[t], atoms, dcfg, entropic,
                                     fixed_point_iters, inner_iters)
            train_weights[t] = w
    return BgaModel(selected=tuple(selected), train_weights=train_weights,
                    interpolator_spec={"kind": "idw", "power": _IDW_POWER,
                                       "eta": _IDW_ETA},
                    greedy_losses=tuple(greedy_losses))


def bga_predict(x: np.ndarray, model: BgaModel, ts: TrainingSet,
                entropic: EntropicConfig = EntropicConfig(),
                fixed_point_iters: int = 100) -> Prediction:
    """Blend stored projection weights by inverse distance in parameter space.

    At a training parameter the stored row is used unchanged, so training
    points reproduce their own projections exactly.
    """
    query = np.asarray(x, dtype=np.float64).reshape(-1)
    dists = np.linalg.norm(ts.X - query[None, :], axis=1)
    idx = int(np.argmin(dists))
    if dists[idx] == 0.0:
        w = model.train_weights[idx].copy()
        exact = True
    else:
        spec = model.interpolator_spec
        vals = (spec["eta"] + dists) ** (-spec["power"])
        lam = vals / vals.sum()
        w = project_simplex(lam @ model.train_weights)
        exact = False
    dense = np.zeros(len(ts))
    dense[list(model.selected)] = w
    sw = SparseWeights(dense=dense, support=np.flatnonzero(dense),
                       n_max=len(model.selected))
    problem = BarycenterProblem(atoms=ts.measures, weights=dense,
                                entropic=entropic,
                                fixed_point_iters=fixed_point_iters)
    measure = sinkhorn_barycenter(problem)
    return Prediction(weights=sw, measure=measure, method_tag="bga",
                      diagnostics={"exact_hit": exact,
                                   "nearest": idx,
                                   "selected": list(model.selected)})

"""Dataset persistence, experiment orchestration, and result summaries.

Datasets travel in a single-file binary container with a versioned header
so round trips are bit-exact and language-neutral.  Experiments are driven
by a strict JSON config (unknown keys rejected), produce an
:class:`ErrorReport` whose summaries are recomputable from the per-sample
rows, and optionally write plot-ready CSV artifacts (per-sample errors,
optimizer traces, k-sweep curves).  All timing uses a monotonic clock.
"""

from __future__ import annotations

import csv
import io
import json
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from sparsebary.burgers import SolverSpec, sample_parameters, solve_burgers
from sparsebary.descent import DescentConfig
from sparsebary.grid import Grid2D, GridMeasure, default_grid
from sparsebary.metric import MetricField, learn_local_metrics
from sparsebary.regression import (
    Prediction,
    TrainingSet,
    as_bench_predict,
    as_predict,
    best_benchmark,
    bga_predict,
    bga_train,
    kernel_predict,
    nn_predict,
)
from sparsebary.sinkhorn import EntropicConfig, sinkhorn_divergence

__all__ = [
    "DatasetIOError",
    "ErrorReport",
    "ExperimentConfig",
    "FormatVersionError",
    "METHODS",
    "load_dataset",
    "run_experiment",
    "save_dataset",
    "summarize",
    "write_report",
    "read_report",
]

METHODS = ("nn", "nw", "idw", "as", "as-bench", "best", "bga")

_MAGIC = b"SPBARYDS"
_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIIddd")  # magic, version, flags, N, d, H, W,
#                                          pixel_size, origin_row, origin_col
_FLAG_DISTANCES = 1


class DatasetIOError(OSError):
    """Raised when a dataset container cannot be read or written."""


class FormatVersionError(DatasetIOError):
    """Raised when a container's magic or version is not understood."""


def save_dataset(ts: TrainingSet, path) -> None:
    """Write the training set as a self-describing binary container."""
    n, d = ts.X.shape
    grid = ts.grid
    flags = _FLAG_DISTANCES if ts.distances is not None else 0
    header = _HEADER.pack(_MAGIC, _VERSION, flags, n, d, grid.height,
                          grid.width, grid.pixel_size, grid.origin[0],
                          grid.origin[1])
    masses = np.stack([m.mass for m in ts.measures])
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(ts.X, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(masses, dtype="<f8").tobytes())
            if ts.distances is not None:
                fh.write(np.ascontiguousarray(ts.distances,
                                              dtype="<f8").tobytes())
    except OSError as exc:
        raise DatasetIOError(f"cannot write dataset to {path}: {exc}") from exc


def load_dataset(path) -> TrainingSet:
    """Read a container written by :func:`save_dataset`, bit-exactly.

    Raises
    ------
    FormatVersionError
        If the magic string or version does not match.
    DatasetIOError
        If the file is truncated, oversized, or unreadable; a partial
        training set is never returned.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DatasetIOError(f"cannot read dataset from {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise FormatVersionError("file too short to hold a dataset header")
    magic, version, flags, n, d, height, width, pixel, orow, ocol = \
        _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatVersionError("not a dataset container (bad magic)")
    if version != _VERSION:
        raise FormatVersionError(f"unsupported container version {version}")
    expected = _HEADER.size + 8 * (n * d + n * height * width)
    if flags & _FLAG_DISTANCES:
        expected += 8 * n * n
    if len(raw) != expected:
        raise DatasetIOError(
            f"container holds {len(raw)} bytes, expected {expected}")
    grid = Grid2D(height=height, width=width, pixel_size=pixel,
                  origin=(orow, ocol))
    offset = _HEADER.size
    x = np.frombuffer(raw, dtype="<f8", count=n * d, offset=offset)
    x = x.reshape(n, d).copy()
    offset += 8 * n * d
    masses = np.frombuffer(raw, dtype="<f8", count=n * height * width,
                           offset=offset).reshape(n, height, width)
    offset += 8 * n * height * width
    distances = None
    if flags & _FLAG_DISTANCES:
        distances = np.frombuffer(raw, dtype="<f8", count=n * n,
                                  offset=offset).reshape(n, n).copy()
    measures = tuple(GridMeasure(grid=grid, mass=masses[i].copy())
                     for i in range(n))
    return TrainingSet(X=x, measures=measures, grid=grid, distances=distances)


def _take(mapping: dict, context: str, known: dict) -> dict:
    """Strict-key helper: every key must be known, values passed through."""
    extra = set(mapping) - set(known)
    if extra:
        raise ValueError(
            f"unknown {context} key(s): {', '.join(sorted(extra))}")
    out = dict(known)
    out.update(mapping)
    return out


def _entropic_from(obj: dict) -> EntropicConfig:
    base = EntropicConfig()
    vals = _take(obj, "entropic", {
        "epsilon": base.epsilon, "max_iters": base.max_iters,
        "stop_tol": base.stop_tol, "anneal_steps": base.anneal_steps,
        "anneal_start_scale": base.anneal_start_scale})
    return EntropicConfig(**vals)


def _descent_from(obj: dict) -> DescentConfig:
    base = DescentConfig()
    vals = _take(obj, "descent", {
        "learning_rate": base.learning_rate,
        "max_outer_iters": base.max_outer_iters, "rel_tol": base.rel_tol,
        "restarts": base.restarts, "seed": base.seed,
        "fd_step": base.fd_step})
    return DescentConfig(**vals)


def _grid_from(obj: dict) -> Grid2D:
    base = default_grid()
    vals = _take(obj, "grid", {
        "height": base.height, "width": base.width,
        "pixel_size": base.pixel_size, "origin": list(base.origin)})
    return Grid2D(height=vals["height"], width=vals["width"],
                  pixel_size=vals["pixel_size"],
                  origin=tuple(vals["origin"]))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; JSON-loadable with unknown keys rejected."""

    n_train: int = 50
    n_valid: int = 20
    n_max: int = 5
    k: int = 10
    methods: tuple[str, ...] = ("nn", "nw", "idw", "as")
    seed_train: int = 1
    seed_valid: int = 2
    entropic: EntropicConfig = EntropicConfig()
    descent: DescentConfig = DescentConfig()
    grid: Grid2D = field(default_factory=default_grid)
    fixed_point_iters: int = 100
    k_sweep: tuple[int, ...] = ()
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if not self.methods:
            raise ValueError("methods must be nonempty")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must not repeat")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unregistered method(s): {', '.join(unknown)}")
        if not 1 <= self.n_max <= self.k <= self.n_train:
            raise ValueError("need 1 <= n_max <= k <= n_train")
        if self.n_valid < 1:
            raise ValueError("n_valid must be positive")
        if self.fixed_point_iters < 1:
            raise ValueError("fixed_point_iters must be positive")
        for kk in self.k_sweep:
            if not self.n_max <= kk <= self.n_train:
                raise ValueError("k_sweep entries must lie in [n_max, n_train]")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "k_sweep",
                           tuple(int(v) for v in self.k_sweep))

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ValueError("config must be a JSON object")
        base = cls()
        vals = _take(obj, "config", {
            "n_train": base.n_train, "n_valid": base.n_valid,
            "n_max": base.n_max, "k": base.k, "methods": list(base.methods),
            "seeds": {"train": base.seed_train, "valid": base.seed_valid},
            "entropic": {}, "descent": {}, "grid": {},
            "fixed_point_iters": base.fixed_point_iters,
            "k_sweep": list(base.k_sweep), "out_dir": base.out_dir})
        seeds = _take(vals["seeds"], "seeds",
                      {"train": base.seed_train, "valid": base.seed_valid})
        return cls(
            n_train=vals["n_train"], n_valid=vals["n_valid"],
            n_max=vals["n_max"], k=vals["k"],
            methods=tuple(vals["methods"]),
            seed_train=seeds["train"], seed_valid=seeds["valid"],
            entropic=_entropic_from(vals["entropic"]),
            descent=_descent_from(vals["descent"]),
            grid=_grid_from(vals["grid"]),
            fixed_point_iters=vals["fixed_point_iters"],
            k_sweep=tuple(vals["k_sweep"]), out_dir=vals["out_dir"])

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass
class ErrorReport:
    """Per-sample errors plus timings; summaries derive from these rows.

    ``per_sample`` rows are (method, sample index, error); ``gaps`` holds
    the divergence-based distance between each method's prediction and the
    ``best`` benchmark's prediction for the same sample, present only when
    ``best`` ran.  ``failures`` lists (method, sample index, message) for
    samples whose prediction raised; they carry no error row.
    """

    methods: tuple[str, ...]
    per_sample: list[tuple[str, int, float]]
    predict_seconds: dict[str, list[float]]
    train_seconds: dict[str, float]
    gaps: dict[str, list[float]] | None = None
    failures: list[tuple[str, int, str]] = field(default_factory=list)
    traces: dict[int, list[tuple[float, int]]] = field(default_factory=dict)
    k_sweep_rows: list[tuple[int, float, float]] = field(default_factory=list)

    def errors(self, method: str) -> np.ndarray:
        return np.array([e for m, _, e in self.per_sample if m == method])


def _predict_one(method: str, x: np.ndarray, truth: GridMeasure,
                 ts: TrainingSet, cfg: ExperimentConfig,
                 metric_field: MetricField | None, bga_model) -> Prediction:
    if method == "nn":
        return nn_predict(x, ts, metric_field)
    if method == "nw":
        return kernel_predict(x, ts, cfg.n_max, kind="gaussian",
                              entropic=cfg.entropic,
                              fixed_point_iters=cfg.fixed_point_iters)
    if method == "idw":
        return kernel_predict(x, ts, cfg.n_max, kind="idw",
                              entropic=cfg.entropic,
                              fixed_point_iters=cfg.fixed_point_iters)
    if method == "as":
        assert metric_field is not None
        return as_predict(x, ts, metric_field, cfg.n_max, cfg.k, cfg.descent,
                          cfg.entropic, cfg.fixed_point_iters)
    if method == "as-bench":
        return as_bench_predict(truth, ts, cfg.n_max, cfg.k, cfg.descent,
                                cfg.entropic, cfg.fixed_point_iters)
    if method == "best":
        return best_benchmark(truth, ts, cfg.n_max, cfg.descent, cfg.entropic,
                              cfg.fixed_point_iters)
    if method == "bga":
        assert bga_model is not None
        return bga_predict(x, bga_model, ts, cfg.entropic,
                           cfg.fixed_point_iters)
    raise ValueError(f"unregistered method {method!r}")


def run_experiment(cfg: ExperimentConfig, ts: TrainingSet | None = None,
                   validation: tuple[list, list] | None = None,
                   progress=None) -> ErrorReport:
    """Train whatever the methods need, evaluate them, emit artifacts.

    ``ts`` and ``validation`` (a (parameter vectors, truth measures) pair)
    override the generated data, which lets callers evaluate on held-in
    points or precomputed sets.  When ``cfg.out_dir`` is set the report is
    also written as CSV files there.  Per-sample prediction failures are
    recorded in the report instead of aborting the run.
    """
    note = progress if progress is not None else (lambda _msg: None)
    timings: dict[str, float] = {}
    spec = SolverSpec(grid=cfg.grid)

    if ts is None:
        note("generating training snapshots")
        tick = time.monotonic()
        params = sample_parameters(cfg.n_train, cfg.seed_train)
        measures = tuple(solve_burgers(p, spec) for p in params)
        ts = TrainingSet(X=np.vstack([p.as_vector() for p in params]),
                         measures=measures, grid=cfg.grid)
        timings["dataset"] = time.monotonic() - tick
    if len(ts) < cfg.n_train:
        raise ValueError("training set smaller than the configured n_train")

    from sparsebary.sinkhorn import pairwise_distance_matrix

    need_metrics = bool({"nn", "as"} & set(cfg.methods))
    need_distances = need_metrics or "bga" in cfg.methods
    if need_distances and ts.distances is None:
        note("computing pairwise training distances")
        tick = time.monotonic()
        ts.distances = pairwise_distance_matrix(ts.measures, cfg.entropic)
        timings["distances"] = time.monotonic() - tick
    metric_field = None
    if need_metrics:
        note("fitting local metrics")
        tick = time.monotonic()
        metric_field = learn_local_metrics(ts.X, ts.distances)
        timings["metrics"] = time.monotonic() - tick
    bga_model = None
    if "bga" in cfg.methods:
        note("training the greedy atom model")
        tick = time.monotonic()
        bga_model = bga_train(ts, cfg.n_max, cfg.descent, cfg.entropic,
                              cfg.fixed_point_iters)
        timings["bga"] = time.monotonic() - tick

    if validation is None:
        note("generating validation snapshots")
        tick = time.monotonic()
        val_params = sample_parameters(cfg.n_valid, cfg.seed_valid)
        truths = [solve_burgers(p, spec) for p in val_params]
        xs = [p.as_vector() for p in val_params]
        timings["validation"] = time.monotonic() - tick
    else:
        xs, truths = validation
        xs = [np.asarray(x, dtype=np.float64).reshape(-1) for x in xs]
        if len(xs) != len(truths):
            raise ValueError("validation parameters and truths must pair up")

    # best runs first per sample so other methods can be gapped against it
    ordered = [m for m in cfg.methods if m == "best"]
    ordered += [m for m in cfg.methods if m != "best"]
    has_best = "best" in cfg.methods

    per_sample: list[tuple[str, int, float]] = []
    predict_seconds: dict[str, list[float]] = {m: [] for m in cfg.methods}
    gaps: dict[str, list[float]] | None = \
        {m: [] for m in cfg.methods if m != "best"} if has_best else None
    failures: list[tuple[str, int, str]] = []
    traces: dict[int, list[tuple[float, int]]] = {}

    for j, (x, truth) in enumerate(zip(xs, truths)):
        note(f"validation sample {j}")
        best_measure = None
        for method in ordered:
            tick = time.monotonic()
            try:
                pred = _predict_one(method, x, truth, ts, cfg, metric_field,
                                    bga_model)
            except Exception as exc:  # recorded, not fatal
                predict_seconds[method].append(time.monotonic() - tick)
                failures.append((method, j, f"{type(exc).__name__}: {exc}"))
                continue
            predict_seconds[method].append(time.monotonic() - tick)
            err = float(np.sqrt(sinkhorn_divergence(pred.measure, truth,
                                                    cfg.entropic)))
            per_sample.append((method, j, err))
            if method == "best":
                best_measure = pred.measure
                history = pred.diagnostics.get("loss_history", [])
                sizes = pred.diagnostics.get("support_sizes", [])
                traces[j] = list(zip(history, sizes))
            elif has_best and gaps is not None:
                if best_measure is None:
                    gaps[method].append(float("nan"))
                else:
                    gap = float(np.sqrt(sinkhorn_divergence(
                        pred.measure, best_measure, cfg.entropic)))
                    gaps[method].append(gap)

    k_rows: list[tuple[int, float, float]] = []
    if cfg.k_sweep and metric_field is not None:
        for kk in cfg.k_sweep:
            note(f"k-sweep at k={kk}")
            errs = []
            for x, truth in zip(xs, truths):
                pred = as_predict(x, ts, metric_field, cfg.n_max, kk,
                                  cfg.descent, cfg.entropic,
                                  cfg.fixed_point_iters)
                errs.append(float(np.sqrt(sinkhorn_divergence(
                    pred.measure, truth, cfg.entropic))))
            k_rows.append((kk, float(np.mean(errs)), float(np.max(errs))))

    report = ErrorReport(methods=cfg.methods, per_sample=per_sample,
                         predict_seconds=predict_seconds,
                         train_seconds=timings, gaps=gaps, failures=failures,
                         traces=traces, k_sweep_rows=k_rows)
    if cfg.out_dir is not None:
        write_report(report, cfg.out_dir)
    return report


def _fmt(value: float) -> str:
    return repr(float(value))


def write_report(report: ErrorReport, out_dir) -> None:
    """Write the report as CSV artifacts (headers, LF endings, `.` decimal)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def open_csv(name: str):
        return open(out / name, "w", encoding="utf-8", newline="")

    with open_csv("per_sample.csv") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "sample", "error", "gap_to_best",
                         "predict_seconds"])
        counters = {m: 0 for m in report.methods}
        for method, idx, err in report.per_sample:
            pos = counters[method]
            counters[method] += 1
            gap = ""
            if report.gaps is not None and method in report.gaps:
                gap = _fmt(report.gaps[method][pos])
            secs = report.predict_seconds[method][idx] \
                if idx < len(report.predict_seconds[method]) else ""
            writer.writerow([method, idx, _fmt(err), gap,
                             _fmt(secs) if secs != "" else ""])
    with open_csv("timings.csv") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["stage", "seconds"])
        for stage, secs in report.train_seconds.items():
            writer.writerow([stage, _fmt(secs)])
    if report.failures:
        with open_csv("failures.csv") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "sample", "message"])
            for method, idx, msg in report.failures:
                writer.writerow([method, idx, msg])
    if report.traces:
        with open_csv("traces.csv") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sample", "iteration", "loss", "support_size"])
            for idx in sorted(report.traces):
                for it, (loss, size) in enumerate(report.traces[idx]):
                    writer.writerow([idx, it, _fmt(loss), size])
    if report.k_sweep_rows:
        with open_csv("ksweep.csv") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["k", "mean_error", "worst_error"])
            for kk, mean_err, worst in report.k_sweep_rows:
                writer.writerow([kk, _fmt(mean_err), _fmt(worst)])
    with open_csv("summary.csv") as fh:
        fh.write(_summary_csv(report))


def read_report(out_dir) -> ErrorReport:
    """Rebuild a report from ``per_sample.csv`` and ``timings.csv``."""
    out = Path(out_dir)
    per_sample: list[tuple[str, int, float]] = []
    gaps: dict[str, list[float]] = {}
    predict_seconds: dict[str, list[float]] = {}
    methods: list[str] = []
    path = out / "per_sample.csv"
    if not path.exists():
        raise DatasetIOError(f"no per_sample.csv under {out_dir}")
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            method = row["method"]
            if method not in methods:
                methods.append(method)
            per_sample.append((method, int(row["sample"]),
                               float(row["error"])))
            if row["gap_to_best"]:
                gaps.setdefault(method, []).append(float(row["gap_to_best"]))
            if row["predict_seconds"]:
                predict_seconds.setdefault(method, []).append(
                    float(row["predict_seconds"]))
    train_seconds: dict[str, float] = {}
    tpath = out / "timings.csv"
    if tpath.exists():
        with open(tpath, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                train_seconds[row["stage"]] = float(row["seconds"])
    return ErrorReport(methods=tuple(methods), per_sample=per_sample,
                       predict_seconds=predict_seconds,
                       train_seconds=train_seconds,
                       gaps=gaps if gaps else None)


def _method_stats(report: ErrorReport, method: str) -> dict:
    errs = report.errors(method)
    stats = {"count": len(errs)}
    if len(errs):
        q1, med, q3 = np.quantile(errs, [0.25, 0.5, 0.75])
        stats.update(mean=float(np.mean(errs)), max=float(np.max(errs)),
                     median=float(med), q1=float(q1), q3=float(q3))
    else:
        stats.update(mean=float("nan"), max=float("nan"),
                     median=float("nan"), q1=float("nan"), q3=float("nan"))
    secs = report.predict_seconds.get(method, [])
    stats["predict_seconds"] = float(np.mean(secs)) if secs else float("nan")
    if report.gaps is not None and method in report.gaps:
        vals = [g for g in report.gaps[method] if not np.isnan(g)]
        stats["gap_av"] = float(np.mean(vals)) if vals else float("nan")
        stats["gap_wc"] = float(np.max(vals)) if vals else float("nan")
    return stats


def _summary_csv(report: ErrorReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "count", "mean", "max", "median", "q1", "q3",
                     "gap_av", "gap_wc", "predict_seconds"])
    for method in report.methods:
        s = _method_stats(report, method)
        writer.writerow([
            method, s["count"], _fmt(s["mean"]), _fmt(s["max"]),
            _fmt(s["median"]), _fmt(s["q1"]), _fmt(s["q3"]),
            _fmt(s["gap_av"]) if "gap_av" in s else "",
            _fmt(s["gap_wc"]) if "gap_wc" in s else "",
            _fmt(s["predict_seconds"])])
    return buf.getvalue()


def summarize(report: ErrorReport) -> str:
    """Human-readable per-method table; quartiles use linear interpolation."""
    header = ["method", "count", "mean", "max", "median", "q1", "q3",
              "gap_av", "gap_wc", "pred_s"]
    rows = [header]
    for method in report.methods:
        s = _method_stats(report, method)
        rows.append([
            method, str(s["count"]), f"{s['mean']:.6g}", f"{s['max']:.6g}",
            f"{s['median']:.6g}", f"{s['q1']:.6g}", f"{s['q3']:.6g}",
            f"{s['gap_av']:.6g}" if "gap_av" in s else "-",
            f"{s['gap_wc']:.6g}" if "gap_wc" in s else "-",
            f"{s['predict_seconds']:.4g}"])
    widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row))
             for row in rows]
    if report.train_seconds:
        stages = ", ".join(f"{k}={v:.3f}s"
                           for k, v in report.train_seconds.items())
        lines.append(f"training stages: {stages}")
    if report.failures:
        lines.append(f"failures: {len(report.failures)} "
                     "(see failures.csv)")
    return "\n".join(lines) + "\n"

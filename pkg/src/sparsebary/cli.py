"""Command-line entry points for dataset generation and experiments.

Subcommands: generate, distances, project, train-metrics, train-bga,
predict, evaluate, summarize.  Every subcommand accepts --config (JSON
experiment config), --seed (override the relevant seed), and --out
(output path).  Exit code 0 on success, 1 on a reported error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from sparsebary.burgers import BurgersParams, SolverSpec, generate_dataset, solve_burgers
from sparsebary.descent import gas, pg, rgsp
from sparsebary.harness import (
    DatasetIOError,
    ExperimentConfig,
    load_dataset,
    read_report,
    run_experiment,
    save_dataset,
    summarize,
)
from sparsebary.metric import MetricField, learn_local_metrics
from sparsebary.regression import (
    BgaModel,
    as_bench_predict,
    as_predict,
    best_benchmark,
    bga_predict,
    bga_train,
    kernel_predict,
    nn_predict,
)
from sparsebary.sinkhorn import pairwise_distance_matrix

__all__ = ["main"]

_ALGORITHMS = {"pg": pg, "gas": gas, "rgsp": rgsp}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="JSON",
                        help="experiment config file (strict JSON)")
    common.add_argument("--seed", type=int,
                        help="override the seed relevant to the subcommand")
    common.add_argument("--out", metavar="PATH",
                        help="output file or directory")

    parser = argparse.ArgumentParser(
        prog="sparsebary",
        description="sparse barycentric approximation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common],
                       help="sample parameters, solve the flows, save a dataset")
    p.add_argument("--count", type=int, help="number of snapshots "
                   "(default: config n_train)")

    p = sub.add_parser("distances", parents=[common],
                       help="add the pairwise distance matrix to a dataset")
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("project", parents=[common],
                       help="best n-term approximation of one snapshot from "
                            "the remaining ones")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target-index", type=int, required=True)
    p.add_argument("--algorithm", choices=sorted(_ALGORITHMS), default="gas")
    p.add_argument("--n", type=int, help="sparsity (default: config n_max)")

    p = sub.add_parser("train-metrics", parents=[common],
                       help="fit local metrics from a dataset with distances")
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("train-bga", parents=[common],
                       help="train the greedy atom model")
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("predict", parents=[common],
                       help="predict the measure at a parameter vector")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", required=True,
                   choices=["nn", "nw", "idw", "as", "as-bench", "best",
                            "bga"])
    p.add_argument("--x", required=True,
                   help="comma-separated parameter vector")
    p.add_argument("--metrics", help="metric field file (nn/as)")
    p.add_argument("--bga", help="bga model file (bga)")

    sub.add_parser("evaluate", parents=[common],
                   help="run the full experiment from the config")

    p = sub.add_parser("summarize", parents=[common],
                       help="print the summary table for a report directory")
    p.add_argument("--report", help="report directory (default: --out)")
    return parser


def _config(args) -> ExperimentConfig:
    if args.config:
        return ExperimentConfig.from_file(args.config)
    return ExperimentConfig()


def _save_metrics(field: MetricField, path) -> None:
    np.savez(path, points=field.points, matrices=field.matrices,
             eta=np.array(field.eta))


def _load_metrics(path) -> MetricField:
    with np.load(path) as data:
        return MetricField(points=data["points"], matrices=data["matrices"],
                           eta=float(data["eta"]))


def _save_bga(model: BgaModel, path) -> None:
    np.savez(path, selected=np.array(model.selected),
             train_weights=model.train_weights,
             greedy_losses=np.array(model.greedy_losses),
             interp_power=np.array(model.interpolator_spec["power"]),
             interp_eta=np.array(model.interpolator_spec["eta"]))


def _load_bga(path) -> BgaModel:
    with np.load(path) as data:
        return BgaModel(
            selected=tuple(int(i) for i in data["selected"]),
            train_weights=data["train_weights"],
            interpolator_spec={"kind": "idw",
                               "power": float(data["interp_power"]),
                               "eta": float(data["interp_eta"])},
            greedy_losses=tuple(float(v) for v in data["greedy_losses"]))


def _cmd_generate(args) -> int:
    cfg = _config(args)
    count = args.count if args.count is not None else cfg.n_train
    seed = args.seed if args.seed is not None else cfg.seed_train
    out = args.out or "dataset.spb"
    ts = generate_dataset(count, seed, SolverSpec(grid=cfg.grid))
    save_dataset(ts, out)
    print(f"wrote {count} snapshots on a {cfg.grid.height}x{cfg.grid.width} "
          f"grid to {out}")
    return 0


def _cmd_distances(args) -> int:
    cfg = _config(args)
    ts = load_dataset(args.dataset)
    ts.distances = pairwise_distance_matrix(ts.measures, cfg.entropic)
    out = args.out or args.dataset
    save_dataset(ts, out)
    print(f"wrote {len(ts)}x{len(ts)} distance matrix into {out}")
    return 0


def _cmd_project(args) -> int:
    cfg = _config(args)
    ts = load_dataset(args.dataset)
    idx = args.target_index
    if not 0 <= idx < len(ts):
        raise ValueError(f"target index {idx} out of range")
    n = args.n if args.n is not None else cfg.n_max
    target = ts.measures[idx]
    atoms = tuple(m for i, m in enumerate(ts.measures) if i != idx)
    solver = _ALGORITHMS[args.algorithm]
    trace = solver(target, atoms, n, cfg.descent, cfg.entropic,
                   cfg.fixed_point_iters)
    out = args.out or "trace.csv"
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write("iteration,loss,support_size,support\n")
        for it, (loss, supp) in enumerate(zip(trace.loss_history,
                                              trace.support_history)):
            joined = ";".join(str(s) for s in supp)
            fh.write(f"{it},{loss!r},{len(supp)},{joined}\n")
    support = list(trace.final_weights.support)
    print(f"{args.algorithm} finished: loss {trace.best_loss:.6e}, "
          f"support {support}, trace in {out}")
    return 0


def _cmd_train_metrics(args) -> int:
    ts = load_dataset(args.dataset)
    if ts.distances is None:
        raise ValueError("dataset has no distance matrix; run `distances`")
    field = learn_local_metrics(ts.X, ts.distances)
    out = args.out or "metrics.npz"
    _save_metrics(field, out)
    print(f"fitted {len(ts)} local metrics (eta={field.eta:.3e}) to {out}")
    return 0


def _cmd_train_bga(args) -> int:
    cfg = _config(args)
    ts = load_dataset(args.dataset)
    if ts.distances is None:
        raise ValueError("dataset has no distance matrix; run `distances`")
    model = bga_train(ts, cfg.n_max, cfg.descent, cfg.entropic,
                      cfg.fixed_point_iters)
    out = args.out or "bga.npz"
    _save_bga(model, out)
    print(f"selected atoms {list(model.selected)} to {out}")
    return 0


def _cmd_predict(args) -> int:
    cfg = _config(args)
    ts = load_dataset(args.dataset)
    x = np.array([float(v) for v in args.x.split(",")])
    method = args.method

    if method in ("nn", "as") and not args.metrics:
        raise ValueError(f"method {method} needs --metrics")
    if method == "bga" and not args.bga:
        raise ValueError("method bga needs --bga")

    if method == "nn":
        pred = nn_predict(x, ts, _load_metrics(args.metrics))
    elif method == "nw":
        pred = kernel_predict(x, ts, cfg.n_max, kind="gaussian",
                              entropic=cfg.entropic,
                              fixed_point_iters=cfg.fixed_point_iters)
    elif method == "idw":
        pred = kernel_predict(x, ts, cfg.n_max, kind="idw",
                              entropic=cfg.entropic,
                              fixed_point_iters=cfg.fixed_point_iters)
    elif method == "as":
        pred = as_predict(x, ts, _load_metrics(args.metrics), cfg.n_max,
                          cfg.k, cfg.descent, cfg.entropic,
                          cfg.fixed_point_iters)
    else:
        # oracle-backed benchmarks solve the true flow at x first
        truth = solve_burgers(BurgersParams.from_vector(x),
                              SolverSpec(grid=cfg.grid))
        if method == "as-bench":
            pred = as_bench_predict(truth, ts, cfg.n_max, cfg.k, cfg.descent,
                                    cfg.entropic, cfg.fixed_point_iters)
        elif method == "best":
            pred = best_benchmark(truth, ts, cfg.n_max, cfg.descent,
                                  cfg.entropic, cfg.fixed_point_iters)
        else:
            pred = bga_predict(x, _load_bga(args.bga), ts, cfg.entropic,
                               cfg.fixed_point_iters)

    out = args.out or "prediction.npz"
    np.savez(out, weights=pred.weights.dense,
             support=np.asarray(pred.weights.support),
             mass=pred.measure.mass)
    support = [int(i) for i in pred.weights.support]
    print(f"{method} prediction: support {support}, saved to {out}")
    return 0


def _cmd_evaluate(args) -> int:
    from dataclasses import replace

    cfg = _config(args)
    if args.seed is not None:
        cfg = replace(cfg, seed_valid=args.seed)
    out_dir = args.out or cfg.out_dir or "results"
    cfg = replace(cfg, out_dir=out_dir)
    report = run_experiment(cfg, progress=lambda msg: print(f"  {msg}",
                                                            file=sys.stderr))
    print(summarize(report), end="")
    print(f"artifacts written to {out_dir}")
    return 0


def _cmd_summarize(args) -> int:
    where = args.report or args.out or "results"
    report = read_report(where)
    text = summarize(report)
    (Path(where) / "summary.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "distances": _cmd_distances,
    "project": _cmd_project,
    "train-metrics": _cmd_train_metrics,
    "train-bga": _cmd_train_bga,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "summarize": _cmd_summarize,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, DatasetIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

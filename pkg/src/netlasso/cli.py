"""Command line entry points.

Subcommands: train, predict, eval, export-attention, verify-bounds, and
grad-check. Commands that write delimited outputs also render figures next
to them (pass --no-figures to skip); reports go to stdout when no output
path is given, in which case there is nowhere to put a figure and none is
drawn.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import load_config
from .data import (
    DataError,
    Dataset,
    inverse_zscore,
    load_csv,
    load_edges,
    make_windows,
    save_csv,
)
from .model import GnlModel, load_checkpoint, save_checkpoint
from .optim import random_instance, verify_theorem_bounds
from .tape import ConfigError, ShapeError, grad_check
from .training import (
    evaluate,
    export_attention,
    format_metrics,
    prepare,
    save_history,
    train,
)


def _sibling(primary_out, name: str) -> str:
    return os.path.join(os.path.dirname(os.path.abspath(primary_out)), name)


def _load_for_model(args):
    """Load checkpoint + data and normalize the data with checkpoint stats."""
    model, ckpt_ids, stats = load_checkpoint(args.model)
    dataset = load_csv(args.data)
    n_nodes = dataset.n_columns // model.config.d_x
    if n_nodes != model.n_nodes:
        raise DataError(f"data has {n_nodes} nodes, checkpoint expects "
                        f"{model.n_nodes}")
    if ckpt_ids is not None and list(ckpt_ids) != list(dataset.node_ids):
        raise DataError("data columns do not match the checkpoint's node ids")
    if stats is None:
        raise DataError("checkpoint carries no normalization stats; "
                        "cannot prepare new data")
    normed = (dataset.values - stats[0]) / stats[1]
    return model, dataset, normed, stats


def _cmd_train(args) -> int:
    config = load_config(args.config)
    dataset = load_csv(args.data)
    edges = None
    if args.graph:
        n_nodes = dataset.n_columns // config.d_x
        edges = load_edges(args.graph, n_nodes, dataset.node_ids)
    result = train(config, dataset, edges=edges)
    save_checkpoint(result.model, args.out, node_ids=dataset.node_ids,
                    stats=result.stats)
    history_path = args.history or _sibling(args.out, "history.tsv")
    save_history(result.history, history_path)
    print(f"checkpoint: {args.out}")
    print(f"history: {history_path}")
    if result.history:
        last = result.history[-1]
        val = "nan" if last.val_mse is None else f"{last.val_mse:.6f}"
        print(f"final epoch: train_mse {last.train_mse:.6f} val_mse {val}")
    if not args.no_figures and result.history:
        from .figures import render_history
        print("figure: " + render_history(result.history,
                                          _sibling(args.out, "history.png")))
    return 0


def _cmd_predict(args) -> int:
    model, dataset, normed, stats = _load_for_model(args)
    window = model.config.window
    if dataset.n_rows < window:
        raise DataError(f"{dataset.n_rows} rows cannot fill a window of "
                        f"{window}")
    horizon = args.horizon or model.config.horizon
    from .model import predict_horizon
    ctx = normed[-window:].reshape(window, model.n_nodes, model.config.d_x)
    preds = predict_horizon(model, ctx, horizon)
    flat = inverse_zscore(preds.reshape(horizon, -1), stats)
    out_ds = Dataset(timestamps=[f"+{k}" for k in range(1, horizon + 1)],
                     node_ids=list(dataset.node_ids), values=flat)
    save_csv(out_ds, args.out)
    print(f"forecast: {args.out}")
    if not args.no_figures:
        from .figures import render_forecast
        tail = dataset.values[-min(dataset.n_rows, 4 * window):]
        print("figure: " + render_forecast(tail, flat, dataset.node_ids,
                                           _sibling(args.out, "forecast.png")))
    return 0


def _cmd_eval(args) -> int:
    model, dataset, normed, stats = _load_for_model(args)
    cfg = model.config
    from .data import chronological_split, window_count
    n_windows = window_count(dataset.n_rows, cfg.window, cfg.horizon)
    split = chronological_split(n_windows, cfg.horizon)
    samples = make_windows(normed, cfg.window, cfg.horizon, cfg.d_x)
    test = split.part(samples, "test")
    if not test:
        raise DataError("no test windows; dataset too small for the split")
    metrics = evaluate(model, test, stats)
    report = format_metrics(metrics)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report)
        print(f"report: {args.out}")
        if not args.no_figures:
            from .figures import render_parity
            from .model import predict_horizon
            preds, truths = [], []
            for s in test:
                h = s.targets.shape[0]
                preds.append(predict_horizon(model, s.inputs, h).reshape(h, -1))
                truths.append(s.targets.reshape(h, -1))
            pr = inverse_zscore(np.concatenate(preds), stats)
            tr = inverse_zscore(np.concatenate(truths), stats)
            print("figure: " + render_parity(tr, pr,
                                             _sibling(args.out, "parity.png")))
    sys.stdout.write(report)
    return 0


def _cmd_export_attention(args) -> int:
    model, dataset, normed, stats = _load_for_model(args)
    cfg = model.config
    samples = make_windows(normed, cfg.window, cfg.horizon, cfg.d_x)
    index = args.window if args.window is not None else len(samples) - 1
    if not -len(samples) <= index < len(samples):
        raise DataError(f"window {index} out of range; data has "
                        f"{len(samples)} windows")
    paths = export_attention(model, samples[index].inputs, args.out,
                             node_ids=dataset.node_ids)
    for p in paths:
        print(f"matrix: {p}")
    if not args.no_figures:
        from .figures import render_attention
        final = np.loadtxt(paths[-1], delimiter="\t", skiprows=1,
                           usecols=range(1, model.n_nodes + 1))
        final = final.reshape(model.n_nodes, model.n_nodes)
        print("figure: " + render_attention(final, dataset.node_ids,
                                            os.path.join(args.out,
                                                         "attention.png")))
    return 0


def _cmd_verify_bounds(args) -> int:
    instance = random_instance(args.seed, args.n)
    t = 0.9 / instance.L
    report = verify_theorem_bounds(instance, args.method, t, args.k)
    text = report.format()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"report: {args.out}")
        if not args.no_figures:
            from .figures import render_bounds
            print("figure: " + render_bounds(report,
                                             _sibling(args.out, "bounds.png")))
    else:
        sys.stdout.write(text)
    if report.passed:
        print(f"{args.method}: bound holds at every k up to {args.k} "
              f"(t = {t!r})")
        return 0
    print(f"{args.method}: bound violated at k = {report.violations}",
          file=sys.stderr)
    return 1


def _cmd_grad_check(args) -> int:
    from .config import ModelConfig
    from .model import traced_objective

    worst = 0.0
    for seed in range(args.seeds):
        for reg in ("none", "fro"):
            beta = 0.01 if reg != "none" else 0.0
            cfg = ModelConfig(d_x=1, d_h=4, d_a=3, window=3, seed=seed,
                              beta=beta)
            model = GnlModel(cfg, 5)
            rng = np.random.default_rng(seed + 100)
            inputs = rng.normal(size=(3, 5, 1))
            target = rng.normal(size=(5, 1))
            fn = traced_objective(model, inputs, target, beta, reg)
            err = grad_check(fn, model.parameters(), eps=args.eps)
            worst = max(worst, err)
            print(f"seed {seed} reg {reg}: max relative error {err:.3e}")
    print(f"worst: {worst:.3e} (tolerance {args.tol})")
    if worst < args.tol:
        return 0
    print("gradient check failed", file=sys.stderr)
    return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="netlasso",
        description="Dynamic network regression with inferred influence links.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and save a checkpoint")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--data", required=True, help="wide CSV of node series")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--history", help="history TSV path "
                                     "(default: history.tsv next to --out)")
    p.add_argument("--graph", help="optional edge-list file restricting links")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("predict", help="forecast beyond the end of the data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="forecast CSV path")
    p.add_argument("--horizon", type=int, help="steps ahead "
                                               "(default: config horizon)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("eval", help="metrics on the chronological test part")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the report here as well as stdout")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("export-attention",
                       help="write per-step influence matrices for one window")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="directory for the matrices")
    p.add_argument("--window", type=int,
                   help="window index (default: the last)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=_cmd_export_attention)

    p = sub.add_parser("verify-bounds",
                       help="check a convergence rate bound empirically")
    p.add_argument("--method", required=True, choices=("pg", "apg"))
    p.add_argument("--k", required=True, type=int, help="iterations to check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=8, help="instance dimension")
    p.add_argument("--out", help="write the per-k report here")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=_cmd_verify_bounds)

    p = sub.add_parser("grad-check",
                       help="compare traced gradients with finite differences")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(fn=_cmd_grad_check)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, DataError, ConfigError, ShapeError, ValueError,
            RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())

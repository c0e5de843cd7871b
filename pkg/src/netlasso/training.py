"""Epoch loop over sliding windows, metric evaluation, influence export.

One run normalizes the data with statistics fit on the training rows only,
slices it into chronological window samples, and walks the training windows
in order once per epoch. Each window contributes a one-step-ahead squared
error. The adaptive and plain proximal schemes turn each window's gradient
into a parameter update; the momentum scheme instead takes a single step
per epoch on the gradient accumulated across all windows, because its
extrapolation sequence is only meaningful against a fixed objective. The
run keeps the parameters with the best validation error.

Loss accounting: every history row records the squared error and the
penalized objective averaged over the windows, each evaluated at the point
where its gradient was taken (for the momentum scheme that is the epoch's
extrapolated point, which is also where its forward passes run).
Validation error is measured once per epoch with the epoch's final
parameters.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .attention import EdgeSet
from .config import ModelConfig
from .data import (
    Dataset,
    Split,
    chronological_split,
    inverse_zscore,
    make_windows,
    train_fit_range,
    window_count,
    zscore,
)
from .model import (
    PARAM_NAMES,
    GnlModel,
    WindowSample,
    forward_window,
    mse_loss,
    predict_horizon,
)
from .optim import OptimizerState, adam_reg_step, apg_step, pg_step
from .tape import backward

# which penalty each scheme actually optimizes, for honest objective rows
REG_FOR = {"adam_pw": "l1", "adam_f": "fro", "pg": "l1", "apg": "l1"}

HISTORY_HEADER = "epoch\ttrain_objective\ttrain_mse\tval_mse"


class TrainingError(RuntimeError):
    """A run that cannot continue: non-finite loss or inconsistent setup."""


@dataclass
class EpochRecord:
    """One history row; ``val_mse`` is None when there are no val windows."""

    epoch: int
    train_objective: float
    train_mse: float
    val_mse: float | None


@dataclass
class TrainResult:
    """Trained model plus everything needed to evaluate and export it."""

    model: GnlModel
    history: list[EpochRecord]
    stats: tuple[np.ndarray, np.ndarray]
    split: Split
    samples: dict[str, list[WindowSample]]


def penalty_value(params: dict, reg: str) -> float:
    """Sparsity penalty of a parameter dict: summed absolute entries for
    ``l1``, summed per-array Frobenius norms for ``fro``."""
    if reg == "l1":
        return float(sum(np.abs(v).sum() for v in params.values()))
    if reg == "fro":
        return float(sum(np.sqrt((v * v).sum()) for v in params.values()))
    raise ValueError(f"unknown penalty {reg!r}")


def _window_grads(model: GnlModel, sample: WindowSample, forward_hook):
    fp = forward_window(model, sample.inputs)
    if forward_hook is not None:
        forward_hook(fp)
    loss = mse_loss(fp.predictions, sample.targets[0])
    grads = backward(loss)
    smooth = {name: grads.get(fp.leaves[name]) for name in PARAM_NAMES}
    return loss.item(), smooth


def mean_window_mse(model: GnlModel, samples: list[WindowSample],
                    forward_hook=None) -> float | None:
    """Average one-step squared error over samples; None when empty."""
    if not samples:
        return None
    total = 0.0
    for sample in samples:
        fp = forward_window(model, sample.inputs)
        if forward_hook is not None:
            forward_hook(fp)
        total += mse_loss(fp.predictions, sample.targets[0]).item()
    return total / len(samples)


def prepare(config: ModelConfig, dataset: Dataset):
    """Normalize, window, and split a dataset for the given config.

    Returns (samples per part, split, stats). Normalization statistics are
    fit on the rows training windows touch, never on validation or test
    rows, then applied to every row.
    """
    n_windows = window_count(dataset.n_rows, config.window, config.horizon)
    split = chronological_split(n_windows, config.horizon)
    fit = train_fit_range(split, config.window, config.horizon)
    normed, stats = zscore(dataset.values, fit, dataset.node_ids)
    samples = make_windows(normed, config.window, config.horizon, config.d_x)
    parts = {name: split.part(samples, name) for name in ("train", "val", "test")}
    return parts, split, stats


def train(config: ModelConfig, dataset: Dataset, edges: EdgeSet | None = None,
          forward_hook=None) -> TrainResult:
    """Run the epoch loop and return the best-validation model.

    ``edges`` overrides the dataset's prior edge set; with neither given
    the model considers every ordered node pair. ``forward_hook``, when
    set, receives every ForwardPass the loop produces (training and
    validation), which is how invariant checks watch a live run. With 0
    epochs the initialized model comes back untouched.
    """
    parts, split, stats = prepare(config, dataset)
    n_nodes = dataset.n_columns // config.d_x
    if edges is None:
        edges = dataset.edges
    model = GnlModel(config, n_nodes, edges)
    reg = REG_FOR[config.optimizer]
    params = {k: np.array(v) for k, v in model.parameters().items()}
    state = OptimizerState.create(config.optimizer, params, config.lr,
                                  config.beta)
    history: list[EpochRecord] = []
    best_val = None
    best_params = None

    n_train = len(parts["train"])
    for epoch in range(1, config.epochs + 1):
        if config.optimizer == "apg":
            # The momentum sequence is only meaningful against a fixed
            # objective, so the accelerated scheme takes one step per
            # epoch on the gradient accumulated over every training
            # window at the extrapolated point.
            seen = {}

            def grad_at(point):
                model.set_parameters(point)
                total = {k: np.zeros_like(v) for k, v in point.items()}
                mse_total = 0.0
                for w, sample in enumerate(parts["train"]):
                    mse_value, smooth = _window_grads(model, sample,
                                                      forward_hook)
                    if not np.isfinite(mse_value):
                        raise TrainingError(f"non-finite loss at epoch "
                                            f"{epoch}, window {w}")
                    mse_total += mse_value
                    for name in total:
                        total[name] += np.asarray(smooth[name],
                                                  dtype=np.float64)
                seen["mse"] = mse_total / n_train
                seen["point"] = point
                return {name: g / n_train for name, g in total.items()}

            new = apg_step(state, params, state.prev, grad_at)
            state.prev = params
            params = new
            model.set_parameters(params)
            obj_mean = seen["mse"] + (config.beta
                                      * penalty_value(seen["point"], reg)
                                      if config.beta > 0 else 0.0)
            mse_mean = seen["mse"]
        else:
            obj_sum = 0.0
            mse_sum = 0.0
            for w, sample in enumerate(parts["train"]):
                mse_value, smooth = _window_grads(model, sample, forward_hook)
                if config.optimizer == "pg":
                    new = pg_step(state, params, smooth)
                else:
                    new = adam_reg_step(state, params, smooth,
                                        "pw" if config.optimizer == "adam_pw"
                                        else "f")
                if not np.isfinite(mse_value):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, "
                                        f"window {w}")
                obj_sum += mse_value + (config.beta
                                        * penalty_value(params, reg)
                                        if config.beta > 0 else 0.0)
                mse_sum += mse_value
                params = new
                model.set_parameters(params)
            obj_mean = obj_sum / n_train
            mse_mean = mse_sum / n_train
        val_mse = mean_window_mse(model, parts["val"], forward_hook)
        if val_mse is not None and (best_val is None or val_mse < best_val):
            best_val = val_mse
            best_params = {k: np.array(v) for k, v in params.items()}
        history.append(EpochRecord(epoch=epoch,
                                   train_objective=obj_mean,
                                   train_mse=mse_mean,
                                   val_mse=val_mse))
    if best_params is not None:
        model.set_parameters(best_params)
    return TrainResult(model=model, history=history, stats=stats, split=split,
                       samples=parts)


def format_history(history: list[EpochRecord]) -> str:
    """Tab-separated history rows; floats keep full precision."""
    lines = [HISTORY_HEADER]
    for row in history:
        val = repr(row.val_mse) if row.val_mse is not None else "nan"
        lines.append(f"{row.epoch}\t{row.train_objective!r}"
                     f"\t{row.train_mse!r}\t{val}")
    return "\n".join(lines) + "\n"


def save_history(history: list[EpochRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_history(history))


def metrics_from_arrays(pred, truth) -> dict:
    """MAE, RMSE, and R-squared pooled over all entries of two arrays.

    R-squared is taken about the pooled truth mean and reported as None
    when the truth has zero variance.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"predictions {pred.shape} vs truth {truth.shape}")
    if pred.size == 0:
        raise ValueError("cannot compute metrics over zero entries")
    diff = pred - truth
    mae = float(np.abs(diff).mean())
    rmse = float(np.sqrt((diff * diff).mean()))
    ss_res = float((diff * diff).sum())
    ss_tot = float(((truth - truth.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else None
    return {"mae": mae, "rmse": rmse, "r2": r2}


def evaluate(model: GnlModel, samples: list[WindowSample],
             stats=None) -> dict:
    """Pooled MAE, RMSE, and R-squared over all samples and rollout steps.

    Each sample is rolled out recursively for as many steps as it has
    targets. With ``stats`` given, predictions and targets go back to
    original units first.
    """
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    preds = []
    truths = []
    for sample in samples:
        horizon = sample.targets.shape[0]
        preds.append(predict_horizon(model, sample.inputs, horizon))
        truths.append(sample.targets)
    pred = np.concatenate([p.reshape(p.shape[0], -1) for p in preds])
    truth = np.concatenate([t.reshape(t.shape[0], -1) for t in truths])
    if stats is not None:
        pred = inverse_zscore(pred, stats)
        truth = inverse_zscore(truth, stats)
    return metrics_from_arrays(pred, truth)


def format_metrics(metrics: dict) -> str:
    lines = [f"mae: {metrics['mae']!r}", f"rmse: {metrics['rmse']!r}",
             f"r2: {'undefined' if metrics['r2'] is None else repr(metrics['r2'])}"]
    return "\n".join(lines) + "\n"


def export_attention(model: GnlModel, window_inputs, out_dir,
                     node_ids=None) -> list[str]:
    """Write one influence matrix per unrolled step plus the final one.

    Files ``alpha_step1.tsv`` .. ``alpha_stepW.tsv`` and ``alpha_final.tsv``
    land in ``out_dir``: tab-separated, header row of target node ids,
    one row per source node. Returns the written paths in step order.
    """
    if model.config.aggregator != "attention":
        raise ValueError(f"aggregator {model.config.aggregator!r} does not "
                         f"infer influence matrices")
    fp = forward_window(model, window_inputs)
    if node_ids is None:
        node_ids = [f"n{i}" for i in range(model.n_nodes)]
    if len(node_ids) != model.n_nodes:
        raise ValueError(f"{len(node_ids)} node ids for {model.n_nodes} nodes")
    os.makedirs(out_dir, exist_ok=True)
    names = [f"alpha_step{s}.tsv" for s in range(1, model.config.window + 1)]
    names.append("alpha_final.tsv")
    paths = []
    for name, matrix in zip(names, fp.alphas):
        dense = matrix.values
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("source\t" + "\t".join(node_ids) + "\n")
            for j, node in enumerate(node_ids):
                fh.write(node + "\t"
                         + "\t".join(repr(float(v)) for v in dense[j]) + "\n")
        paths.append(path)
    return paths

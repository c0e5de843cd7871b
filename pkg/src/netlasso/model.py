"""Sliding-window recurrent graph model with a linear prediction head.

A forward pass unrolls the window chronologically: at each timestamp the
current hidden states are aggregated across the (inferred or given) edges,
every node takes one gated diffusive step, and after the last timestamp a
fully-connected head maps hidden states to predicted node attributes. The
per-step influence matrices are kept for export; one extra matrix is
computed from the post-update hidden states, which is the inferred link
structure accompanying the prediction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tape
from .attention import (
    AttentionParameters,
    EdgeSet,
    InfluenceMatrix,
    aggregate,
    influence_coefficients,
    influence_scores,
    init_attention_params,
)
from .config import ModelConfig
from .gdu import GduDims, GduParameters, gdu_step, glorot_uniform, init_gdu_params
from .tape import ConfigError, ShapeError, Tape, Tensor

PARAM_NAMES = (
    "gdu.forget", "gdu.evolve", "gdu.candidate", "gdu.select_agg",
    "gdu.select_hidden", "att.project", "att.score", "fc.weight", "fc.bias",
)

CHECKPOINT_FORMAT = "netlasso-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class WindowSample:
    """One training sample: ``window`` input steps and the following targets.

    ``inputs`` has shape (window, N, d_x); ``targets`` (horizon, N, d_x).
    """

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 3 or self.targets.ndim != 3:
            raise ShapeError(f"samples need (steps, nodes, features) arrays, got "
                             f"{self.inputs.shape} and {self.targets.shape}")
        if self.inputs.shape[0] < 1 or self.targets.shape[0] < 1:
            raise ShapeError("need at least one input and one target step")
        if self.inputs.shape[1:] != self.targets.shape[1:]:
            raise ShapeError(f"inputs {self.inputs.shape} and targets "
                             f"{self.targets.shape} disagree on nodes/features")
        if not (np.isfinite(self.inputs).all() and np.isfinite(self.targets).all()):
            raise ValueError("samples must not contain missing values")


@dataclass
class ForwardPass:
    """Traced results of one window: final states, predictions, link history."""

    tape: Tape
    leaves: dict[str, Tensor]
    hidden: Tensor
    predictions: Tensor
    alphas: list[InfluenceMatrix]


class GnlModel:
    """Recurrent graph regressor over a fixed node set.

    Trainable arrays are the five gate matrices, the two attention arrays,
    and the head weight/bias. The initial hidden states are drawn once from
    a standard normal and held constant through training.
    """

    def __init__(self, config: ModelConfig, n_nodes: int,
                 edges: EdgeSet | None = None):
        if not isinstance(n_nodes, int) or n_nodes < 1:
            raise ConfigError(f"n_nodes must be a positive integer, got {n_nodes!r}")
        if edges is not None and edges.n_nodes != n_nodes:
            raise ConfigError(f"edge set covers {edges.n_nodes} nodes, model "
                              f"has {n_nodes}")
        self.config = config
        self.n_nodes = n_nodes
        self.dims = GduDims(config.d_x, config.d_h, config.d_a)
        self.edges = edges if edges is not None else EdgeSet.complete(n_nodes)
        self.gdu = init_gdu_params(self.dims, config.seed)
        self.att = init_attention_params(self.dims, config.seed + 1)
        rng = np.random.default_rng(config.seed + 2)
        self.fc_weight = glorot_uniform(rng, (config.d_x, config.d_h))
        self.fc_bias = np.zeros(config.d_x)
        self.h0 = np.random.default_rng(config.seed + 3).normal(
            size=(n_nodes, config.d_h))

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays in fixed order (h0 is constant, not included)."""
        return {
            "gdu.forget": self.gdu.forget,
            "gdu.evolve": self.gdu.evolve,
            "gdu.candidate": self.gdu.candidate,
            "gdu.select_agg": self.gdu.select_agg,
            "gdu.select_hidden": self.gdu.select_hidden,
            "att.project": self.att.project,
            "att.score": self.att.score,
            "fc.weight": self.fc_weight,
            "fc.bias": self.fc_bias,
        }

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        current = self.parameters()
        if set(values) != set(PARAM_NAMES):
            raise ConfigError(f"expected parameters {sorted(PARAM_NAMES)}, "
                              f"got {sorted(values)}")
        for name, arr in values.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != current[name].shape:
                raise ShapeError(f"parameter {name} has shape {arr.shape}, "
                                 f"expected {current[name].shape}")
        self.gdu.forget = np.asarray(values["gdu.forget"], dtype=np.float64)
        self.gdu.evolve = np.asarray(values["gdu.evolve"], dtype=np.float64)
        self.gdu.candidate = np.asarray(values["gdu.candidate"], dtype=np.float64)
        self.gdu.select_agg = np.asarray(values["gdu.select_agg"], dtype=np.float64)
        self.gdu.select_hidden = np.asarray(values["gdu.select_hidden"],
                                            dtype=np.float64)
        self.att.project = np.asarray(values["att.project"], dtype=np.float64)
        self.att.score = np.asarray(values["att.score"], dtype=np.float64)
        self.fc_weight = np.asarray(values["fc.weight"], dtype=np.float64)
        self.fc_bias = np.asarray(values["fc.bias"], dtype=np.float64)


def _trace_parameters(model: GnlModel, t: Tape):
    leaves = {name: t.leaf(arr) for name, arr in model.parameters().items()}
    gdu = GduParameters(forget=leaves["gdu.forget"], evolve=leaves["gdu.evolve"],
                        candidate=leaves["gdu.candidate"],
                        select_agg=leaves["gdu.select_agg"],
                        select_hidden=leaves["gdu.select_hidden"])
    att = AttentionParameters(project=leaves["att.project"],
                              score=leaves["att.score"])
    return leaves, gdu, att


def _aggregate_step(H, model: GnlModel, att: AttentionParameters):
    """One aggregation under the configured variant; returns (Z, alpha)."""
    cfg = model.config
    if cfg.aggregator == "none":
        return aggregate(H, None, att, "none"), None
    if cfg.aggregator == "fixed_mean":
        return aggregate(H, model.edges, att, "fixed_mean"), None
    if model.edges.n_edges == 0:
        influence = InfluenceMatrix(Tensor(np.zeros(0)), model.edges)
    else:
        scores = influence_scores(H, model.edges, att, cfg.slope)
        influence = influence_coefficients(scores, model.edges, cfg.score_norm)
    return aggregate(H, influence, att, "attention"), influence


def forward_window(model: GnlModel, window_inputs) -> ForwardPass:
    """Unroll one window and predict the next attribute values.

    ``window_inputs`` has shape (window, N, d_x). The returned alpha history
    holds one influence matrix per unrolled step plus a final one computed
    from the post-update hidden states (empty list for the non-attention
    aggregators).
    """
    inputs = np.asarray(window_inputs, dtype=np.float64)
    cfg = model.config
    want = (cfg.window, model.n_nodes, cfg.d_x)
    if inputs.shape != want:
        raise ShapeError(f"window inputs have shape {inputs.shape}, "
                         f"expected {want}")
    t = Tape()
    leaves, gdu, att = _trace_parameters(model, t)
    H = Tensor(model.h0)
    alphas: list[InfluenceMatrix] = []
    for step in range(cfg.window):
        Z, influence = _aggregate_step(H, model, att)
        if influence is not None:
            alphas.append(influence)
        H = gdu_step(Tensor(inputs[step]), H, Z, gdu)
    preds = tape.add_rowvec(tape.linear(H, leaves["fc.weight"]),
                            leaves["fc.bias"])
    if cfg.aggregator == "attention":
        _, final_influence = _aggregate_step(H, model, att)
        alphas.append(final_influence)
    return ForwardPass(tape=t, leaves=leaves, hidden=H, predictions=preds,
                       alphas=alphas)


def predict_horizon(model: GnlModel, window_inputs, horizon: int) -> np.ndarray:
    """Recursive rollout: feed each prediction back as the newest input.

    Returns an array (horizon, N, d_x) of successive predictions.
    """
    if not isinstance(horizon, int) or horizon < 1:
        raise ValueError(f"horizon must be a positive integer, got {horizon!r}")
    current = np.array(window_inputs, dtype=np.float64)
    out = []
    for _ in range(horizon):
        pred = forward_window(model, current).predictions.values
        out.append(pred)
        current = np.concatenate([current[1:], pred[None]], axis=0)
    return np.stack(out)


def mse_loss(predictions, targets) -> Tensor:
    """Mean over nodes of the squared L2 error of each node's prediction."""
    pv = predictions.values if isinstance(predictions, Tensor) else np.asarray(predictions)
    tv = targets.values if isinstance(targets, Tensor) else np.asarray(targets)
    if pv.shape != tv.shape:
        raise ShapeError(f"predictions {pv.shape} vs targets {tv.shape}")
    n_nodes = pv.shape[0]
    return tape.scale(tape.sumsq(tape.sub(predictions, targets)), 1.0 / n_nodes)


def objective(loss, leaves, beta: float, reg: str) -> Tensor:
    """Training objective: loss plus beta times the chosen penalty.

    The penalty sums over every trainable array (bias included): absolute
    entries for ``l1``, per-array Frobenius norms for ``fro``. ``none`` or
    beta = 0 return the loss untouched.
    """
    if reg not in ("l1", "fro", "none"):
        raise ValueError(f"unknown regularizer {reg!r}")
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if reg == "none" or beta == 0.0:
        return loss
    tensors = list(leaves.values()) if isinstance(leaves, dict) else list(leaves)
    penalty = None
    for tensor in tensors:
        term = tape.l1_penalty(tensor) if reg == "l1" else tape.fro_penalty(tensor)
        penalty = term if penalty is None else tape.add(penalty, term)
    return tape.add(loss, tape.scale(penalty, beta))


class LazyGradients:
    """Gradient mapping that runs the backward pass on first access.

    Finite-difference checking re-evaluates the objective hundreds of times
    but reads gradients from just one evaluation; deferring the backward
    pass keeps those probes at forward cost.
    """

    def __init__(self, total: Tensor, leaves: dict[str, Tensor]):
        self._total = total
        self._leaves = leaves
        self._grads = None

    def __getitem__(self, name: str) -> np.ndarray:
        if self._grads is None:
            grads = tape.backward(self._total)
            self._grads = {k: grads.get(v) for k, v in self._leaves.items()}
        return self._grads[name]


def traced_objective(model: GnlModel, inputs, target, beta: float, reg: str):
    """Objective closure for gradient checking: params -> (value, grads)."""
    def fn(params):
        model.set_parameters(params)
        fp = forward_window(model, inputs)
        total = objective(mse_loss(fp.predictions, target), fp.leaves,
                          beta, reg)
        return total, LazyGradients(total, fp.leaves)
    return fn


def save_checkpoint(model: GnlModel, path, node_ids=None, stats=None) -> None:
    """Write a versioned JSON checkpoint; byte-identical for equal models."""
    complete = model.edges.pairs() == EdgeSet.complete(model.n_nodes).pairs()
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "n_nodes": model.n_nodes,
        "edges": ({"kind": "complete"} if complete
                  else {"kind": "pairs", "pairs": model.edges.pairs()}),
        "h0": model.h0.tolist(),
        "params": {k: v.tolist() for k, v in model.parameters().items()},
        "node_ids": list(node_ids) if node_ids is not None else None,
        "stats": ({"mean": np.asarray(stats[0]).tolist(),
                   "std": np.asarray(stats[1]).tolist()}
                  if stats is not None else None),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path):
    """Read a checkpoint; returns (model, node_ids, stats)."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a model checkpoint: {path}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version "
                         f"{payload.get('version')!r}")
    config = ModelConfig(**payload["config"])
    n_nodes = payload["n_nodes"]
    if payload["edges"]["kind"] == "complete":
        edges = EdgeSet.complete(n_nodes)
    else:
        edges = EdgeSet(n_nodes, [tuple(p) for p in payload["edges"]["pairs"]])
    model = GnlModel(config, n_nodes, edges)
    model.h0 = np.asarray(payload["h0"], dtype=np.float64)
    model.set_parameters({k: np.asarray(v, dtype=np.float64)
                          for k, v in payload["params"].items()})
    node_ids = payload.get("node_ids")
    stats = payload.get("stats")
    if stats is not None:
        stats = (np.asarray(stats["mean"], dtype=np.float64),
                 np.asarray(stats["std"], dtype=np.float64))
    return model, node_ids, stats

"""Dense reverse-mode differentiation on numpy float64 arrays.

A ``Tape`` records every primitive applied to traced tensors; ``backward``
replays the records in reverse to accumulate vector-Jacobian products.
Tensors without a tape handle are constants and never receive gradients.
Tapes are single-threaded; a fresh tape is built for every forward pass.
All reductions use a fixed summation order so results are bit-deterministic
for identical inputs.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class ConfigError(ValueError):
    """A structural configuration (variant, edge set, dims) is inconsistent."""


class EvaluationError(RuntimeError):
    """An objective produced a non-finite value during gradient checking."""


def _asarray(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.values
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A dense float64 array, optionally attached to a tape node."""

    __slots__ = ("values", "tape", "node")

    def __init__(self, values, tape: "Tape | None" = None, node: int | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        tag = "const" if self.node is None else f"node {self.node}"
        return f"Tensor({self.values!r}, {tag})"


class Tape:
    """Append-only record of primitives; inputs always precede their node."""

    def __init__(self):
        # one entry per node: tuple of (parent_node_id, vjp) pairs
        self._parents: list[tuple] = []

    def __len__(self) -> int:
        return len(self._parents)

    def leaf(self, values) -> Tensor:
        """Register an array as a watched leaf (parameter or input)."""
        self._parents.append(())
        return Tensor(values, self, len(self._parents) - 1)

    def _record(self, values: np.ndarray, parents) -> Tensor:
        self._parents.append(tuple(parents))
        return Tensor(values, self, len(self._parents) - 1)


def _tape_of(*tensors) -> Tape | None:
    tape = None
    for t in tensors:
        if isinstance(t, Tensor) and t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ValueError("operands recorded on different tapes")
    return tape


def _emit(tape: Tape | None, values: np.ndarray, parents) -> Tensor:
    live = [(t.node, vjp) for t, vjp in parents
            if isinstance(t, Tensor) and t.node is not None]
    if tape is None or not live:
        return Tensor(values)
    return tape._record(values, live)


class Gradients:
    """Result of ``backward``: per-leaf gradients, zeros where unreached."""

    def __init__(self, per_node: dict[int, np.ndarray] | None):
        self._per_node = per_node or {}

    def get(self, tensor: Tensor) -> np.ndarray:
        if tensor.node is None:
            raise ValueError("tensor is a constant, not a tape leaf")
        g = self._per_node.get(tensor.node)
        if g is None:
            return np.zeros_like(tensor.values)
        return g

    __getitem__ = get


def backward(loss: Tensor) -> Gradients:
    """Accumulate gradients of a scalar loss w.r.t. every recorded node.

    Multi-use nodes sum their contributions. A constant loss yields an
    empty gradient map (every leaf reads as zero).
    """
    if loss.values.ndim != 0:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.values.shape}")
    if loss.node is None:
        return Gradients(None)
    tape = loss.tape
    grads: list[np.ndarray | None] = [None] * len(tape._parents)
    grads[loss.node] = np.ones(())
    for nid in range(loss.node, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        for pid, vjp in tape._parents[nid]:
            contrib = vjp(g)
            prev = grads[pid]
            grads[pid] = contrib if prev is None else prev + contrib
    return Gradients({i: g for i, g in enumerate(grads) if g is not None})


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def _binary_shapes(a, b, name):
    av, bv = _asarray(a), _asarray(b)
    if av.shape != bv.shape and av.ndim != 0 and bv.ndim != 0:
        raise ShapeError(f"{name}: shapes {av.shape} and {bv.shape} differ")
    return av, bv


def _scalar_vjp(operand_values, vjp):
    # broadcasting a 0-d operand against an array: fold the grad back down
    if operand_values.ndim == 0:
        return lambda g: np.sum(vjp(g))
    return vjp


def add(a, b) -> Tensor:
    av, bv = _binary_shapes(a, b, "add")
    return _emit(_tape_of(a, b), av + bv, [
        (a, _scalar_vjp(av, lambda g: g)),
        (b, _scalar_vjp(bv, lambda g: g)),
    ])


def sub(a, b) -> Tensor:
    av, bv = _binary_shapes(a, b, "sub")
    return _emit(_tape_of(a, b), av - bv, [
        (a, _scalar_vjp(av, lambda g: g)),
        (b, _scalar_vjp(bv, lambda g: -g)),
    ])


def hadamard(a, b) -> Tensor:
    """Componentwise product of equal-shape arrays."""
    av, bv = _binary_shapes(a, b, "hadamard")
    return _emit(_tape_of(a, b), av * bv, [
        (a, _scalar_vjp(av, lambda g: g * bv)),
        (b, _scalar_vjp(bv, lambda g: g * av)),
    ])


mul = hadamard


def scale(x, c: float) -> Tensor:
    """Multiply by a plain (untraced) scalar."""
    xv = _asarray(x)
    c = float(c)
    return _emit(_tape_of(x), xv * c, [(x, lambda g: g * c)])


def one_minus(x) -> Tensor:
    return sub(1.0, x)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, x) -> Tensor:
    """Matrix-vector product: (m, n) @ (n,) -> (m,)."""
    av, xv = _asarray(a), _asarray(x)
    if av.ndim != 2 or xv.ndim != 1 or av.shape[1] != xv.shape[0]:
        raise ShapeError(f"matmul: matrix {av.shape} does not apply to vector {xv.shape}")
    return _emit(_tape_of(a, x), av @ xv, [
        (a, lambda g: np.outer(g, xv)),
        (x, lambda g: av.T @ g),
    ])


def linear(x, w) -> Tensor:
    """Row-stacked matrix-vector products: (n, k) @ (m, k)^T -> (n, m)."""
    xv, wv = _asarray(x), _asarray(w)
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[1]:
        raise ShapeError(f"linear: rows {xv.shape} do not match weight {wv.shape}")
    return _emit(_tape_of(x, w), xv @ wv.T, [
        (x, lambda g: g @ wv),
        (w, lambda g: g.T @ xv),
    ])


def add_rowvec(x, v) -> Tensor:
    """Add a length-d vector to every row of an (n, d) array."""
    xv, vv = _asarray(x), _asarray(v)
    if xv.ndim != 2 or vv.ndim != 1 or xv.shape[1] != vv.shape[0]:
        raise ShapeError(f"add_rowvec: rows {xv.shape} vs vector {vv.shape}")
    return _emit(_tape_of(x, v), xv + vv, [
        (x, lambda g: g),
        (v, lambda g: g.sum(axis=0)),
    ])


def dot(a, b) -> Tensor:
    av, bv = _asarray(a), _asarray(b)
    if av.ndim != 1 or bv.ndim != 1 or av.shape != bv.shape:
        raise ShapeError(f"dot: vectors {av.shape} and {bv.shape} differ")
    return _emit(_tape_of(a, b), np.asarray(av @ bv), [
        (a, lambda g: g * bv),
        (b, lambda g: g * av),
    ])


# ---------------------------------------------------------------------------
# structure: concatenation, slicing, gather/scatter
# ---------------------------------------------------------------------------

def concat(parts) -> Tensor:
    """Concatenate 1-D vectors in order."""
    parts = list(parts)
    if not parts:
        raise ValueError("concat: need at least one part")
    vals = [_asarray(p) for p in parts]
    for v in vals:
        if v.ndim != 1:
            raise ShapeError(f"concat: parts must be vectors, got shape {v.shape}")
    offsets = np.cumsum([0] + [v.shape[0] for v in vals])
    parents = []
    for i, p in enumerate(parts):
        lo, hi = int(offsets[i]), int(offsets[i + 1])
        parents.append((p, lambda g, lo=lo, hi=hi: g[lo:hi]))
    return _emit(_tape_of(*parts), np.concatenate(vals), parents)


def hcat(parts) -> Tensor:
    """Concatenate 2-D blocks along columns (same row count)."""
    parts = list(parts)
    if not parts:
        raise ValueError("hcat: need at least one part")
    vals = [_asarray(p) for p in parts]
    rows = vals[0].shape[0]
    for v in vals:
        if v.ndim != 2 or v.shape[0] != rows:
            raise ShapeError(f"hcat: expected 2-D with {rows} rows, got {v.shape}")
    offsets = np.cumsum([0] + [v.shape[1] for v in vals])
    parents = []
    for i, p in enumerate(parts):
        lo, hi = int(offsets[i]), int(offsets[i + 1])
        parents.append((p, lambda g, lo=lo, hi=hi: g[:, lo:hi]))
    return _emit(_tape_of(*parts), np.concatenate(vals, axis=1), parents)


def narrow(x, start: int, stop: int) -> Tensor:
    """Slice a 1-D vector; gradient scatters back into place."""
    xv = _asarray(x)
    if xv.ndim != 1:
        raise ShapeError(f"narrow: expected vector, got {xv.shape}")
    if not (0 <= start <= stop <= xv.shape[0]):
        raise ValueError(f"narrow: bounds [{start}, {stop}) outside length {xv.shape[0]}")

    def vjp(g):
        out = np.zeros_like(xv)
        out[start:stop] = g
        return out

    return _emit(_tape_of(x), xv[start:stop].copy(), [(x, vjp)])


def reshape(x, shape) -> Tensor:
    xv = _asarray(x)
    out = xv.reshape(shape)
    return _emit(_tape_of(x), out, [(x, lambda g: g.reshape(xv.shape))])


def gather(x, idx) -> Tensor:
    """Select rows (axis 0) by index array; gradient scatter-adds."""
    xv = _asarray(x)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= xv.shape[0]):
        raise IndexError(f"gather: index out of range for {xv.shape[0]} rows")

    def vjp(g):
        out = np.zeros_like(xv)
        np.add.at(out, idx, g)
        return out

    return _emit(_tape_of(x), xv[idx], [(x, vjp)])


def scatter_sum(x, idx, n: int) -> Tensor:
    """Sum rows of ``x`` into ``n`` bins given by ``idx`` (axis 0)."""
    xv = _asarray(x)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.shape[0] != xv.shape[0]:
        raise ShapeError(f"scatter_sum: {idx.shape[0]} indices for {xv.shape[0]} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"scatter_sum: index out of range for {n} bins")
    out = np.zeros((n,) + xv.shape[1:], dtype=np.float64)
    np.add.at(out, idx, xv)
    return _emit(_tape_of(x), out, [(x, lambda g: g[idx])])


def mul_rows(x, s) -> Tensor:
    """Scale each row of (n, d) ``x`` by the matching entry of (n,) ``s``."""
    xv, sv = _asarray(x), _asarray(s)
    if xv.ndim != 2 or sv.ndim != 1 or xv.shape[0] != sv.shape[0]:
        raise ShapeError(f"mul_rows: rows {xv.shape} vs scales {sv.shape}")
    return _emit(_tape_of(x, s), xv * sv[:, None], [
        (x, lambda g: g * sv[:, None]),
        (s, lambda g: (g * xv).sum(axis=1)),
    ])


def scale_rows(x, v) -> Tensor:
    """Scale each row of ``x`` by an untraced constant vector ``v``."""
    xv = _asarray(x)
    vv = np.asarray(v, dtype=np.float64)
    if xv.ndim != 2 or vv.ndim != 1 or xv.shape[0] != vv.shape[0]:
        raise ShapeError(f"scale_rows: rows {xv.shape} vs scales {vv.shape}")
    return _emit(_tape_of(x), xv * vv[:, None], [(x, lambda g: g * vv[:, None])])


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    xv = _asarray(x)
    sv = _stable_sigmoid(np.atleast_1d(xv)).reshape(xv.shape)
    return _emit(_tape_of(x), sv, [(x, lambda g: g * sv * (1.0 - sv))])


def tanh(x) -> Tensor:
    xv = _asarray(x)
    tv = np.tanh(xv)
    return _emit(_tape_of(x), tv, [(x, lambda g: g * (1.0 - tv * tv))])


def leaky_relu(x, slope: float) -> Tensor:
    """x for x >= 0, slope * x otherwise."""
    if not slope > 0:
        raise ValueError(f"leaky_relu: slope must be positive, got {slope}")
    xv = _asarray(x)
    factor = np.where(xv >= 0, 1.0, float(slope))
    return _emit(_tape_of(x), xv * factor, [(x, lambda g: g * factor)])


def activation(kind: str, x, slope: float | None = None) -> Tensor:
    """Dispatch by name: ``sigmoid``, ``tanh`` or ``leaky_relu``."""
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "leaky_relu":
        if slope is None:
            raise ValueError("leaky_relu requires a slope")
        return leaky_relu(x, slope)
    raise ValueError(f"unknown activation kind: {kind!r}")


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------

def masked_softmax(scores) -> Tensor:
    """Softmax over a nonempty index set, computed with max-subtraction.

    Outputs are strictly positive and sum to one.
    """
    sv = _asarray(scores)
    if sv.ndim != 1 or sv.shape[0] == 0:
        raise ValueError(f"masked_softmax: need a nonempty vector, got shape {sv.shape}")
    ex = np.exp(sv - sv.max())
    w = ex / ex.sum()

    def vjp(g):
        return w * (g - (g * w).sum())

    return _emit(_tape_of(scores), w, [(scores, vjp)])


def segment_softmax(scores, segment_ids, n_segments: int) -> Tensor:
    """Independent softmax within each contiguous segment.

    ``segment_ids`` must be sorted ascending; empty segments simply
    contribute no entries. Each segment is normalized with its own
    max-subtraction, so per-segment weights are positive and sum to one.
    """
    sv = _asarray(scores)
    ids = np.asarray(segment_ids, dtype=np.intp)
    if sv.ndim != 1 or ids.shape != sv.shape:
        raise ShapeError(f"segment_softmax: scores {sv.shape} vs ids {ids.shape}")
    if ids.size and np.any(np.diff(ids) < 0):
        raise ValueError("segment_softmax: segment ids must be sorted ascending")
    if ids.size and (ids.min() < 0 or ids.max() >= n_segments):
        raise IndexError(f"segment_softmax: segment id out of range for {n_segments}")
    counts = np.bincount(ids, minlength=n_segments)
    starts_all = np.concatenate([[0], np.cumsum(counts)[:-1]])
    starts = starts_all[counts > 0].astype(np.intp)
    if starts.size == 0:
        raise ValueError("segment_softmax: no entries in any segment")
    seg_max = np.maximum.reduceat(sv, starts)
    per_edge_max = np.repeat(seg_max, counts[counts > 0])
    ex = np.exp(sv - per_edge_max)
    denom = np.repeat(np.add.reduceat(ex, starts), counts[counts > 0])
    w = ex / denom

    def vjp(g):
        seg_dot = np.repeat(np.add.reduceat(g * w, starts), counts[counts > 0])
        return w * (g - seg_dot)

    return _emit(_tape_of(scores), w, [(scores, vjp)])


# ---------------------------------------------------------------------------
# reductions and penalties
# ---------------------------------------------------------------------------

def reduce_sum(x) -> Tensor:
    xv = _asarray(x)
    return _emit(_tape_of(x), np.asarray(xv.sum()), [(x, lambda g: g * np.ones_like(xv))])


def sumsq(x) -> Tensor:
    """Sum of squared entries."""
    xv = _asarray(x)
    return _emit(_tape_of(x), np.asarray((xv * xv).sum()), [(x, lambda g: g * 2.0 * xv)])


def l1_penalty(x) -> Tensor:
    """Sum of absolute entries; backward uses the sign, zero at zero."""
    xv = _asarray(x)
    return _emit(_tape_of(x), np.asarray(np.abs(xv).sum()), [(x, lambda g: g * np.sign(xv))])


def fro_penalty(x, eps: float = 1e-12) -> Tensor:
    """Frobenius norm of an array, with an epsilon guard at the origin."""
    if not eps > 0:
        raise ValueError(f"fro_penalty: eps must be positive, got {eps}")
    xv = _asarray(x)
    norm = float(np.sqrt((xv * xv).sum()))
    return _emit(_tape_of(x), np.asarray(norm), [(x, lambda g: g * xv / max(norm, eps))])


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(objective, params: dict[str, np.ndarray], eps: float = 1e-6) -> float:
    """Compare analytic gradients against central finite differences.

    ``objective(params)`` must return ``(value, grads)`` where ``grads``
    maps each parameter name to an array shaped like the parameter. The
    perturbed re-evaluations only use the value. Returns the maximum over
    all components of ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not eps > 0:
        raise ValueError(f"grad_check: eps must be positive, got {eps}")

    def value_at(p):
        v, _ = objective(p)
        v = float(v.values) if isinstance(v, Tensor) else float(v)
        if not np.isfinite(v):
            raise EvaluationError(f"objective returned non-finite value {v}")
        return v

    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, analytic = objective(base)
    worst = 0.0
    for name, theta in base.items():
        grad = np.asarray(analytic[name], dtype=np.float64)
        if grad.shape != theta.shape:
            raise ShapeError(f"grad_check: gradient for {name!r} has shape "
                             f"{grad.shape}, expected {theta.shape}")
        flat = theta.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = value_at(base)
            flat[i] = keep - eps
            lo = value_at(base)
            flat[i] = keep
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            if err > worst:
                worst = err
    return worst

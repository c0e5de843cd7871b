"""Gated diffusive state update for one node (or a batch of nodes).

Each step mixes three inputs: the node's raw features ``x``, an aggregated
neighborhood vector ``z``, and the previous hidden state ``h``. A forget
gate masks ``z``, an evolve gate masks ``h``, and two selection gates blend
the four candidate states built from the masked/unmasked combinations. The
gate products form a partition of unity, so the update is always a convex
combination of tanh outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tape
from .tape import ConfigError, ShapeError, Tensor


@dataclass(frozen=True)
class GduDims:
    """Width of the raw input, hidden state, and aggregated vector."""

    d_x: int
    d_h: int
    d_a: int

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{f.name} must be a positive integer, got {v!r}")

    @property
    def concat_width(self) -> int:
        """Width of the stacked gate input [x | z | h]."""
        return self.d_x + self.d_a + self.d_h


def weight_shapes(dims: GduDims) -> dict[str, tuple[int, int]]:
    """Expected shape of each gate matrix for the given dims."""
    w = dims.concat_width
    return {
        "forget": (dims.d_a, w),
        "evolve": (dims.d_h, w),
        "candidate": (dims.d_h, w),
        "select_agg": (dims.d_h, w),
        "select_hidden": (dims.d_h, w),
    }


@dataclass
class GduParameters:
    """The five gate matrices, all sharing input width d_x + d_a + d_h.

    ``forget`` masks the aggregated vector, ``evolve`` masks the hidden
    state, ``candidate`` produces the branch states, and the two selection
    matrices gate which masked/raw combination each hidden unit follows.
    """

    forget: np.ndarray
    evolve: np.ndarray
    candidate: np.ndarray
    select_agg: np.ndarray
    select_hidden: np.ndarray

    def items(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    def copy(self) -> "GduParameters":
        return GduParameters(**{k: np.array(v) for k, v in self.items()})


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    """Uniform on [-s, s] with s = sqrt(6 / (fan_in + fan_out))."""
    fan_out, fan_in = shape
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_gdu_params(dims: GduDims, seed: int) -> GduParameters:
    """Draw the five matrices in declaration order from one seeded stream."""
    rng = np.random.default_rng(seed)
    shapes = weight_shapes(dims)
    return GduParameters(**{name: glorot_uniform(rng, shp)
                            for name, shp in shapes.items()})


def _width(v) -> int:
    arr = v.values if isinstance(v, Tensor) else np.asarray(v)
    return arr.shape[-1]


def _ndim(v) -> int:
    arr = v.values if isinstance(v, Tensor) else np.asarray(v)
    return arr.ndim


def _check_weights(weights, d_x: int, d_a: int, d_h: int) -> None:
    expected = weight_shapes(GduDims(d_x, d_h, d_a))
    for name, want in expected.items():
        w = getattr(weights, name)
        got = (w.values if isinstance(w, Tensor) else np.asarray(w)).shape
        if tuple(got) != want:
            raise ShapeError(f"{name} weight has shape {got}, expected {want} "
                             f"for dims (d_x={d_x}, d_h={d_h}, d_a={d_a})")


def gdu_step(x, h, z, weights):
    """One gated diffusive update; returns the next hidden state.

    ``x``, ``h``, ``z`` are either single vectors (d_x,), (d_h,), (d_a,) or
    row batches (N, d_x), (N, d_h), (N, d_a) updated independently per row.
    ``weights`` is any object exposing the five gate matrices (arrays or
    traced tensors). The result is recorded on the operands' tape.
    """
    ndims = {_ndim(x), _ndim(h), _ndim(z)}
    if ndims - {1, 2} or len(ndims) != 1:
        raise ShapeError(f"x, h, z must all be vectors or all row batches, "
                         f"got ndims {sorted(_ndim(v) for v in (x, h, z))}")
    single = ndims == {1}
    d_x, d_a, d_h = _width(x), _width(z), _width(h)
    _check_weights(weights, d_x, d_a, d_h)
    if single:
        x = tape.reshape(x, (1, d_x))
        z = tape.reshape(z, (1, d_a))
        h = tape.reshape(h, (1, d_h))

    gate_in = tape.hcat([x, z, h])
    f = tape.sigmoid(tape.linear(gate_in, weights.forget))
    e = tape.sigmoid(tape.linear(gate_in, weights.evolve))
    g = tape.sigmoid(tape.linear(gate_in, weights.select_agg))
    r = tape.sigmoid(tape.linear(gate_in, weights.select_hidden))

    z_masked = tape.hadamard(f, z)
    h_masked = tape.hadamard(e, h)

    def branch(zv, hv):
        return tape.tanh(tape.linear(tape.hcat([x, zv, hv]), weights.candidate))

    not_g = tape.one_minus(g)
    not_r = tape.one_minus(r)
    mixed = tape.add(
        tape.add(
            tape.add(
                tape.hadamard(tape.hadamard(g, r), branch(z_masked, h_masked)),
                tape.hadamard(tape.hadamard(not_g, r), branch(z, h_masked))),
            tape.hadamard(tape.hadamard(g, not_r), branch(z_masked, h))),
        tape.hadamard(tape.hadamard(not_g, not_r), branch(z, h)))

    if single:
        return tape.reshape(mixed, (d_h,))
    return mixed

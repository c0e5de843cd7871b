"""Pairwise influence inference and neighborhood aggregation.

Hidden states are projected into the aggregation space, scored per directed
edge with a shared scoring vector, normalized by softmax, and the weighted
projections are summed into each target node. When no prior graph is given
the edge set is complete (without self-loops) and the normalized scores are
the inferred link strengths. Two ablation aggregators are provided: ``none``
passes hidden states through untouched, ``fixed_mean`` replaces learned
weights with a plain neighborhood average.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tape
from .gdu import GduDims, glorot_uniform
from .tape import ConfigError, ShapeError, Tensor

AGGREGATOR_VARIANTS = ("attention", "none", "fixed_mean")
NORMALIZATIONS = ("per_source_out", "per_target_in")


@dataclass
class AttentionParameters:
    """Projection into the aggregation space plus the edge scoring vector.

    ``project`` is d_a x d_h; ``score`` has length 2 * d_a and is applied to
    the concatenated projections of an edge's source and target.
    """

    project: np.ndarray
    score: np.ndarray

    def items(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    def copy(self) -> "AttentionParameters":
        return AttentionParameters(**{k: np.array(v) for k, v in self.items()})


def init_attention_params(dims: GduDims, seed: int) -> AttentionParameters:
    rng = np.random.default_rng(seed)
    project = glorot_uniform(rng, (dims.d_a, dims.d_h))
    s = np.sqrt(6.0 / (2 * dims.d_a + 1))
    score = rng.uniform(-s, s, size=2 * dims.d_a)
    return AttentionParameters(project=project, score=score)


class EdgeSet:
    """Directed influence edges (source, target) over ``n_nodes`` nodes.

    Edges are stored deduplicated in source-major order; the target-major
    permutation is precomputed for the alternative normalization. Self-loops
    are rejected unless explicitly allowed.
    """

    def __init__(self, n_nodes: int, pairs, allow_self_loops: bool = False):
        if not isinstance(n_nodes, int) or n_nodes <= 0:
            raise ConfigError(f"n_nodes must be a positive integer, got {n_nodes!r}")
        seen = set()
        src, dst = [], []
        for pair in pairs:
            j, i = int(pair[0]), int(pair[1])
            if not (0 <= j < n_nodes and 0 <= i < n_nodes):
                raise ConfigError(f"edge ({j}, {i}) references a node outside "
                                  f"0..{n_nodes - 1}")
            if j == i and not allow_self_loops:
                raise ConfigError(f"self-loop ({j}, {i}) not allowed")
            if (j, i) in seen:
                raise ConfigError(f"duplicate edge ({j}, {i})")
            seen.add((j, i))
            src.append(j)
            dst.append(i)
        order = np.lexsort((dst, src)) if src else np.zeros(0, dtype=np.intp)
        self.n_nodes = n_nodes
        self.src = np.asarray(src, dtype=np.intp)[order]
        self.dst = np.asarray(dst, dtype=np.intp)[order]
        # permutation into target-major order and its inverse
        self._by_target = np.lexsort((self.src, self.dst))
        self._from_target = np.empty_like(self._by_target)
        self._from_target[self._by_target] = np.arange(self.n_edges, dtype=np.intp)

    @classmethod
    def complete(cls, n_nodes: int, self_loops: bool = False) -> "EdgeSet":
        """All ordered pairs; self-loops only when requested."""
        pairs = [(j, i) for j in range(n_nodes) for i in range(n_nodes)
                 if self_loops or j != i]
        return cls(n_nodes, pairs, allow_self_loops=self_loops)

    @classmethod
    def from_pairs(cls, n_nodes: int, pairs, bidirectional: bool = False,
                   allow_self_loops: bool = False) -> "EdgeSet":
        """Build from explicit pairs, optionally closed under reversal."""
        uniq = {(int(j), int(i)) for j, i in pairs}
        if bidirectional:
            uniq |= {(i, j) for j, i in uniq}
        return cls(n_nodes, sorted(uniq), allow_self_loops=allow_self_loops)

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    @property
    def is_symmetric(self) -> bool:
        pairs = set(zip(self.src.tolist(), self.dst.tolist()))
        return all((i, j) in pairs for j, i in pairs)

    def out_neighbors(self, j: int) -> np.ndarray:
        return self.dst[self.src == j]

    def in_neighbors(self, i: int) -> np.ndarray:
        return self.src[self.dst == i]

    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_nodes)

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.src.tolist(), self.dst.tolist()))


class InfluenceMatrix:
    """Normalized edge coefficients, viewable as a dense N x N array.

    ``coeffs`` keeps the tape-recorded per-edge vector (source-major order)
    so gradients flow; ``values`` materializes the detached dense matrix
    with alpha[j, i] for edge (j, i) and zeros off the support.
    """

    def __init__(self, coeffs: Tensor, edges: EdgeSet):
        self.coeffs = coeffs
        self.edges = edges

    @property
    def values(self) -> np.ndarray:
        dense = np.zeros((self.edges.n_nodes, self.edges.n_nodes))
        dense[self.edges.src, self.edges.dst] = self.coeffs.values
        return dense


def _project(H, params) -> Tensor:
    pv = params.project.values if isinstance(params.project, Tensor) else params.project
    hv = H.values if isinstance(H, Tensor) else np.asarray(H)
    if hv.ndim != 2 or pv.shape[1] != hv.shape[1]:
        raise ShapeError(f"projection {pv.shape} does not apply to hidden "
                         f"states {hv.shape}")
    return tape.linear(H, params.project)


def _check_nodes(H, edges: EdgeSet) -> int:
    hv = H.values if isinstance(H, Tensor) else np.asarray(H)
    n = hv.shape[0]
    if edges.n_edges and (edges.src.max() >= n or edges.dst.max() >= n):
        raise IndexError(f"edge set references node "
                         f"{int(max(edges.src.max(), edges.dst.max()))} "
                         f"but only {n} hidden states were given")
    return n


def influence_scores(H, edges: EdgeSet, params, slope: float) -> Tensor:
    """Raw pre-normalization influence of each edge's source on its target.

    Per edge (j, i): LeakyReLU of score . [project h_j | project h_i],
    returned in the edge set's source-major order.
    """
    _check_nodes(H, edges)
    if edges.n_edges == 0:
        raise ConfigError("cannot score an empty edge set")
    sv = params.score.values if isinstance(params.score, Tensor) else params.score
    proj = _project(H, params)
    d_a = proj.values.shape[1]
    if sv.shape != (2 * d_a,):
        raise ShapeError(f"scoring vector has shape {sv.shape}, expected "
                         f"({2 * d_a},)")
    src_part = tape.matmul(proj, tape.narrow(params.score, 0, d_a))
    dst_part = tape.matmul(proj, tape.narrow(params.score, d_a, 2 * d_a))
    pre = tape.add(tape.gather(src_part, edges.src),
                   tape.gather(dst_part, edges.dst))
    return tape.leaky_relu(pre, slope)


def influence_coefficients(scores, edges: EdgeSet,
                           normalization: str = "per_source_out") -> InfluenceMatrix:
    """Softmax-normalize raw scores into coefficients.

    ``per_source_out`` normalizes each source's scores over its out-edges
    (the default); ``per_target_in`` normalizes each target's scores over
    its in-edges. Every edge belongs to exactly one normalization set, so
    per-set sums are 1.
    """
    if normalization not in NORMALIZATIONS:
        raise ConfigError(f"unknown normalization {normalization!r}; "
                          f"choose from {NORMALIZATIONS}")
    if edges.n_edges == 0:
        raise ConfigError("cannot normalize over an empty edge set")
    sv = scores.values if isinstance(scores, Tensor) else np.asarray(scores)
    if sv.shape != (edges.n_edges,):
        raise ShapeError(f"scores have shape {sv.shape}, expected "
                         f"({edges.n_edges},)")
    if normalization == "per_source_out":
        coeffs = tape.segment_softmax(scores, edges.src, edges.n_nodes)
    else:
        by_target = tape.gather(scores, edges._by_target)
        w = tape.segment_softmax(by_target, edges.dst[edges._by_target],
                                 edges.n_nodes)
        coeffs = tape.gather(w, edges._from_target)
    return InfluenceMatrix(coeffs, edges)


def aggregate(H, influence, params, variant: str = "attention") -> Tensor:
    """Combine neighbor hidden states into each node's input vector.

    ``attention`` weighs projected sources by the influence coefficients;
    ``fixed_mean`` averages projected sources uniformly (needs only the
    edge set, accepted directly or via an InfluenceMatrix); ``none`` passes
    hidden states through and requires d_a = d_h. Nodes without in-edges
    aggregate to sigmoid(0) = 0.5 under attention and fixed_mean.
    """
    if variant not in AGGREGATOR_VARIANTS:
        raise ConfigError(f"unknown aggregator {variant!r}; choose from "
                          f"{AGGREGATOR_VARIANTS}")
    if variant == "none":
        pv = (params.project.values if isinstance(params.project, Tensor)
              else params.project)
        d_a, d_h = pv.shape
        if d_a != d_h:
            raise ConfigError(f"aggregator 'none' requires d_a = d_h, got "
                              f"d_a={d_a}, d_h={d_h}")
        return H
    edges = influence.edges if isinstance(influence, InfluenceMatrix) else influence
    if not isinstance(edges, EdgeSet):
        raise ConfigError(f"variant {variant!r} needs an edge set, got "
                          f"{type(influence).__name__}")
    n = _check_nodes(H, edges)
    proj = _project(H, params)
    picked = tape.gather(proj, edges.src)
    if variant == "attention":
        if not isinstance(influence, InfluenceMatrix):
            raise ConfigError("variant 'attention' needs an InfluenceMatrix")
        weighted = tape.mul_rows(picked, influence.coeffs)
        summed = tape.scatter_sum(weighted, edges.dst, n)
    else:
        counts = edges.in_degrees().astype(np.float64)
        inv = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
        summed = tape.scale_rows(tape.scatter_sum(picked, edges.dst, n), inv)
    return tape.sigmoid(summed)

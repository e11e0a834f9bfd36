"""Equivariant message-passing layers over point clouds of atoms.

Geometry enters only through pairwise distances, so node features are
invariant under rigid transforms while coordinate updates move with them.
Message edges are fully connected within each molecule fragment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore
from .numcore import ParamStore, Tensor

DEFAULT_LAYERS = ("egnn.0", "egnn.1")


@dataclass
class NodeState:
    """Hidden node features [n, d] alongside coordinates [n, 3]."""

    features: Tensor
    coords: Tensor

    @property
    def n_nodes(self) -> int:
        return self.features.data.shape[0]


def fully_connected_edges(fragment_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All ordered intra-fragment pairs (i, j), i != j, in lexicographic order."""
    frag = np.asarray(fragment_ids, dtype=np.int64)
    n = frag.shape[0]
    receivers = []
    senders = []
    for i in range(n):
        for j in range(n):
            if i != j and frag[i] == frag[j]:
                receivers.append(i)
                senders.append(j)
    return np.asarray(receivers, dtype=np.int64), np.asarray(senders, dtype=np.int64)


def _check_edges(n: int, receivers: np.ndarray, senders: np.ndarray) -> None:
    for arr in (receivers, senders):
        arr = np.asarray(arr)
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise IndexError(f"edge index outside [0, {n})")


def edge_distances(coords: Tensor, receivers: np.ndarray, senders: np.ndarray) -> Tensor:
    """Euclidean distance per directed edge, shape [E, 1]."""
    rel = numcore.sub(numcore.gather(coords, receivers), numcore.gather(coords, senders))
    return numcore.sqrt(numcore.sum_(numcore.mul(rel, rel), axis=1, keepdims=True))


def compute_messages(
    state: NodeState,
    params: ParamStore,
    layer: str,
    receivers: np.ndarray,
    senders: np.ndarray,
) -> Tensor:
    """Per-edge messages from [x_i, x_j, |r_i - r_j|], shape [E, d]."""
    _check_edges(state.n_nodes, receivers, senders)
    if len(receivers) == 0:
        width = params[f"{layer}.node_mlp.w2"].data.shape[1]
        return Tensor(np.zeros((0, width)))
    x_i = numcore.gather(state.features, receivers)
    x_j = numcore.gather(state.features, senders)
    dist = edge_distances(state.coords, receivers, senders)
    return numcore.mlp_forward(params, f"{layer}.node_mlp", numcore.concat([x_i, x_j, dist], axis=1))


def update_coordinates(
    state: NodeState,
    params: ParamStore,
    layer: str,
    receivers: np.ndarray,
    senders: np.ndarray,
    edge_scale: np.ndarray | None = None,
) -> Tensor:
    """New coordinates r_i + sum_j phi(|r_i - r_j|) (r_i - r_j), shape [n, 3].

    `edge_scale` rescales each edge's contribution; the forward pass uses
    1 / (fragment size - 1) to keep fully connected sums bounded.
    """
    _check_edges(state.n_nodes, receivers, senders)
    if len(receivers) == 0:
        return state.coords
    rel = numcore.sub(numcore.gather(state.coords, receivers), numcore.gather(state.coords, senders))
    dist = numcore.sqrt(numcore.sum_(numcore.mul(rel, rel), axis=1, keepdims=True))
    weight = numcore.mlp_forward(params, f"{layer}.coord_mlp", dist)
    if edge_scale is not None:
        weight = numcore.mul(weight, np.asarray(edge_scale, dtype=np.float64).reshape(-1, 1))
    delta = numcore.segment_sum(numcore.mul(weight, rel), receivers, state.n_nodes)
    return numcore.add(state.coords, delta)


def egnn_forward(
    state: NodeState,
    params: ParamStore,
    layers: tuple[str, ...] = DEFAULT_LAYERS,
    fragment_ids: np.ndarray | None = None,
) -> NodeState:
    """Run the configured layers with residual feature sums and coordinate shifts."""
    n = state.n_nodes
    frag = np.zeros(n, dtype=np.int64) if fragment_ids is None else np.asarray(fragment_ids, dtype=np.int64)
    receivers, senders = fully_connected_edges(frag)
    _, frag_sizes = np.unique(frag, return_counts=True)
    size_of = {int(f): int(c) for f, c in zip(np.unique(frag), frag_sizes)}
    edge_scale = np.array(
        [1.0 / max(size_of[int(frag[i])] - 1, 1) for i in receivers], dtype=np.float64
    )

    current = state
    for layer in layers:
        messages = compute_messages(current, params, layer, receivers, senders)
        if len(receivers):
            aggregated = numcore.segment_sum(messages, receivers, n)
            features = numcore.add(current.features, aggregated)
        else:
            features = current.features
        coords = update_coordinates(current, params, layer, receivers, senders, edge_scale)
        current = NodeState(features=features, coords=coords)
    return current


def init_egnn_layer(
    params: ParamStore, layer: str, width: int, hidden: int, rng: np.random.Generator
) -> None:
    """Allocate node MLP (2d+1 -> hidden -> d) and coord MLP (1 -> hidden -> 1)."""
    numcore.init_mlp(params, f"{layer}.node_mlp", 2 * width + 1, hidden, width, rng)
    numcore.init_mlp(params, f"{layer}.coord_mlp", 1, hidden, 1, rng)

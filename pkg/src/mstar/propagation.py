"""Progressive conditional message passing over an expanding visited frontier.

The visited set starts at the selected starting entities and grows by one hop
of the inverse-augmented adjacency per layer. Each layer aggregates
attention-weighted conditional messages into every visited destination:

    h(e) = ReLU(W_out @ sum over active edges (e, r, x) of
                gamma(e, r, x) * (h_prev(x) * rhat(r | q)))

where gamma is a sigmoid gate computed from the destination's previous
embedding, the conditional relation embedding, and the query embedding. Edges
whose message source was not visited in the previous layer carry zero messages
and are skipped; by inverse closure their destinations are exactly the newly
visited entities, so skipping them changes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    add_rowvec,
    gather_rows,
    matmul,
    mul,
    relu,
    reshape,
    scale_rows,
    segment_reduce,
    sigmoid,
    transpose,
    zeros,
)
from .graph import KnowledgeGraph
from .pre_embed import EdgeView


@dataclass
class AttentionLayer:
    """Edge-gate and output parameters of one progressive layer."""

    gate_out: Tensor    # (1, attn_dim)
    gate_dst: Tensor    # (attn_dim, d)
    gate_rel: Tensor    # (attn_dim, d)
    gate_query: Tensor  # (attn_dim, d)
    msg_out: Tensor     # (d, d)

    def check(self, dim: int, attn_dim: int) -> None:
        expect = {
            "gate_out": (1, attn_dim),
            "gate_dst": (attn_dim, dim),
            "gate_rel": (attn_dim, dim),
            "gate_query": (attn_dim, dim),
            "msg_out": (dim, dim),
        }
        for name, shape in expect.items():
            actual = getattr(self, name).data.shape
            if actual != shape:
                raise ShapeError(f"{name} must be {shape}, got {actual}")


@dataclass
class PropagationState:
    """Visited sets, per-layer embeddings, and the active edges of each layer."""

    visited: list[np.ndarray]      # bool masks, layers 0..L
    embeddings: list[Tensor]       # (num_entities, d) per layer 0..L
    active_edges: list[np.ndarray] # edge positions into the EdgeView, layers 1..L

    @property
    def final(self) -> Tensor:
        return self.embeddings[-1]

    @property
    def final_visited(self) -> np.ndarray:
        return self.visited[-1]


def expand_frontier(
    g: KnowledgeGraph,
    prev: np.ndarray,
    edges: EdgeView | None = None,
) -> np.ndarray:
    """prev plus every out-neighbor of prev over the (possibly masked) edges."""
    prev = np.asarray(prev, dtype=bool)
    if prev.shape != (g.num_entities,):
        raise ShapeError(f"frontier mask must have shape ({g.num_entities},)")
    if edges is None:
        edges = EdgeView.of(g)
    grown = prev.copy()
    if edges.num_edges:
        reached = edges.tails[prev[edges.heads]]
        grown[reached] = True
    return grown


def edge_attention_scores(
    layer: AttentionLayer,
    h_dst: Tensor,
    rel_rows: Tensor,
    q_vec: Tensor,
) -> Tensor:
    """Per-edge sigmoid gates in (0, 1); h_dst and rel_rows are (E, d) blocks."""
    hidden = relu(
        add_rowvec(
            add(matmul(h_dst, transpose(layer.gate_dst)),
                matmul(rel_rows, transpose(layer.gate_rel))),
            matmul(layer.gate_query, q_vec),
        )
    )
    logits = reshape(matmul(hidden, transpose(layer.gate_out)), (h_dst.data.shape[0],))
    return sigmoid(logits)


def edge_attention(
    layer: AttentionLayer,
    h_prev_dst: Tensor,
    rel_embedding: Tensor,
    q_vec: Tensor,
) -> Tensor:
    """Gate of a single edge, as a scalar tensor."""
    dim = q_vec.data.shape[0]
    scores = edge_attention_scores(
        layer, reshape(h_prev_dst, (1, dim)), reshape(rel_embedding, (1, dim)), q_vec
    )
    return reshape(scores, ())


def propagate(
    g: KnowledgeGraph,
    rhat_table: Tensor,
    q_vec: Tensor,
    init: Tensor,
    starting_set: np.ndarray,
    layers: list[AttentionLayer],
    edges: EdgeView | None = None,
) -> PropagationState:
    """Run the progressive layers from ``init`` supported on ``starting_set``."""
    if not layers:
        raise ValueError("at least one propagation layer is required")
    num, dim = init.data.shape
    if num != g.num_entities:
        raise ShapeError("init must have one row per entity")
    attn_dim = layers[0].gate_out.data.shape[1]
    for layer in layers:
        layer.check(dim, attn_dim)
    if edges is None:
        edges = EdgeView.of(g)

    start_mask = np.zeros(g.num_entities, dtype=bool)
    start_mask[np.asarray(starting_set, dtype=np.int64)] = True

    visited = [start_mask]
    embeddings = [init]
    active_edges: list[np.ndarray] = []

    for layer in layers:
        prev_mask = visited[-1]
        h_prev = embeddings[-1]
        visited.append(expand_frontier(g, prev_mask, edges))
        # only sources visited in the previous layer can carry nonzero messages
        act = np.flatnonzero(prev_mask[edges.tails]) if edges.num_edges else np.empty(0, np.int64)
        active_edges.append(act)
        if act.size == 0:
            embeddings.append(zeros((num, dim)))
            continue
        dst = edges.heads[act]
        src = edges.tails[act]
        rel = edges.rels[act]
        h_src = gather_rows(h_prev, src)
        rel_rows = gather_rows(rhat_table, rel)
        h_dst = gather_rows(h_prev, dst)
        gates = edge_attention_scores(layer, h_dst, rel_rows, q_vec)
        messages = scale_rows(mul(h_src, rel_rows), gates)
        agg = segment_reduce(messages, dst, num, mode="sum")
        embeddings.append(relu(matmul(agg, transpose(layer.msg_out))))

    return PropagationState(visited=visited, embeddings=embeddings, active_edges=active_edges)

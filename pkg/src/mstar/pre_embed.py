"""Full-propagation encoder producing query-conditioned features for all entities.

Starts from all-zero embeddings and runs mean-aggregation message passing over
the complete inverse-augmented edge set: each layer sets

    h(e) = (1 / |N(e)|) * sum over edges (e, r, x) of (h_prev(x) + rhat(r | q))

with isolated entities keeping the zero vector. The result feeds starting-entity
selection and typing only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, gather_rows, segment_reduce, zeros
from .graph import KnowledgeGraph


@dataclass
class EdgeView:
    """CSR edge arrays, optionally with some edges masked out for this query."""

    heads: np.ndarray
    rels: np.ndarray
    tails: np.ndarray

    @classmethod
    def of(cls, g: KnowledgeGraph, include_mask: np.ndarray | None = None) -> "EdgeView":
        if include_mask is None:
            return cls(g.csr_heads, g.csr_rels, g.csr_tails)
        return cls(g.csr_heads[include_mask], g.csr_rels[include_mask],
                   g.csr_tails[include_mask])

    @property
    def num_edges(self) -> int:
        return len(self.heads)


@dataclass
class PreEmbeddings:
    """Per-entity conditioned features, shape (num_entities, d)."""

    values: Tensor


def pre_embed(
    g: KnowledgeGraph,
    rhat_table: Tensor,
    num_layers: int,
    edges: EdgeView | None = None,
) -> PreEmbeddings:
    """Run ``num_layers`` rounds of full mean-aggregation propagation."""
    if num_layers < 0:
        raise ValueError("num_layers must be >= 0")
    if edges is None:
        edges = EdgeView.of(g)
    dim = rhat_table.data.shape[1]
    h = zeros((g.num_entities, dim))
    if edges.num_edges == 0:
        return PreEmbeddings(h)
    for _ in range(num_layers):
        messages = add(gather_rows(h, edges.tails), gather_rows(rhat_table, edges.rels))
        h = segment_reduce(messages, edges.heads, g.num_entities, mode="mean")
    return PreEmbeddings(h)

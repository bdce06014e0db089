"""Candidate scoring and the visit-verified multi-class log-loss.

Scores come from a two-layer readout of the head's and the candidate's final
embeddings; unvisited entities keep their zero rows and therefore share one
common score. Training keeps only queries whose target tail was actually
visited by the final propagation layer, and the per-query loss is the
multi-class log-loss over all entities:

    loss = -score(target) + log(sum over all entities e of exp(score(e)))
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    add_n,
    add_rowvec,
    index_scalar,
    logsumexp,
    matmul,
    relu,
    reshape,
    slice_cols,
    sub,
    transpose,
    gather_rows,
)
from .graph import Triple
from .propagation import PropagationState


@dataclass
class ScoredQuery:
    """All-candidate scores of one query plus its visit-verification flag."""

    query: Triple
    scores: Tensor                 # (num_entities,)
    visited: np.ndarray            # bool mask of the final layer
    verified: bool


def score_candidates(
    state: PropagationState,
    head: int,
    w_out: Tensor,
    w_hidden: Tensor,
) -> Tensor:
    """Score every entity as the query's tail from the final embeddings.

    w_out is (1, d); w_hidden is (d, 2d), split blockwise over the virtual
    concatenation (h_final(head) | h_final(e)).
    """
    h = state.final
    num, dim = h.data.shape
    if w_out.data.shape != (1, dim):
        raise ShapeError(f"w_out must be (1, {dim}), got {w_out.data.shape}")
    if w_hidden.data.shape != (dim, 2 * dim):
        raise ShapeError(f"w_hidden must be ({dim}, {2 * dim}), got {w_hidden.data.shape}")
    if not 0 <= head < num:
        raise IndexError(f"head entity {head} out of range")

    h_head = reshape(gather_rows(h, [head]), (dim,))
    base = matmul(h, transpose(slice_cols(w_hidden, dim, 2 * dim)))
    offset = matmul(slice_cols(w_hidden, 0, dim), h_head)
    hidden = relu(add_rowvec(base, offset))
    return reshape(matmul(hidden, transpose(w_out)), (num,))


def make_scored_query(query: Triple, scores: Tensor, state: PropagationState) -> ScoredQuery:
    visited = state.final_visited
    return ScoredQuery(
        query=query,
        scores=scores,
        visited=visited,
        verified=bool(visited[query.tail]),
    )


def link_verify_mask(batch: list[ScoredQuery]) -> list[ScoredQuery]:
    """Keep exactly the queries whose target tail was visited."""
    return [sq for sq in batch if sq.verified]


def query_loss(scores: Tensor, target: int) -> Tensor:
    """Multi-class log-loss of one query over all candidate entities."""
    if scores.data.size == 0:
        raise ValueError("loss over an empty entity set")
    return sub(logsumexp(scores), index_scalar(scores, target))


def batch_loss(batch: list[ScoredQuery]) -> Tensor:
    """Sum of per-query losses; an empty (fully masked) batch contributes zero."""
    if not batch:
        return Tensor(0.0)
    return add_n([query_loss(sq.scores, sq.query.tail) for sq in batch])

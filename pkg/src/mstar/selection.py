"""Starting-entity selection: importance scoring and deterministic top-n choice.

The learned score of entity e is a two-layer readout of the concatenation of
that entity's pre-embedding, the head's pre-embedding, and the query-relation
embedding. Random and degree-based scoring stand in for the learned scores in
the selection-variant experiments.
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
    relu,
    reshape,
    slice_cols,
    transpose,
)
from .graph import KnowledgeGraph
from .pre_embed import PreEmbeddings


@dataclass
class SelectionResult:
    """Importance scores plus the chosen starting set (head always included)."""

    scores: Tensor                 # (num_entities,)
    starting_set: np.ndarray       # unique entity ids, ascending
    mode: str


def importance_scores(
    pre: PreEmbeddings,
    head: int,
    q_vec: Tensor,
    w_out: Tensor,
    w_hidden: Tensor,
) -> Tensor:
    """Score every entity's relevance to (head, query relation).

    w_out is (1, d); w_hidden is (d, 3d), applied blockwise to the virtual
    concatenation (h_pre(e) | h_pre(head) | q_vec) so the tiled concatenation
    is never materialized.
    """
    h = pre.values
    num, dim = h.data.shape
    if w_out.data.shape != (1, dim):
        raise ShapeError(f"w_out must be (1, {dim}), got {w_out.data.shape}")
    if w_hidden.data.shape != (dim, 3 * dim):
        raise ShapeError(f"w_hidden must be ({dim}, {3 * dim}), got {w_hidden.data.shape}")
    if q_vec.data.shape != (dim,):
        raise ShapeError(f"q_vec must be ({dim},), got {q_vec.data.shape}")
    if not 0 <= head < num:
        raise IndexError(f"head entity {head} out of range")

    h_head = reshape(gather_rows(h, [head]), (dim,))
    base = matmul(h, transpose(slice_cols(w_hidden, 0, dim)))
    offset = add(
        matmul(slice_cols(w_hidden, dim, 2 * dim), h_head),
        matmul(slice_cols(w_hidden, 2 * dim, 3 * dim), q_vec),
    )
    hidden = relu(add_rowvec(base, offset))
    return reshape(matmul(hidden, transpose(w_out)), (num,))


def variant_scores(mode: str, g: KnowledgeGraph, seed_material) -> np.ndarray:
    """Query-independent score variants: seeded-uniform or out-degree."""
    if mode == "random":
        rng = np.random.default_rng(seed_material)
        return rng.uniform(size=g.num_entities)
    if mode == "degree":
        return g.out_degrees().astype(np.float64)
    raise ValueError(f"unknown selection variant {mode!r}")


def select_starting(scores: np.ndarray, head: int, n: int, mode: str = "learned",
                    score_tensor: Tensor | None = None) -> SelectionResult:
    """Head plus the top-n entities by score, ties broken by ascending id."""
    if n < 1:
        raise ValueError("n must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    num = scores.shape[0]
    if not 0 <= head < num:
        raise IndexError(f"head entity {head} out of range")
    order = np.lexsort((np.arange(num), -scores))
    top = order[: min(n, num)]
    chosen = np.union1d(top, np.asarray([head], dtype=np.int64))
    tensor = score_tensor if score_tensor is not None else Tensor(scores)
    return SelectionResult(scores=tensor, starting_set=chosen.astype(np.int64), mode=mode)

"""Highway layer: typed shortcut edges that seed the starting entities.

Each selected starting entity is classified into one of m semantic types from
its pre-embedding; a synthetic edge (head, shortcut_rel[type], entity) is built
for every starting entity other than the head, and one message-passing pass
over those edges initializes the starting entities with head information gated
by the conditional embedding of the shortcut relation. All other entities stay
at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, gather_rows, mul_rowvec, reshape, scatter_rows, vstack
from .conditioning import shortcut_relation_id
from .graph import Triple
from .pre_embed import PreEmbeddings
from .selection import SelectionResult


@dataclass
class HighwayState:
    """Types, shortcut edges, and the conditional initialization they produce."""

    types: dict[int, int]          # starting entity -> 0-based type index
    shortcuts: list[Triple]
    init: Tensor                   # (num_entities, d); zero outside the starting set


def classify_starting(
    pre: PreEmbeddings,
    selection: SelectionResult,
    type_weights: Tensor,
) -> dict[int, int]:
    """0-based argmax type of each starting entity, ties broken by lowest type.

    Hard classification: no gradient flows through the argmax. The head's type
    is computed like any other but never used downstream.
    """
    if type_weights.data.ndim != 2 or type_weights.data.shape[1] != pre.values.data.shape[1]:
        raise ShapeError(
            f"type_weights must be (m, {pre.values.data.shape[1]}), got {type_weights.data.shape}"
        )
    entities = selection.starting_set
    logits = pre.values.data[entities] @ type_weights.data.T
    picks = np.argmax(logits, axis=1)  # np.argmax returns the first (lowest) maximizer
    return {int(e): int(t) for e, t in zip(entities, picks)}


def build_shortcuts(
    head: int,
    num_original_relations: int,
    selection: SelectionResult,
    types: dict[int, int],
) -> list[Triple]:
    """(head, shortcut_rel[type(e)], e) for each starting entity e != head."""
    shortcuts = []
    for e in selection.starting_set:
        e = int(e)
        if e == head:
            continue
        if e not in types:
            raise KeyError(f"starting entity {e} has no type assignment")
        rel = shortcut_relation_id(num_original_relations, types[e])
        shortcuts.append(Triple(head, rel, e))
    return shortcuts


def highway_init(
    head: int,
    num_entities: int,
    shortcuts: list[Triple],
    rhat_table: Tensor,
    head_embedding: Tensor,
) -> Tensor:
    """Initialization g: head gets its learned embedding, each shortcut target
    gets head_embedding gated by the conditional embedding of its shortcut
    relation, everything else is zero."""
    dim = head_embedding.data.shape[0]
    if head_embedding.data.shape != (dim,):
        raise ShapeError("head_embedding must be a vector")
    head_row = reshape(head_embedding, (1, dim))
    indices = [head]
    if shortcuts:
        rel_ids = [s.rel for s in shortcuts]
        gates = gather_rows(rhat_table, rel_ids)
        target_rows = mul_rowvec(gates, head_embedding)
        rows = vstack([head_row, target_rows])
        indices = indices + [s.tail for s in shortcuts]
    else:
        rows = head_row
    return scatter_rows(rows, np.asarray(indices, dtype=np.int64), num_entities)

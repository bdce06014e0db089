"""Query conditioning: model configuration and the conditional relation transform.

Every propagation stage reads relations through the same query-conditioned
embedding: given the query relation q with learned embedding vector q_emb, the
edge relation r contributes rhat(r | q) = W_r q_emb + b_r, where W_r and b_r
are per-relation parameters. Rows exist for originals, inverses, and the
synthetic shortcut relations used by the highway stage.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .autodiff import Tensor, gather_rows, matmul, reshape, add
from .graph import KnowledgeGraph

# Hyperparameter search grids used by the published evaluation protocol.
NUM_STARTS_GRID = (1, 2, 4, 8, 16, 32, 64)
START_TYPES_GRID = (2, 3, 5, 7, 9)

SELECTION_MODES = ("learned", "random", "degree")


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 32            # width of entity and relation embeddings
    attn_dim: int = 8              # width of the edge-attention hidden layer
    pre_layers: int = 2            # full-propagation encoder depth
    prop_layers: int = 3           # progressive propagation depth
    num_starts: int = 8            # entities kept by top-n selection
    num_start_types: int = 3       # semantic classes for shortcut edges
    lr: float = 5e-3
    batch_size: int = 32
    patience: int = 10
    max_epochs: int = 200
    seed: int = 0
    selection_mode: str = "learned"
    share_relation_encoder: bool = True
    mask_query_edge: bool = True

    def __post_init__(self):
        if self.num_starts < 1:
            raise ValueError("num_starts must be >= 1")
        if self.num_start_types < 1:
            raise ValueError("num_start_types must be >= 1")
        if self.pre_layers < 0:
            raise ValueError("pre_layers must be >= 0")
        if self.prop_layers < 1:
            raise ValueError("prop_layers must be >= 1")
        if self.embed_dim < 1 or self.attn_dim < 1:
            raise ValueError("embed_dim and attn_dim must be >= 1")
        if self.selection_mode not in SELECTION_MODES:
            raise ValueError(f"selection_mode must be one of {SELECTION_MODES}")

    def with_overrides(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class AblationFlags:
    """Component switches for the ablation variants."""

    selection_on: bool = True
    highway_on: bool = True
    linkverify_on: bool = True


FULL_MODEL = AblationFlags()


@dataclass(frozen=True)
class QueryContext:
    """One (head entity, query relation) condition over the active graph."""

    head: int
    query_rel: int
    graph: KnowledgeGraph

    def __post_init__(self):
        if not 0 <= self.head < self.graph.num_entities:
            raise IndexError(f"head entity {self.head} out of range")
        total = num_total_relations(self.graph.num_original_relations, 0)
        if not 0 <= self.query_rel < total:
            raise IndexError(f"query relation {self.query_rel} out of range")


def num_total_relations(num_original: int, num_start_types: int) -> int:
    """Originals plus inverses plus the synthetic shortcut relation slots."""
    return 2 * num_original + num_start_types


def shortcut_relation_id(num_original: int, type_index: int) -> int:
    """Relation id of the shortcut slot for a 0-based starting-entity type."""
    return 2 * num_original + type_index


@dataclass
class RelationEncoder:
    """Per-forward view of the relation parameters.

    transform: (R_total, d, d); bias and query_emb: (R_total, d).
    """

    transform: Tensor
    bias: Tensor
    query_emb: Tensor

    @property
    def num_relations(self) -> int:
        return self.transform.data.shape[0]

    @property
    def dim(self) -> int:
        return self.transform.data.shape[-1]

    def query_vector(self, q: int) -> Tensor:
        """The learned embedding row of the query relation."""
        if not 0 <= q < self.num_relations:
            raise IndexError(f"relation id {q} out of range")
        return reshape(gather_rows(self.query_emb, [q]), (self.dim,))

    def conditional_table(self, q: int) -> Tensor:
        """rhat(r | q) for every relation id r at once, shape (R_total, d)."""
        r_total, d = self.num_relations, self.dim
        flat = reshape(self.transform, (r_total * d, d))
        projected = reshape(matmul(flat, self.query_vector(q)), (r_total, d))
        return add(projected, self.bias)


def conditional_relation_embedding(enc: RelationEncoder, r: int, q: int) -> Tensor:
    """rhat(r | q) = W_r q_emb + b_r for a single relation id."""
    if not 0 <= r < enc.num_relations:
        raise IndexError(f"relation id {r} out of range")
    table = enc.conditional_table(q)
    return reshape(gather_rows(table, [r]), (enc.dim,))

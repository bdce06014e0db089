"""The full multi-starting propagation model: parameters plus per-query forward.

One forward pass per query condition (head, relation): encode relations
conditioned on the query, pre-embed all entities, select starting entities,
seed them through the highway layer, run the progressive layers, and score
every candidate tail. Parameters are entity-independent, so one parameter set
serves any graph over the same relation vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .conditioning import (
    AblationFlags,
    FULL_MODEL,
    ModelConfig,
    QueryContext,
    RelationEncoder,
    num_total_relations,
)
from .graph import KnowledgeGraph, Triple
from .highway import HighwayState, build_shortcuts, classify_starting, highway_init
from .objective import ScoredQuery, make_scored_query, query_loss, score_candidates
from .params import ParamStore
from .pre_embed import EdgeView, PreEmbeddings, pre_embed
from .propagation import AttentionLayer, PropagationState, propagate
from .selection import SelectionResult, importance_scores, select_starting, variant_scores


@dataclass
class ForwardResult:
    """Everything a single query forward produces."""

    scored: ScoredQuery
    state: PropagationState
    selection: SelectionResult
    highway: HighwayState
    pre: PreEmbeddings | None
    wrapped: dict[str, Tensor]

    def loss(self) -> Tensor:
        return query_loss(self.scored.scores, self.scored.query.tail)


class ConditionCache:
    """Per-relation forward reuse for fixed parameters (evaluation only)."""

    def __init__(self):
        self.entries: dict[int, tuple] = {}


class MStarModel:
    def __init__(
        self,
        graph: KnowledgeGraph,
        config: ModelConfig,
        params: ParamStore | None = None,
    ):
        self.graph = graph
        self.config = config
        self.num_relations = num_total_relations(
            graph.num_original_relations, config.num_start_types
        )
        if params is None:
            params = self._build_params()
        self.params = params

    def _build_params(self) -> ParamStore:
        cfg = self.config
        d, a = cfg.embed_dim, cfg.attn_dim
        r_total = self.num_relations
        rng = np.random.default_rng(cfg.seed)
        store = ParamStore()
        store.create("rel_query_emb", (r_total, d), rng)
        store.create("rel_transform", (r_total, d, d), rng)
        store.create("rel_bias", (r_total, d), rng, zero=True)
        if not cfg.share_relation_encoder:
            store.create("pre_rel_query_emb", (r_total, d), rng)
            store.create("pre_rel_transform", (r_total, d, d), rng)
            store.create("pre_rel_bias", (r_total, d), rng, zero=True)
        store.create("select_out", (1, d), rng)
        store.create("select_hidden", (d, 3 * d), rng)
        store.create("type_proj", (cfg.num_start_types, d), rng)
        store.create("head_init", (d,), rng)
        for i in range(1, cfg.prop_layers + 1):
            store.create(f"attn_out_l{i}", (1, a), rng)
            store.create(f"attn_dst_l{i}", (a, d), rng)
            store.create(f"attn_rel_l{i}", (a, d), rng)
            store.create(f"attn_query_l{i}", (a, d), rng)
            store.create(f"msg_out_l{i}", (d, d), rng)
        store.create("score_out", (1, d), rng)
        store.create("score_hidden", (d, 2 * d), rng)
        return store

    def bind(self, graph: KnowledgeGraph) -> "MStarModel":
        """The same parameters over another graph with the same relation vocabulary."""
        if graph.num_original_relations != self.graph.num_original_relations:
            raise ValueError("graphs disagree on the relation vocabulary size")
        return MStarModel(graph, self.config, params=self.params)

    # -- forward -----------------------------------------------------------

    def _encoder(self, wrapped: dict[str, Tensor], pre_stage: bool) -> RelationEncoder:
        prefix = "pre_" if pre_stage and not self.config.share_relation_encoder else ""
        return RelationEncoder(
            transform=wrapped[f"{prefix}rel_transform"],
            bias=wrapped[f"{prefix}rel_bias"],
            query_emb=wrapped[f"{prefix}rel_query_emb"],
        )

    def _layers(self, wrapped: dict[str, Tensor]) -> list[AttentionLayer]:
        return [
            AttentionLayer(
                gate_out=wrapped[f"attn_out_l{i}"],
                gate_dst=wrapped[f"attn_dst_l{i}"],
                gate_rel=wrapped[f"attn_rel_l{i}"],
                gate_query=wrapped[f"attn_query_l{i}"],
                msg_out=wrapped[f"msg_out_l{i}"],
            )
            for i in range(1, self.config.prop_layers + 1)
        ]

    def forward_query(
        self,
        query: Triple,
        tape: Tape | None = None,
        flags: AblationFlags = FULL_MODEL,
        exclude_edge_ids: tuple[int, ...] = (),
        cache: ConditionCache | None = None,
    ) -> ForwardResult:
        cfg = self.config
        g = self.graph
        ctx = QueryContext(head=query.head, query_rel=query.rel, graph=g)
        wrapped = self.params.wrap(tape)
        edges = EdgeView.of(g, g.csr_include_mask(exclude_edge_ids))

        need_pre = flags.selection_on and (
            cfg.selection_mode == "learned" or flags.highway_on
        )
        cache_ok = cache is not None and tape is None and not exclude_edge_ids
        if cache_ok and query.rel in cache.entries:
            rhat, q_vec, pre, pre_q_vec = cache.entries[query.rel]
            if need_pre and pre is None:
                pre, pre_q_vec = self._pre_embed(wrapped, query.rel, edges)
                cache.entries[query.rel] = (rhat, q_vec, pre, pre_q_vec)
        else:
            enc = self._encoder(wrapped, pre_stage=False)
            rhat = enc.conditional_table(query.rel)
            q_vec = enc.query_vector(query.rel)
            pre, pre_q_vec = (
                self._pre_embed(wrapped, query.rel, edges) if need_pre else (None, None)
            )
            if cache_ok:
                cache.entries[query.rel] = (rhat, q_vec, pre, pre_q_vec)

        selection = self._select(wrapped, ctx, pre, pre_q_vec, flags)
        hw = self._highway(wrapped, ctx, selection, pre, rhat, flags)
        state = propagate(
            g, rhat, q_vec, hw.init, selection.starting_set, self._layers(wrapped), edges
        )
        scores = score_candidates(state, query.head, wrapped["score_out"], wrapped["score_hidden"])
        scored = make_scored_query(query, scores, state)
        return ForwardResult(
            scored=scored, state=state, selection=selection, highway=hw,
            pre=pre, wrapped=wrapped,
        )

    def _pre_embed(self, wrapped, rel: int, edges: EdgeView):
        enc = self._encoder(wrapped, pre_stage=True)
        table = enc.conditional_table(rel)
        return pre_embed(self.graph, table, self.config.pre_layers, edges), enc.query_vector(rel)

    def _select(
        self,
        wrapped: dict[str, Tensor],
        ctx: QueryContext,
        pre: PreEmbeddings | None,
        pre_q_vec: Tensor | None,
        flags: AblationFlags,
    ) -> SelectionResult:
        cfg = self.config
        if not flags.selection_on:
            return SelectionResult(
                scores=Tensor(np.zeros(self.graph.num_entities)),
                starting_set=np.asarray([ctx.head], dtype=np.int64),
                mode="off",
            )
        if cfg.selection_mode == "learned":
            alpha = importance_scores(
                pre, ctx.head, pre_q_vec, wrapped["select_out"], wrapped["select_hidden"]
            )
            return select_starting(
                alpha.data, ctx.head, cfg.num_starts, "learned", score_tensor=alpha
            )
        scores = variant_scores(
            cfg.selection_mode, self.graph, [cfg.seed, ctx.head, ctx.query_rel]
        )
        return select_starting(scores, ctx.head, cfg.num_starts, cfg.selection_mode)

    def _highway(
        self,
        wrapped: dict[str, Tensor],
        ctx: QueryContext,
        selection: SelectionResult,
        pre: PreEmbeddings | None,
        rhat: Tensor,
        flags: AblationFlags,
    ) -> HighwayState:
        head_emb = wrapped["head_init"]
        if flags.highway_on and selection.starting_set.size > 1:
            types = classify_starting(pre, selection, wrapped["type_proj"])
            shortcuts = build_shortcuts(
                ctx.head, self.graph.num_original_relations, selection, types
            )
            init = highway_init(ctx.head, self.graph.num_entities, shortcuts, rhat, head_emb)
            return HighwayState(types=types, shortcuts=shortcuts, init=init)
        init = highway_init(ctx.head, self.graph.num_entities, [], rhat, head_emb)
        return HighwayState(types={}, shortcuts=[], init=init)

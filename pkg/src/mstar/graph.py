"""Knowledge-graph storage: triple files, inverse augmentation, CSR adjacency, BFS.

Graphs are dense-indexed and immutable. Every original triple (h, r, t) gets a
materialized inverse (t, r + num_rels, h) so that both query directions reduce
to tail prediction and adjacency is effectively bidirectional.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

# Unreachable-entity sentinel for hop distances.
INF_DISTANCE = int(np.iinfo(np.int32).max)

SPLIT_FILES = ("train.txt", "valid.txt", "test.txt")


class DataError(Exception):
    """Unreadable, malformed, or inconsistent dataset input."""


class ParseError(DataError):
    """A triple file line does not hold exactly three tab-separated fields."""


class VocabularyError(DataError):
    """A file references a relation (or entity) outside the known vocabulary."""


class Triple(NamedTuple):
    head: int
    rel: int
    tail: int


class KnowledgeGraph:
    """Immutable multigraph over dense entity/relation ids with inverse closure.

    The logical edge list holds the F original triples first, then their
    inverses: edge F + i is the inverse of original edge i. A CSR index sorted
    by head entity provides contiguous per-entity adjacency ranges.
    """

    def __init__(
        self,
        num_entities: int,
        num_original_relations: int,
        original_triples: Sequence[Triple],
        entity_names: Sequence[str] = (),
        relation_names: Sequence[str] = (),
    ):
        self.num_entities = int(num_entities)
        self.num_original_relations = int(num_original_relations)
        self.entity_names = list(entity_names)
        self.relation_names = list(relation_names)

        originals = np.asarray(
            [[t[0], t[1], t[2]] for t in original_triples], dtype=np.int64
        ).reshape(-1, 3)
        if originals.size:
            if originals[:, [0, 2]].max() >= self.num_entities:
                raise IndexError("triple references an entity id out of range")
            if originals[:, 1].max() >= self.num_original_relations:
                raise IndexError("triple references a relation id out of range")
            if originals.min() < 0:
                raise IndexError("negative id in triple list")
        inverses = originals[:, [2, 1, 0]].copy()
        inverses[:, 1] += self.num_original_relations
        edges = np.concatenate([originals, inverses], axis=0)

        self.heads = edges[:, 0].copy()
        self.rels = edges[:, 1].copy()
        self.tails = edges[:, 2].copy()

        order = np.argsort(self.heads, kind="stable")
        self.csr_heads = self.heads[order]
        self.csr_rels = self.rels[order]
        self.csr_tails = self.tails[order]
        self.csr_edge_ids = order.astype(np.int64)
        counts = np.bincount(self.csr_heads, minlength=self.num_entities)
        self.indptr = np.zeros(self.num_entities + 1, dtype=np.int64)
        np.cumsum(counts, out=self.indptr[1:])
        # position of each logical edge inside the CSR arrays
        self._csr_pos = np.empty(len(order), dtype=np.int64)
        self._csr_pos[order] = np.arange(len(order))
        self._triple_index: dict[Triple, list[int]] | None = None

    # -- basic shape -------------------------------------------------------

    @property
    def num_original_triples(self) -> int:
        return len(self.heads) // 2

    @property
    def num_edges(self) -> int:
        return len(self.heads)

    def triple(self, edge_id: int) -> Triple:
        return Triple(int(self.heads[edge_id]), int(self.rels[edge_id]), int(self.tails[edge_id]))

    def all_triples(self) -> list[Triple]:
        return [self.triple(i) for i in range(self.num_edges)]

    def original_triples(self) -> list[Triple]:
        return [self.triple(i) for i in range(self.num_original_triples)]

    def inverse_edge_id(self, edge_id: int) -> int:
        f = self.num_original_triples
        return edge_id + f if edge_id < f else edge_id - f

    # -- adjacency ---------------------------------------------------------

    def neighbor_range(self, entity: int) -> tuple[int, int]:
        """CSR range of the outgoing edges of ``entity`` (inverse-augmented)."""
        if not 0 <= entity < self.num_entities:
            raise IndexError(f"entity id {entity} out of range [0, {self.num_entities})")
        return int(self.indptr[entity]), int(self.indptr[entity + 1])

    def neighbors(self, entity: int) -> list[Triple]:
        start, stop = self.neighbor_range(entity)
        return [
            Triple(int(self.csr_heads[i]), int(self.csr_rels[i]), int(self.csr_tails[i]))
            for i in range(start, stop)
        ]

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edge_ids_matching(self, head: int, rel: int, tail: int) -> list[int]:
        """All logical edge ids equal to (head, rel, tail), duplicates included."""
        if self._triple_index is None:
            index: dict[Triple, list[int]] = {}
            for i in range(self.num_edges):
                index.setdefault(self.triple(i), []).append(i)
            self._triple_index = index
        return list(self._triple_index.get(Triple(head, rel, tail), ()))

    def query_edge_ids(self, head: int, rel: int, tail: int) -> list[int]:
        """Edge ids of (head, rel, tail) plus their inverses, for exclusion."""
        ids = self.edge_ids_matching(head, rel, tail)
        return ids + [self.inverse_edge_id(i) for i in ids]

    def csr_include_mask(self, excluded_edge_ids: Iterable[int] = ()) -> np.ndarray | None:
        """Boolean mask over CSR positions with the given logical edges dropped."""
        excluded = list(excluded_edge_ids)
        if not excluded:
            return None
        mask = np.ones(self.num_edges, dtype=bool)
        mask[self._csr_pos[np.asarray(excluded, dtype=np.int64)]] = False
        return mask


@dataclass
class InductiveDataset:
    """A train graph with its query splits plus a disjoint-entity test graph."""

    train_graph: KnowledgeGraph
    train_queries: list[Triple]
    valid_queries: list[Triple]
    test_graph: KnowledgeGraph
    test_queries: list[Triple]
    relation_names: list[str] = field(default_factory=list)


# -- parsing ----------------------------------------------------------------


def read_triple_file(path: str | os.PathLike) -> list[tuple[str, str, str]]:
    """Read a head<TAB>relation<TAB>tail file; blank lines are skipped."""
    triples = []
    try:
        handle = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read triple file {path}: {exc}") from exc
    with handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            triples.append((fields[0], fields[1], fields[2]))
    return triples


class _Vocab:
    """Dense ids in first-appearance order."""

    def __init__(self):
        self.ids: dict[str, int] = {}

    def add(self, name: str) -> int:
        if name not in self.ids:
            self.ids[name] = len(self.ids)
        return self.ids[name]

    def get(self, name: str) -> int | None:
        return self.ids.get(name)

    def names(self) -> list[str]:
        return list(self.ids)

    def __len__(self) -> int:
        return len(self.ids)


def _encode(
    raw: list[tuple[str, str, str]],
    entities: _Vocab,
    relations: _Vocab,
    grow_relations: bool,
    source: str,
) -> list[Triple]:
    out = []
    for h, r, t in raw:
        if grow_relations:
            rid = relations.add(r)
        else:
            rid = relations.get(r)
            if rid is None:
                raise VocabularyError(f"{source}: unknown relation {r!r}")
        out.append(Triple(entities.add(h), rid, entities.add(t)))
    return out


def load_dataset(train_dir: str | os.PathLike, test_dir: str | os.PathLike) -> InductiveDataset:
    """Load an inductive split pair laid out in the GraIL convention.

    ``train_dir`` must hold train.txt (the training graph, also the training
    queries) and valid.txt; ``test_dir`` must hold train.txt (the inference
    graph) and test.txt. Relation vocabulary comes from the train side; the
    test side may only reuse it.
    """
    train_raw = read_triple_file(os.path.join(train_dir, "train.txt"))
    valid_raw = read_triple_file(os.path.join(train_dir, "valid.txt"))
    fact_raw = read_triple_file(os.path.join(test_dir, "train.txt"))
    test_raw = read_triple_file(os.path.join(test_dir, "test.txt"))

    relations = _Vocab()
    train_entities = _Vocab()
    train_triples = _encode(train_raw, train_entities, relations, True, "train.txt")
    valid_triples = _encode(valid_raw, train_entities, relations, True, "valid.txt")

    test_entities = _Vocab()
    fact_triples = _encode(fact_raw, test_entities, relations, False, f"{test_dir}/train.txt")
    test_triples = _encode(test_raw, test_entities, relations, False, f"{test_dir}/test.txt")

    train_graph = KnowledgeGraph(
        len(train_entities), len(relations), train_triples,
        train_entities.names(), relations.names(),
    )
    test_graph = KnowledgeGraph(
        len(test_entities), len(relations), fact_triples,
        test_entities.names(), relations.names(),
    )
    return InductiveDataset(
        train_graph=train_graph,
        train_queries=train_triples,
        valid_queries=valid_triples,
        test_graph=test_graph,
        test_queries=test_triples,
        relation_names=relations.names(),
    )


def load_union_graph(directory: str | os.PathLike) -> tuple[KnowledgeGraph, list[str]]:
    """Build one graph from every split file present in ``directory``.

    Used for whole-dataset analytics, where published statistics count the
    union of train/valid/test triples of each side.
    """
    entities = _Vocab()
    relations = _Vocab()
    triples: list[Triple] = []
    found = []
    for name in SPLIT_FILES:
        path = os.path.join(directory, name)
        if os.path.exists(path):
            triples.extend(_encode(read_triple_file(path), entities, relations, True, name))
            found.append(name)
    if not found:
        raise DataError(f"no triple files {SPLIT_FILES} found in {directory}")
    graph = KnowledgeGraph(len(entities), len(relations), triples,
                           entities.names(), relations.names())
    return graph, found


# -- services ----------------------------------------------------------------


def bfs_distances(
    g: KnowledgeGraph,
    source: int,
    excluded_edge_ids: Iterable[int] = (),
) -> np.ndarray:
    """Hop distances from ``source`` over the inverse-augmented edge set.

    Unreachable entities get INF_DISTANCE. Level-synchronous and vectorized:
    each BFS level gathers the CSR ranges of the whole frontier at once.
    """
    if not 0 <= source < g.num_entities:
        raise IndexError(f"entity id {source} out of range")
    allowed = g.csr_include_mask(excluded_edge_ids)
    dist = np.full(g.num_entities, INF_DISTANCE, dtype=np.int32)
    dist[source] = 0
    frontier = np.array([source], dtype=np.int64)
    level = 0
    while frontier.size:
        starts = g.indptr[frontier]
        counts = g.indptr[frontier + 1] - starts
        total = int(counts.sum())
        if total == 0:
            break
        base = np.repeat(counts.cumsum() - counts, counts)
        pos = np.repeat(starts, counts) + (np.arange(total) - base)
        if allowed is not None:
            pos = pos[allowed[pos]]
        targets = g.csr_tails[pos]
        fresh = targets[dist[targets] == INF_DISTANCE]
        if fresh.size == 0:
            break
        level += 1
        dist[fresh] = level
        frontier = np.unique(fresh)
    return dist


def graph_stats(g: KnowledgeGraph) -> tuple[int, int, int]:
    """(distinct relations, entities, triples) over original triples only."""
    f = g.num_original_triples
    num_rels = int(np.unique(g.rels[:f]).size) if f else 0
    return num_rels, g.num_entities, f


def directory_stats(directory: str | os.PathLike) -> tuple[int, int, int]:
    """(relations, entities, triples) across every split file in a directory."""
    rels: set[str] = set()
    ents: set[str] = set()
    total = 0
    found = False
    for name in SPLIT_FILES:
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            continue
        found = True
        for h, r, t in read_triple_file(path):
            ents.add(h)
            ents.add(t)
            rels.add(r)
            total += 1
    if not found:
        raise DataError(f"no triple files {SPLIT_FILES} found in {directory}")
    return len(rels), len(ents), total


def query_distance(g: KnowledgeGraph, query: Triple, exclude_query_edge: bool = True) -> int:
    """Head-to-tail hop distance of one query on the augmented graph.

    When the query itself is an edge of the graph, that edge and its inverse
    are excluded first so the distance reflects alternate paths.
    """
    excluded = g.query_edge_ids(*query) if exclude_query_edge else ()
    return int(bfs_distances(g, query.head, excluded)[query.tail])


def long_distance_proportion(
    g: KnowledgeGraph,
    queries: Sequence[Triple],
    threshold: int = 3,
    exclude_query_edge: bool = True,
) -> float:
    """Percentage of queries with head-tail distance > ``threshold`` hops.

    Unreachable pairs count as long-distance. Queries that are edges of the
    graph are measured with that edge (and its inverse) excluded.
    """
    if not queries:
        return 0.0
    over = sum(
        1 for q in queries if query_distance(g, q, exclude_query_edge) > threshold
    )
    return 100.0 * over / len(queries)

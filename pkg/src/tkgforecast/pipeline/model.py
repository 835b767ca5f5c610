"""Queries, the assembled forecaster, and cached batch prediction."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..decoder import EntityDecoder, HistoryIndex
from ..encoder import EdgeTypeGrouping, TemporalEncoder, group_rare_edge_types
from ..errors import ConfigError, ContractError
from ..numcore import Tensor
from ..numcore.ops import take
from ..seqheads import SequenceHead
from ..tkg import Dataset, SnapshotGraph, add_reverse_relations, build_snapshot_graph, span
from .config import TrainConfig


class Query(NamedTuple):
    entity: int
    relation: int
    target: int
    anchor: int
    time: int


@dataclass
class QuerySet:
    """Column-wise query storage; ``qs[i]`` gives a :class:`Query`."""
    entity: np.ndarray
    relation: np.ndarray
    target: np.ndarray
    anchor: np.ndarray
    time: np.ndarray

    def __len__(self) -> int:
        return len(self.entity)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return Query(int(self.entity[i]), int(self.relation[i]), int(self.target[i]),
                         int(self.anchor[i]), int(self.time[i]))
        return QuerySet(self.entity[i], self.relation[i], self.target[i], self.anchor[i], self.time[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def by_anchor(self) -> dict[int, np.ndarray]:
        order = np.argsort(self.anchor, kind="stable")
        anchors, starts = np.unique(self.anchor[order], return_index=True)
        return {int(a): idx for a, idx in zip(anchors, np.split(order, starts[1:]))}


def make_queries(events: np.ndarray, dt: int, num_base_relations: int, min_time: int,
                 anchor: int | None = None) -> QuerySet:
    """Object and subject queries for every event, anchored ``dt`` steps back.

    Anchors are clamped at ``min_time``.  An event whose clamped anchor is
    not strictly earlier than its own time has no usable history and is
    skipped.  ``anchor`` forces one anchor for every query.
    """
    events = np.asarray(events, dtype=np.int64)
    if len(events) == 0:
        raise ContractError("make_queries needs at least one event")
    if anchor is None:
        t_a = np.maximum(events[:, 3] - dt, min_time)
    else:
        t_a = np.full(len(events), anchor, dtype=np.int64)
    keep = t_a < events[:, 3]
    events, t_a = events[keep], t_a[keep]
    s, r, o, t = events.T
    return QuerySet(
        entity=np.concatenate([s, o]), relation=np.concatenate([r, r + num_base_relations]),
        target=np.concatenate([o, s]), anchor=np.concatenate([t_a, t_a]), time=np.concatenate([t, t]))


def horizon(dataset: Dataset, config: TrainConfig) -> int:
    """Forecast step: span of the data the model must see past."""
    if config.icews14_mode:
        return 1
    if config.dt_mode == "train-only":
        dt = span(dataset.valid) + span(dataset.test)
    else:
        dt = span(dataset.test)
    if dt < 1:
        raise ConfigError("horizon must be >= 1; is the held-out split empty?")
    return dt


def observable_events(dataset: Dataset, config: TrainConfig) -> np.ndarray:
    """Base (non-augmented) events the model may use as ground truth."""
    if config.dt_mode == "train-only":
        return dataset.train
    return np.concatenate([dataset.train, dataset.valid])


class Forecaster:
    """Encoder -> sequence head -> entity decoder, sharing one parameter dict."""

    def __init__(self, config: TrainConfig, num_entities: int, num_base_relations: int,
                 grouping: EdgeTypeGrouping, dt: int):
        self.config = config
        self.num_entities = num_entities
        self.num_base_relations = num_base_relations
        self.grouping = grouping
        self.dt = dt
        rng = np.random.default_rng(config.seed)
        self.encoder = TemporalEncoder(num_entities, grouping, config.encoder_config(), rng)
        self.head = SequenceHead(config.head, len(config.hx), config.dim, config.head_config(), rng)
        self.decoder = EntityDecoder(num_entities, 2 * num_base_relations, config.dim, config.decoder_config(), rng)

    @classmethod
    def for_dataset(cls, dataset: Dataset, config: TrainConfig) -> "Forecaster":
        aug = observable_graph_data(dataset, config)
        grouping = group_rare_edge_types(aug.train, aug.num_relations, config.rare_threshold)
        return cls(config, dataset.num_entities, dataset.num_base_relations, grouping, horizon(dataset, config))

    @property
    def params(self) -> dict[str, Tensor]:
        out = {}
        for prefix, part in (("encoder", self.encoder), ("head", self.head), ("decoder", self.decoder)):
            out.update({f"{prefix}.{k}": v for k, v in part.params.items()})
        return out

    def embed(self, copies: Tensor, graph: SnapshotGraph, entities) -> tuple[Tensor, Tensor]:
        """(future, current) embeddings [B, d] for the given query entities."""
        uniq, inverse = np.unique(np.asarray(entities), return_inverse=True)
        seqs = self.encoder.sequences(copies, graph, self.config.history, uniq)
        future = self.head(seqs)
        current = seqs[:, -1, :]
        return take(future, inverse), take(current, inverse)

    def batch_loss(self, graph: SnapshotGraph, queries: QuerySet, history: HistoryIndex | None) -> Tensor:
        copies = self.encoder.encode_copies(graph)
        future, current = self.embed(copies, graph, queries.entity)
        mask = history.mask(queries.entity, queries.relation, graph.anchor) if self.config.copy else None
        return self.decoder.loss(future, current, queries.relation, queries.target, mask)

    def batch_probabilities(self, graph: SnapshotGraph, queries: QuerySet, history: HistoryIndex | None,
                            copies: Tensor | None = None) -> np.ndarray:
        copies = self.encoder.encode_copies(graph) if copies is None else copies
        future, current = self.embed(copies, graph, queries.entity)
        mask = history.mask(queries.entity, queries.relation, graph.anchor) if self.config.copy else None
        return self.decoder.probabilities(future, current, queries.relation, mask).data


def observable_graph_data(dataset: Dataset, config: TrainConfig) -> Dataset:
    """Observable events plus their reverse edges, as a single-split dataset."""
    base = Dataset(observable_events(dataset, config), [], [], dataset.num_entities, dataset.num_base_relations)
    return add_reverse_relations(base)


class GraphSource:
    """Builds (and memoizes) snapshot graphs over the observable events."""

    def __init__(self, dataset: Dataset, config: TrainConfig):
        self.config = config
        self.data = observable_graph_data(dataset, config)
        self.history = HistoryIndex(self.data.train, dataset.num_entities)
        self.last_time = int(self.data.train[:, 3].max())
        self._graphs: dict[int, SnapshotGraph] = {}

    def graph(self, t_a: int) -> SnapshotGraph:
        g = self._graphs.get(t_a)
        if g is None:
            g = self._graphs[t_a] = build_snapshot_graph(self.data, t_a, self.config.window, self.config.history)
        return g


def assert_no_leakage(graph: SnapshotGraph, queries: QuerySet) -> None:
    if len(graph.time) and graph.time.max() > graph.anchor:
        raise ContractError("snapshot graph holds an event after its anchor")
    if np.any(queries.anchor != graph.anchor) or np.any(queries.time <= graph.anchor):
        raise ContractError("query is not strictly after its graph anchor")


class Predictor:
    """Batch inference with an encoder-output cache keyed by anchor time."""

    def __init__(self, model: Forecaster, source: GraphSource):
        self.model = model
        self.source = source
        self._copies: dict[int, Tensor] = {}
        self.encoder_calls = 0
        self.cache_hits = 0

    def _encoded(self, t_a: int) -> tuple[SnapshotGraph, Tensor]:
        graph = self.source.graph(t_a)
        copies = self._copies.get(t_a)
        if copies is None:
            copies = self.model.encoder.encode_copies(graph)
            self._copies[t_a] = copies
            self.encoder_calls += 1
        else:
            self.cache_hits += 1
        return graph, copies

    def predict(self, queries: QuerySet) -> np.ndarray:
        """Probabilities [len(queries), num_entities] in query order."""
        out = np.zeros((len(queries), self.model.num_entities))
        for t_a, idx in queries.by_anchor().items():
            graph, copies = self._encoded(t_a)
            sub = queries[idx]
            assert_no_leakage(graph, sub)
            out[idx] = self.model.batch_probabilities(graph, sub, self.source.history, copies)
        return out

    def forward_query(self, query: Query) -> np.ndarray:
        qs = QuerySet(*(np.array([v]) for v in query))
        return self.predict(qs)[0]

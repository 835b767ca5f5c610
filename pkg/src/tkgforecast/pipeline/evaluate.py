"""Ranking metrics, answer filters, and a count-based baseline."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, ValidationError
from ..tkg import Dataset, reverse_edges
from .config import TrainConfig
from .model import Forecaster, GraphSource, Predictor, Query, QuerySet, horizon, make_queries, observable_events


@dataclass(frozen=True)
class Metrics:
    mrr: float
    hits3: float
    hits10: float
    raw_mrr: float
    raw_hits3: float
    raw_hits10: float
    n_queries: int

    @classmethod
    def from_ranks(cls, filtered: np.ndarray, raw: np.ndarray) -> "Metrics":
        filtered, raw = np.asarray(filtered, dtype=np.float64), np.asarray(raw, dtype=np.float64)
        return cls(float(np.mean(1 / filtered)), float(np.mean(filtered <= 3)), float(np.mean(filtered <= 10)),
                   float(np.mean(1 / raw)), float(np.mean(raw <= 3)), float(np.mean(raw <= 10)), len(filtered))

    def table(self) -> str:
        rows = [("", "MRR", "Hits@3", "Hits@10"),
                ("filtered", *(f"{v:.4f}" for v in (self.mrr, self.hits3, self.hits10))),
                ("raw", *(f"{v:.4f}" for v in (self.raw_mrr, self.raw_hits3, self.raw_hits10)))]
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
                 for r in rows]
        return "\n".join(lines + [f"queries: {self.n_queries}"])

    def record(self, split: str, head: str) -> str:
        fields = [split, head, f"{self.mrr:.6f}", f"{self.hits3:.6f}", f"{self.hits10:.6f}",
                  f"{self.raw_mrr:.6f}", str(self.n_queries)]
        return "\t".join(fields)


def rank_of(probs, target: int, filter_set=()) -> int:
    """1 + number of surviving candidates scored strictly above the target."""
    probs = np.asarray(probs)
    filt = np.fromiter(filter_set, dtype=np.int64) if not isinstance(filter_set, np.ndarray) else filter_set
    if np.any(filt == target):
        raise ContractError("target must not be filtered out")
    above = probs > probs[target]
    if len(filt):
        above[filt] = False
    return 1 + int(above.sum())


class FilterIndex:
    """All true answers per query key, over train, valid and test.

    ``time-aware`` keys on (entity, relation, event time); ``static``
    ignores the time.
    """

    def __init__(self, dataset: Dataset, mode: str = "time-aware"):
        if mode not in ("time-aware", "static"):
            raise ValueError(f"unknown filter mode {mode!r}")
        self.mode = mode
        R = dataset.num_base_relations
        base = dataset.all_events()
        edges = np.concatenate([base, reverse_edges(base, R)])
        index: dict[tuple, set[int]] = defaultdict(set)
        for e, r, c, t in edges.tolist():
            index[self._key(e, r, t)].add(c)
        self._index = {k: np.array(sorted(v), dtype=np.int64) for k, v in index.items()}

    def _key(self, e, r, t):
        return (e, r, t) if self.mode == "time-aware" else (e, r)

    def candidates(self, q: Query) -> np.ndarray:
        """Other true answers for ``q`` (its own target excluded)."""
        hit = self._index.get(self._key(q.entity, q.relation, q.time))
        if hit is None:
            return np.zeros(0, dtype=np.int64)
        return hit[hit != q.target]


def filtered_candidates(q: Query, dataset: Dataset, mode: str = "time-aware") -> set[int]:
    return set(FilterIndex(dataset, mode).candidates(q).tolist())


def query_ranks(probs: np.ndarray, queries: QuerySet, filters: FilterIndex) -> tuple[np.ndarray, np.ndarray]:
    """(filtered, raw) 1-based ranks of every query's target."""
    if len(queries) == 0:
        raise ValidationError("no queries to evaluate")
    raw = np.empty(len(queries), dtype=np.int64)
    filt = np.empty(len(queries), dtype=np.int64)
    for i, q in enumerate(queries):
        raw[i] = rank_of(probs[i], q.target)
        filt[i] = rank_of(probs[i], q.target, filters.candidates(q))
    return filt, raw


def evaluate_scores(probs: np.ndarray, queries: QuerySet, filters: FilterIndex) -> Metrics:
    """Metrics for precomputed score rows aligned with ``queries``."""
    return Metrics.from_ranks(*query_ranks(probs, queries, filters))


def split_queries(dataset: Dataset, config: TrainConfig, split: str, source: GraphSource) -> QuerySet:
    events = dataset.split(split)
    if len(events) == 0:
        raise ValidationError(f"empty split: {split}")
    anchor = source.last_time if (config.icews14_mode and split == "test") else None
    return make_queries(events, horizon(dataset, config), dataset.num_base_relations, dataset.min_time, anchor)


def evaluate(model: Forecaster, dataset: Dataset, split: str = "test", filter_mode: str | None = None,
             predictor: Predictor | None = None) -> Metrics:
    """Filtered and raw metrics over both query directions of ``split``."""
    config = model.config
    predictor = predictor or Predictor(model, GraphSource(dataset, config))
    queries = split_queries(dataset, config, split, predictor.source)
    filters = FilterIndex(dataset, filter_mode or config.filter_mode)
    return evaluate_scores(predictor.predict(queries), queries, filters)


class FrequencyBaseline:
    """Scores candidates by how often they answered (entity, relation) up to the anchor.

    A small seeded jitter breaks count ties so equal counts do not all share
    the optimistic top rank.
    """

    def __init__(self, events: np.ndarray, num_entities: int, num_base_relations: int, seed: int = 0):
        self.num_entities = num_entities
        edges = np.concatenate([events, reverse_edges(events, num_base_relations)])
        self._edges = edges[np.argsort(edges[:, 3], kind="stable")]
        self._rng = np.random.default_rng(seed)

    def scores(self, queries: QuerySet) -> np.ndarray:
        out = np.zeros((len(queries), self.num_entities))
        times = self._edges[:, 3]
        for t_a, idx in queries.by_anchor().items():
            past = self._edges[: np.searchsorted(times, t_a, side="right")]
            counts: dict[tuple[int, int], np.ndarray] = {}
            for e, r, c in past[:, :3].tolist():
                row = counts.get((e, r))
                if row is None:
                    row = counts[(e, r)] = np.zeros(self.num_entities)
                row[c] += 1
            for i in idx:
                row = counts.get((int(queries.entity[i]), int(queries.relation[i])))
                if row is not None:
                    out[i] = row
        return out + self._rng.uniform(0, 1e-3, size=out.shape)


def evaluate_baseline(dataset: Dataset, config: TrainConfig, split: str = "test") -> Metrics:
    source = GraphSource(dataset, config)
    queries = split_queries(dataset, config, split, source)
    baseline = FrequencyBaseline(observable_events(dataset, config), dataset.num_entities,
                                 dataset.num_base_relations, config.seed)
    return evaluate_scores(baseline.scores(queries), queries, FilterIndex(dataset, config.filter_mode))


"""Temporal heterogeneous attention encoder over snapshot graphs.

Each node copy aggregates, per incoming edge type, an attention-weighted
sum of neighbor values whose inputs carry a cosine encoding of the time lag
``cos(omega * lag + phi)``.  Per-type messages are averaged over the types
actually present at the copy, then projected.  A copy always sees itself
through a dedicated self-loop type (lag 0); older copies of the same entity
arrive through the self-connection type.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .numcore import Tensor, glorot, ops, parameter
from .numcore.ops import concat, leaky_relu, matmul, segment_softmax, segment_sum, take
from .tkg import HistorySpec, SnapshotGraph


@dataclass(frozen=True)
class EdgeTypeGrouping:
    """Relation id -> weight group; rare relations share one group."""
    group_of: np.ndarray
    threshold: int
    num_groups: int
    shared_group: int | None

    @property
    def num_relations(self) -> int:
        return len(self.group_of)

    @property
    def self_loop_group(self) -> int:
        return self.num_groups

    @property
    def self_connection_group(self) -> int:
        return self.num_groups + 1

    @property
    def total_groups(self) -> int:
        return self.num_groups + 2


def group_rare_edge_types(train_events: np.ndarray, num_relations: int, threshold: int) -> EdgeTypeGrouping:
    """Relations seen at least ``threshold`` times in training keep their own weights."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    counts = np.bincount(np.asarray(train_events)[:, 1], minlength=num_relations)[:num_relations]
    frequent = counts >= threshold
    group_of = np.empty(num_relations, dtype=np.int64)
    group_of[frequent] = np.arange(frequent.sum())
    shared = None
    if (~frequent).any():
        shared = int(frequent.sum())
        group_of[~frequent] = shared
    num_groups = int(frequent.sum()) + (1 if shared is not None else 0)
    return EdgeTypeGrouping(group_of, threshold, num_groups, shared)


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 200
    out_dim: int = 200
    heads: int = 4
    time_dim: int = 32
    layers: int = 1
    slope: float = 0.2
    neighbor_cap: int = 64

    @property
    def head_dim(self) -> int:
        return self.out_dim // self.heads


def time_encode(lag, omega: Tensor, phi: Tensor) -> Tensor:
    """cos(omega * lag + phi) for a scalar lag or a vector of lags ([E] -> [E, d_time])."""
    lag = np.asarray(lag, dtype=np.float64)
    if lag.ndim == 0:
        return ops.cos(omega * float(lag) + phi)
    return ops.cos(Tensor(lag[:, None]) * omega + phi)


@dataclass
class _GroupPlan:
    group: int
    src: np.ndarray
    dst: np.ndarray
    time: np.ndarray
    seg: np.ndarray          # segment = (dst copy, raw edge type)
    seg_dst: np.ndarray      # copy of each segment
    num_segments: int


def _cap_recent(dst, rel, time, cap):
    order = np.lexsort((-time, rel, dst))
    d, r = dst[order], rel[order]
    new_group = np.ones(len(order), dtype=bool)
    new_group[1:] = (d[1:] != d[:-1]) | (r[1:] != r[:-1])
    starts = np.maximum.accumulate(np.where(new_group, np.arange(len(order)), 0))
    rank = np.arange(len(order)) - starts
    return np.sort(order[rank < cap])


def _segments(dst, type_key):
    keys = np.stack([dst, type_key], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    return inverse.reshape(-1), uniq[:, 0], len(uniq)


def plan_edges(graph: SnapshotGraph, grouping: EdgeTypeGrouping, neighbor_cap: int) -> list[_GroupPlan]:
    """Split the graph's edges by weight group, with the neighbor cap applied."""
    tref = graph.copy_reference_time()
    plans = []
    keep = _cap_recent(graph.dst, graph.rel, graph.time, neighbor_cap) if graph.num_event_edges else np.zeros(0, int)
    src, dst, rel, time = graph.src[keep], graph.dst[keep], graph.rel[keep], graph.time[keep]
    groups = grouping.group_of[rel] if len(rel) else np.zeros(0, dtype=np.int64)
    for g in np.unique(groups):
        m = groups == g
        seg, seg_dst, n = _segments(dst[m], rel[m])
        plans.append(_GroupPlan(int(g), src[m], dst[m], time[m], seg, seg_dst, n))
    copies = np.arange(graph.num_copies)
    plans.append(_GroupPlan(grouping.self_loop_group, copies, copies, tref, copies, copies, graph.num_copies))
    if len(graph.self_src):
        n = len(graph.self_src)
        plans.append(_GroupPlan(grouping.self_connection_group, graph.self_src, graph.self_dst,
                                tref[graph.self_src], np.arange(n), graph.self_dst, n))
    return plans


class TemporalEncoder:
    def __init__(self, num_entities: int, grouping: EdgeTypeGrouping, config: EncoderConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.config = cfg = config or EncoderConfig()
        rng = rng or np.random.default_rng(0)
        self.num_entities = num_entities
        self.grouping = grouping
        hd = cfg.heads * cfg.head_dim
        self.params: dict[str, Tensor] = {
            "entity_attr": parameter(rng.normal(0.0, cfg.dim ** -0.5, size=(num_entities, cfg.dim)), "entity_attr"),
            "omega": parameter(np.geomspace(1e-3, 1.0, cfg.time_dim), "omega"),
            "phi": parameter(np.zeros(cfg.time_dim), "phi"),
        }
        for layer in range(cfg.layers):
            d_in = cfg.dim if layer == 0 else cfg.out_dim
            for g in range(grouping.total_groups):
                for kind, rows in (("q", d_in), ("k", d_in + cfg.time_dim), ("v", d_in + cfg.time_dim)):
                    name = f"l{layer}.w{kind}.{g}"
                    self.params[name] = glorot(rng, (rows, hd), name)
            self.params[f"l{layer}.wo"] = glorot(rng, (hd, cfg.out_dim), f"l{layer}.wo")
        self.calls = 0
        self._plans: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()

    def _weights(self, layer: int, group: int):
        p = self.params
        return p[f"l{layer}.wq.{group}"], p[f"l{layer}.wk.{group}"], p[f"l{layer}.wv.{group}"]

    def _group_messages(self, h: Tensor, tref: np.ndarray, plan: _GroupPlan, layer: int):
        """Per-segment activated head outputs [num_segments, H*dh] and attention [E, H]."""
        cfg = self.config
        wq, wk, wv = self._weights(layer, plan.group)
        e = len(plan.src)
        te = time_encode(tref[plan.dst] - plan.time, self.params["omega"], self.params["phi"])
        hbar = concat([take(h, plan.src), te], axis=1)
        q = matmul(take(h, plan.dst), wq).reshape(e, cfg.heads, cfg.head_dim)
        k = matmul(hbar, wk).reshape(e, cfg.heads, cfg.head_dim)
        v = matmul(hbar, wv).reshape(e, cfg.heads, cfg.head_dim)
        alpha = segment_softmax((q * k).sum(axis=2), plan.seg, plan.num_segments)
        msg = segment_sum(alpha.reshape(e, cfg.heads, 1) * v, plan.seg, plan.num_segments)
        msg = leaky_relu(msg, cfg.slope).reshape(plan.num_segments, cfg.heads * cfg.head_dim)
        return msg, alpha

    def encode_copies(self, graph: SnapshotGraph, return_attention: bool = False):
        """Embeddings [num_copies, out_dim] for every node copy of ``graph``."""
        if graph.num_entities != self.num_entities:
            raise ContractError("graph entity count does not match the encoder")
        self.calls += 1
        tref = graph.copy_reference_time()
        cached = self._plans.get(graph)
        if cached is None:
            plans = plan_edges(graph, self.grouping, self.config.neighbor_cap)
            counts = np.zeros(graph.num_copies)
            for plan in plans:
                counts += np.bincount(plan.seg_dst, minlength=graph.num_copies)
            cached = self._plans[graph] = (plans, (1.0 / counts)[:, None])
        plans, inv_counts = cached[0], Tensor(cached[1])
        h = take(self.params["entity_attr"], graph.copy_entity())
        attention = []
        for layer in range(self.config.layers):
            total = None
            for plan in plans:
                msg, alpha = self._group_messages(h, tref, plan, layer)
                attention.append((layer, plan, alpha))
                part = segment_sum(msg, plan.seg_dst, graph.num_copies)
                total = part if total is None else total + part
            h = matmul(total * inv_counts, self.params[f"l{layer}.wo"])
        return (h, attention) if return_attention else h

    def encode(self, graph: SnapshotGraph, hx: HistorySpec, entities) -> Tensor:
        """History sequences [len(entities), |hx|, out_dim], oldest offset first."""
        return self.sequences(self.encode_copies(graph), graph, hx, entities)

    @staticmethod
    def sequences(copies: Tensor, graph: SnapshotGraph, hx: HistorySpec, entities) -> Tensor:
        return take(copies, graph.copies_for_history(np.asarray(entities), hx))

    def attention_aggregate(self, h_v: Tensor, neighbors: Tensor, edge_times, t_ref: float, group: int,
                            layer: int = 0) -> tuple[Tensor, Tensor]:
        """Projected message from one copy's neighbors of a single edge type.

        Returns ``(message [out_dim], attention [n_neighbors, heads])``.
        """
        edge_times = np.asarray(edge_times, dtype=np.float64)
        n = neighbors.shape[0] if neighbors.ndim == 2 else 0
        if n == 0:
            raise ContractError("attention_aggregate needs at least one neighbor")
        if np.any(edge_times > t_ref):
            raise ContractError("neighbor edge time after reference time")
        h = concat([ops.reshape(h_v, (1, -1)), neighbors], axis=0)
        tref = np.full(n + 1, float(t_ref))
        plan = _GroupPlan(group, np.arange(1, n + 1), np.zeros(n, np.int64), edge_times,
                          np.zeros(n, np.int64), np.zeros(1, np.int64), 1)
        msg, alpha = self._group_messages(h, tref, plan, layer)
        out = matmul(msg, self.params[f"l{layer}.wo"])
        return out.reshape(self.config.out_dim), alpha

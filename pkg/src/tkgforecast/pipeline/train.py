"""Joint training of encoder, sequence head and decoder."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteError, TrainingError, UpdateError
from ..numcore import Adam, Tape
from ..tkg import Dataset
from .config import TrainConfig
from .model import Forecaster, GraphSource, QuerySet, assert_no_leakage, make_queries, observable_events

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: Forecaster
    source: GraphSource
    losses: list[float] = field(default_factory=list)

    @property
    def dt(self) -> int:
        return self.model.dt


def training_queries(dataset: Dataset, config: TrainConfig, dt: int) -> QuerySet:
    events = observable_events(dataset, config)
    return make_queries(events, dt, dataset.num_base_relations, dataset.min_time)


def batches(queries: QuerySet, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Index batches that never mix anchors, in shuffled order."""
    out = []
    for idx in queries.by_anchor().values():
        idx = idx[rng.permutation(len(idx))]
        out.extend(idx[i:i + batch_size] for i in range(0, len(idx), batch_size))
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def _param_norms(model: Forecaster) -> str:
    return ", ".join(f"{k}={np.linalg.norm(v.data):.3g}" for k, v in model.params.items())


def train(dataset: Dataset, config: TrainConfig, model: Forecaster | None = None) -> TrainResult:
    """Fit a forecaster; returns it with the per-epoch mean loss trace.

    Stops early once the loss has not improved by a relative
    ``min_improvement`` for ``patience`` consecutive epochs.
    """
    model = model or Forecaster.for_dataset(dataset, config)
    source = GraphSource(dataset, config)
    queries = training_queries(dataset, config, model.dt)
    params = model.params
    optim = Adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)
    result = TrainResult(model, source)
    best, stale = math.inf, 0

    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for b, idx in enumerate(batches(queries, config.batch_size, rng)):
            sub = queries[idx]
            graph = source.graph(int(sub.anchor[0]))
            assert_no_leakage(graph, sub)
            optim.zero_grad()
            try:
                with Tape() as tape:
                    loss = model.batch_loss(graph, sub, source.history)
                tape.backward(loss)
                optim.step()
            except (NonFiniteError, UpdateError) as exc:
                raise TrainingError(f"non-finite value at epoch {epoch}, batch {b} ({exc}); "
                                    f"parameter norms: {_param_norms(model)}") from exc
            value = loss.item()
            total += value * len(idx)
            count += len(idx)
        mean = total / count
        result.losses.append(mean)
        log.info("epoch %d loss %.6f", epoch, mean)
        if mean < best * (1 - config.min_improvement):
            best, stale = mean, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return result

"""Entity scoring: residual MLP over (future embedding, relation) plus a copy head.

The copy head scores entities from the current (offset-0) embedding, with
the gradient path into the encoder cut, together with its own embedding of
the query relation.  Scores are restricted to entities that already
appeared with the query's (entity, relation) pair.  Its distribution is
blended with the generative softmax by a learnable weight.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numcore import Tensor, glorot, zeros
from .numcore.ops import (
    concat,
    cross_entropy_logits,
    detach,
    log,
    masked_softmax_rows,
    matmul,
    relu,
    sigmoid,
    softmax_rows,
    take,
)


@dataclass(frozen=True)
class DecoderConfig:
    rel_dim: int = 200
    blocks: int = 2
    hidden: int = 400
    copy_head: bool = True


class EntityDecoder:
    def __init__(self, num_entities: int, num_relations: int, emb_dim: int,
                 config: DecoderConfig | None = None, rng: np.random.Generator | None = None):
        self.config = cfg = config or DecoderConfig()
        rng = rng or np.random.default_rng(0)
        self.num_entities = num_entities
        self.num_relations = num_relations
        width = emb_dim + cfg.rel_dim
        p = {"rel_emb": Tensor(rng.normal(0.0, cfg.rel_dim ** -0.5, size=(num_relations, cfg.rel_dim)),
                               requires_grad=True, name="rel_emb")}
        for i in range(cfg.blocks):
            p[f"block{i}.w1"] = glorot(rng, (width, cfg.hidden), f"block{i}.w1")
            p[f"block{i}.b1"] = zeros((cfg.hidden,), f"block{i}.b1")
            p[f"block{i}.w2"] = glorot(rng, (cfg.hidden, width), f"block{i}.w2")
            p[f"block{i}.b2"] = zeros((width,), f"block{i}.b2")
        p["out.w"] = glorot(rng, (width, num_entities), "out.w")
        p["out.b"] = zeros((num_entities,), "out.b")
        if cfg.copy_head:
            p["copy.rel_emb"] = Tensor(rng.normal(0.0, cfg.rel_dim ** -0.5, size=(num_relations, cfg.rel_dim)),
                                       requires_grad=True, name="copy.rel_emb")
            p["copy.w"] = glorot(rng, (emb_dim + cfg.rel_dim, num_entities), "copy.w")
            p["copy.b"] = zeros((num_entities,), "copy.b")
            p["copy.alpha_logit"] = zeros((1,), "copy.alpha_logit")
        self.params = p

    def residual_trunk(self, x: Tensor) -> Tensor:
        p = self.params
        for i in range(self.config.blocks):
            inner = relu(matmul(x, p[f"block{i}.w1"]) + p[f"block{i}.b1"])
            x = x + matmul(inner, p[f"block{i}.w2"]) + p[f"block{i}.b2"]
        return x

    def _query_input(self, emb: Tensor, rels, table: str) -> Tensor:
        rels = np.atleast_1d(np.asarray(rels, dtype=np.int64))
        if np.any(rels < 0) or np.any(rels >= self.num_relations):
            raise IndexError(f"relation id outside [0, {self.num_relations})")
        if emb.ndim == 1:
            emb = emb.reshape(1, -1)
        if emb.shape[0] != len(rels):
            raise DimensionError(f"{emb.shape[0]} embeddings for {len(rels)} relations")
        return concat([emb, take(self.params[table], rels)], axis=1)

    def score_entities(self, future_emb: Tensor, rels) -> Tensor:
        """Generative logits [B, num_entities] (softmax left to the caller)."""
        x = self._query_input(future_emb, rels, "rel_emb")
        return matmul(self.residual_trunk(x), self.params["out.w"]) + self.params["out.b"]

    def copy_logits(self, current_emb: Tensor, rels) -> Tensor:
        # detached: the copy branch never sends gradient into the encoder
        x = self._query_input(detach(current_emb), rels, "copy.rel_emb")
        return matmul(x, self.params["copy.w"]) + self.params["copy.b"]

    @property
    def alpha(self) -> Tensor:
        return sigmoid(self.params["copy.alpha_logit"])

    def probabilities(self, future_emb: Tensor, current_emb: Tensor | None, rels, mask=None) -> Tensor:
        gen = self.score_entities(future_emb, rels)
        if not self.config.copy_head or mask is None:
            return softmax_rows(gen)
        return combine_scores(gen, self.copy_logits(current_emb, rels), mask, self.alpha)

    def loss(self, future_emb: Tensor, current_emb: Tensor | None, rels, targets, mask=None) -> Tensor:
        """Training loss, averaged over the batch.

        The generator is trained on its own cross-entropy.  With the copy head
        on, a second term is the negative log of the blended probability with
        the generator's logits held fixed, so it trains only the copy head and
        the blend weight.
        """
        targets = np.asarray(targets, dtype=np.int64)
        gen = self.score_entities(future_emb, rels)
        ce = cross_entropy_logits(gen, targets)
        if not self.config.copy_head or mask is None:
            return ce
        return ce + self.blended_nll(detach(gen), current_emb, rels, targets, mask)

    def blended_nll(self, gen_logits: Tensor, current_emb: Tensor, rels, targets, mask) -> Tensor:
        """-mean log of the blended probability of ``targets`` for given generator logits."""
        blended = combine_scores(gen_logits, self.copy_logits(current_emb, rels), mask, self.alpha)
        return -log(blended[np.arange(len(targets)), np.asarray(targets)]).mean()


def combine_scores(gen_logits: Tensor, copy_logits: Tensor, mask, alpha: Tensor) -> Tensor:
    """(1-a) softmax(gen) + a softmax(copy restricted to mask), row-wise.

    Rows whose mask is all false get a = 0, i.e. exactly softmax(gen).
    """
    mask = np.asarray(mask, dtype=bool)
    if gen_logits.shape != copy_logits.shape or mask.shape != gen_logits.shape:
        raise DimensionError("generation logits, copy logits and mask must share a shape")
    has_history = Tensor(mask.any(axis=-1, keepdims=True).astype(np.float64))
    a = alpha.reshape(1, 1) * has_history
    return (1.0 - a) * softmax_rows(gen_logits) + a * masked_softmax_rows(copy_logits, mask)


class HistoryIndex:
    """First-seen time of each candidate c for every (entity, relation) pair."""

    def __init__(self, events: np.ndarray, num_entities: int):
        self.num_entities = num_entities
        first: dict[tuple[int, int], dict[int, int]] = defaultdict(dict)
        for e, r, c, t in np.asarray(events).tolist():
            seen = first[(e, r)]
            if c not in seen or t < seen[c]:
                seen[c] = t
        self._index = {k: (np.array(list(v.keys())), np.array(list(v.values()))) for k, v in first.items()}

    def mask(self, entities, relations, t_a: int) -> np.ndarray:
        entities, relations = np.atleast_1d(entities), np.atleast_1d(relations)
        out = np.zeros((len(entities), self.num_entities), dtype=bool)
        for i, key in enumerate(zip(entities.tolist(), relations.tolist())):
            hit = self._index.get(key)
            if hit is not None:
                out[i, hit[0][hit[1] <= t_a]] = True
        return out


def historical_mask(query, events: np.ndarray, num_entities: int, t_a: int) -> np.ndarray:
    """mask[c] is true iff (e, r, c, tau) occurred for some tau <= t_a."""
    e, r = query
    return HistoryIndex(events, num_entities).mask([e], [r], t_a)[0]

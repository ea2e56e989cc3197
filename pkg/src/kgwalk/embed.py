"""DistMult and ComplEx triple scorers, their training loop, and reward shaping."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import core as C

log = logging.getLogger(__name__)

KINDS = ("complex", "distmult")


@dataclass
class EmbeddingConfig:
    kind: str = "complex"
    dim: int = 200
    negatives: int = 10
    lr: float = 0.01
    epochs: int = 100
    batch_size: int = 128
    l2: float = 0.0
    init_scale: float = 0.1
    seed: int = 0


class EmbeddingModel:
    """Entity and relation tables; ComplEx stores [real | imaginary] halves."""

    def __init__(self, kind, entity, relation):
        kind = kind.lower()
        if kind not in KINDS:
            raise ValueError(f"unknown embedding kind {kind!r}")
        entity = np.asarray(entity)
        relation = np.asarray(relation)
        if kind == "complex" and entity.shape[1] % 2:
            raise ValueError("ComplEx needs an even embedding dimension")
        self.kind = kind
        self.entity = entity
        self.relation = relation

    @property
    def dim(self):
        return self.entity.shape[1]

    def _check(self, s, r, o):
        s, r, o = np.asarray(s), np.asarray(r), np.asarray(o)
        for ids, n, what in ((s, len(self.entity), "entity"), (o, len(self.entity), "entity"),
                             (r, len(self.relation), "relation")):
            if np.any(ids < 0) or np.any(ids >= n):
                raise IndexError(f"{what} id out of range [0, {n})")
        return s, r, o

    def score(self, s, r, o):
        s, r, o = self._check(s, r, o)
        return _score_np(self.kind, self.entity[s], self.relation[r], self.entity[o])

    def score_all_objects(self, s, r):
        """Scores of every entity as object, shape (len(s), num_entities)."""
        S, R, E = self.entity[np.asarray(s)], self.relation[np.asarray(r)], self.entity
        if self.kind == "distmult":
            return (S * R) @ E.T
        h = self.dim // 2
        sr, si, rr, ri = S[:, :h], S[:, h:], R[:, :h], R[:, h:]
        return (sr * rr - si * ri) @ E[:, :h].T + (sr * ri + si * rr) @ E[:, h:].T

    def shaping(self, s, r, o):
        return shaping_from_score(self.score(s, r, o))

    def save(self, path):
        C.save_checkpoint(path, {"entity": self.entity, "relation": self.relation},
                          meta={"kind": self.kind, "dim": self.dim})

    @classmethod
    def load(cls, path):
        arrays, meta = C.load_checkpoint(path)
        return cls(meta["kind"], arrays["entity"], arrays["relation"])


def shaping_from_score(score):
    """Logistic squashing of a raw triple score into (0, 1)."""
    return 1.0 / (1.0 + np.exp(-np.asarray(score, dtype=np.float64)))


def _score_np(kind, s, r, o):
    if kind == "distmult":
        return np.sum(s * r * o, axis=-1)
    h = s.shape[-1] // 2
    sr, si, rr, ri, or_, oi = s[..., :h], s[..., h:], r[..., :h], r[..., h:], o[..., :h], o[..., h:]
    # Re(<s, r, conj(o)>)
    return np.sum(sr * rr * or_ + si * rr * oi + sr * ri * oi - si * ri * or_, axis=-1)


def _score_tensor(kind, s, r, o):
    if kind == "distmult":
        return C.sum(s * r * o, axis=-1)
    h = s.shape[-1] // 2
    sr, si, rr, ri = s[:, :h], s[:, h:], r[:, :h], r[:, h:]
    or_, oi = o[:, :h], o[:, h:]
    return C.sum(sr * rr * or_ + si * rr * oi + sr * ri * oi - si * ri * or_, axis=-1)


def filtered_mrr(model, triples, known_answers):
    """Filtered MRR of object prediction over ``triples``."""
    if not triples:
        return 0.0
    arr = np.asarray(triples)
    scores = model.score_all_objects(arr[:, 0], arr[:, 1])
    rr = []
    for row, (s, r, o) in zip(scores, triples):
        target = row[o]
        others = np.ones(len(row), dtype=bool)
        others[list(known_answers.get((s, r), ()))] = False
        rank = 1 + int(np.sum(row[others] > target))
        rr.append(1.0 / rank)
    return float(np.mean(rr))


def train_embeddings(graph, config=EmbeddingConfig(), callback=None):
    """Fit an embedding model with logistic loss on corrupted-object negatives.

    Returns the model with the best dev filtered MRR seen after any epoch
    (the last one if the graph has no dev split).
    """
    kind = config.kind.lower()
    if kind == "complex" and config.dim % 2:
        raise ValueError("ComplEx needs an even embedding dimension")
    rng = np.random.default_rng(config.seed)
    E, R = graph.num_entities, graph.vocab.num_relations
    params = C.ParameterTable()
    params.add("entity", rng.uniform(-config.init_scale, config.init_scale, (E, config.dim)))
    params.add("relation", rng.uniform(-config.init_scale, config.init_scale, (R, config.dim)))
    opt = C.Adam(params, lr=config.lr)

    train = np.asarray(graph.train, dtype=np.int64).reshape(-1, 3)
    if len(train) == 0:
        raise ValueError("train split is empty")
    best_state, best_mrr = params.state_dict(), -1.0
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(train), config.batch_size):
            batch = train[order[start:start + config.batch_size]]
            loss = _batch_loss(params, kind, batch, config, rng)
            params.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        model = EmbeddingModel(kind, params["entity"].data, params["relation"].data)
        mrr = filtered_mrr(model, graph.dev, graph.known_answers) if graph.dev else None
        history.append((epoch, float(np.mean(losses)), mrr))
        if callback:
            callback(epoch, float(np.mean(losses)), mrr)
        if mrr is None or mrr > best_mrr:
            best_mrr = -1.0 if mrr is None else mrr
            best_state = params.state_dict()
    model = EmbeddingModel(kind, best_state["entity"].copy(), best_state["relation"].copy())
    model.history = history
    return model


def _batch_loss(params, kind, batch, config, rng):
    n = len(batch)
    k = config.negatives
    neg_o = rng.integers(0, params["entity"].shape[0], size=(n, k))
    s_idx = np.concatenate([batch[:, 0], np.repeat(batch[:, 0], k)])
    r_idx = np.concatenate([batch[:, 1], np.repeat(batch[:, 1], k)])
    o_idx = np.concatenate([batch[:, 2], neg_o.reshape(-1)])
    sign = np.concatenate([np.ones(n), -np.ones(n * k)]).astype(params["entity"].dtype)
    s = C.gather(params["entity"], s_idx)
    r = C.gather(params["relation"], r_idx)
    o = C.gather(params["entity"], o_idx)
    score = _score_tensor(kind, s, r, o)
    # positives: -log sigmoid(score); negatives: -log sigmoid(-score)
    pos = -C.mean(C.log_sigmoid(score[:n]))
    neg = -C.mean(C.log_sigmoid(C.mul(score[n:], sign[n:])))
    loss = pos + neg
    if config.l2 > 0:
        reg = C.mean(C.square(s)) + C.mean(C.square(r)) + C.mean(C.square(o))
        loss = loss + reg * config.l2
    return loss

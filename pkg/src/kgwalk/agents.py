"""Relation agent and entity agent walking the pruned KG.

At each hop the relation agent picks one of the relations leaving the current
entity, then the entity agent picks a successor reachable over that relation.
Each agent has its own LSTM history. Everything is batched over queries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import core as C
from .kg import Query


@dataclass
class AgentConfig:
    dim: int = 200
    hidden: int = 200
    layers: int = 3
    mlp_dim: int = 0  # 0 -> same as dim
    hops: int = 3
    emb_dropout: float = 0.0
    hidden_dropout: float = 0.0
    relation_dropout: float = 0.0
    entity_dropout: float = 0.0
    single_agent: bool = False
    emb_init: float = 0.08
    dtype: str = "float32"
    seed: int = 0


@dataclass
class AgentState:
    """Batched walker state. ``rel_state``/``ent_state`` hold per-layer (h, c)."""

    t: int
    entity: np.ndarray
    source: np.ndarray
    query_relation: np.ndarray
    rel_state: list
    ent_state: list


@dataclass
class Distribution:
    """One emitted distribution for a batch of states.

    ``candidates`` are action indices into the padded action arrays
    (entity agent, single agent) or relation ids (relation agent).
    """

    candidates: np.ndarray
    mask: np.ndarray
    logits: C.Tensor
    logp: C.Tensor

    @property
    def probs(self):
        return np.where(self.mask, np.exp(self.logp.data), 0.0)


@dataclass
class StepRecord:
    relation: int
    entity: int
    relation_logp: float
    entity_logp: float
    relation_mask: np.ndarray
    entity_mask: np.ndarray


@dataclass
class Trajectory:
    query: Query
    steps: list
    reward: float = 0.0

    @property
    def terminal(self):
        return self.steps[-1].entity

    @property
    def relations(self):
        return [s.relation for s in self.steps]


@dataclass
class RolloutBatch:
    """Differentiable record of a batch of walks."""

    source: np.ndarray
    query_relation: np.ndarray
    answer: np.ndarray
    relations: np.ndarray       # (B, T)
    entities: np.ndarray        # (B, T)
    rel_logps: list             # T tensors of shape (B,)
    ent_logps: list
    entropies: list             # emitted-distribution entropies, each (B,)
    rel_masks: list = field(default_factory=list)
    ent_masks: list = field(default_factory=list)
    rewards: np.ndarray | None = None

    def __len__(self):
        return len(self.source)

    @property
    def terminal(self):
        return self.entities[:, -1]

    def log_prob_sum(self):
        total = None
        for lp in self.rel_logps + self.ent_logps:
            total = lp if total is None else total + lp
        return total

    def mean_entropy(self):
        if not self.entropies:
            return None
        total = self.entropies[0]
        for h in self.entropies[1:]:
            total = total + h
        return C.mean(total) * (1.0 / len(self.entropies))

    def trajectories(self):
        out = []
        for b in range(len(self)):
            ans = int(self.answer[b]) if self.answer[b] >= 0 else None
            steps = []
            for t in range(self.relations.shape[1]):
                steps.append(StepRecord(
                    int(self.relations[b, t]), int(self.entities[b, t]),
                    float(self.rel_logps[t].data[b]),
                    float(self.ent_logps[t].data[b]) if self.ent_logps else 0.0,
                    self.rel_masks[t][b] if self.rel_masks else None,
                    self.ent_masks[t][b] if self.ent_masks else None))
            reward = float(self.rewards[b]) if self.rewards is not None else 0.0
            out.append(Trajectory(Query(int(self.source[b]), int(self.query_relation[b]), ans), steps, reward))
        return out


def _pad(rows, fill, dtype=np.int64):
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), fill, dtype=dtype)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
        mask[i, :len(r)] = True
    return out, mask


class Policy:
    """Parameters and forward computations of both agents."""

    def __init__(self, graph, config=AgentConfig(), embeddings=None):
        self.graph = graph
        self.config = config
        self.vocab = graph.vocab
        self.dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(config.seed)
        d, H, m = config.dim, config.hidden, config.mlp_dim or config.dim
        self.mlp_dim = m
        E, NR = graph.num_entities, self.vocab.num_relation_ids
        p = self.params = C.ParameterTable()
        p.add("entity_emb", rng.uniform(-config.emb_init, config.emb_init, (E, d)).astype(self.dtype))
        p.add("relation_emb", rng.uniform(-config.emb_init, config.emb_init, (NR, d)).astype(self.dtype))
        if embeddings is not None:
            self.load_embeddings(embeddings)
        if config.single_agent:
            C.init_lstm(p, "pair_lstm", 2 * d, H, config.layers, rng, self.dtype)
            p.add("W2s", C.xavier_uniform((m, H + d), rng, self.dtype))
            p.add("W1s", C.xavier_uniform((2 * d, m), rng, self.dtype))
        else:
            C.init_lstm(p, "rel_lstm", d, H, config.layers, rng, self.dtype)
            p.add("W2", C.xavier_uniform((m, H + d), rng, self.dtype))
            p.add("W1", C.xavier_uniform((d, m), rng, self.dtype))
            C.init_lstm(p, "ent_lstm", d, H, config.layers, rng, self.dtype)
            p.add("W4", C.xavier_uniform((m, H + 3 * d), rng, self.dtype))
            p.add("W3", C.xavier_uniform((d, m), rng, self.dtype))
        self._action_arrays = [np.array(pairs, dtype=np.int64).reshape(-1, 2) for pairs in graph.adjacency]

    # ------------------------------------------------------------ parameter groups

    def embedding_names(self):
        return ["entity_emb", "relation_emb"]

    def relation_agent_names(self):
        if self.config.single_agent:
            return self.params.names("pair_lstm") + ["W1s", "W2s"]
        return self.params.names("rel_lstm") + ["W1", "W2"]

    def entity_agent_names(self):
        if self.config.single_agent:
            return []
        return self.params.names("ent_lstm") + ["W3", "W4"]

    def load_embeddings(self, model):
        """Copy pretrained entity and relation embeddings into the policy tables.

        Inverse relations get the inverse of their forward embedding (the
        complex conjugate for ComplEx, the same vector for DistMult). Each
        copied table is rescaled to the RMS of the random initialization, so
        reserved relations such as SELF_LOOP start on an equal footing.
        """
        ent, rel = self.params["entity_emb"], self.params["relation_emb"]
        if model.entity.shape != ent.shape:
            raise C.ShapeError(f"embedding table {model.entity.shape} does not fit policy {ent.shape}")
        R = self.vocab.num_relations
        fwd = np.asarray(model.relation[:R], dtype=np.float64)
        inv = fwd.copy()
        if model.kind == "complex":
            inv[:, fwd.shape[1] // 2:] *= -1.0
        target = self.config.emb_init / np.sqrt(3.0)

        def rescale(x):
            rms = np.sqrt(np.mean(np.square(x)))
            return x * (target / rms) if rms > 0 else x

        ent.data = rescale(np.asarray(model.entity, dtype=np.float64)).astype(self.dtype)
        new_rel = rel.data.copy()
        new_rel[:2 * R] = rescale(np.concatenate([fwd, inv])).astype(self.dtype)
        rel.data = new_rel

    # ------------------------------------------------------------ action space

    def actions(self, entities):
        """Padded full action arrays (relations, entities, mask) for each entity."""
        rows = [self._action_arrays[e] for e in entities]
        ar, mask = _pad([r[:, 0] for r in rows], self.vocab.pad_relation)
        ae, _ = _pad([r[:, 1] for r in rows], 0)
        return ar, ae, mask

    def candidate_relations(self, entities):
        return _pad([self.graph.action_relations[e] for e in entities], self.vocab.pad_relation)

    # ------------------------------------------------------------ state

    def init_state(self, sources, query_relations, train=False, rng=None):
        sources = np.asarray(sources, dtype=np.int64)
        query_relations = np.asarray(query_relations, dtype=np.int64)
        B, cfg = len(sources), self.config
        p = self.params
        r_s = np.full(B, self.vocab.start_relation)
        if cfg.single_agent:
            x = C.concat([self._emb("relation_emb", r_s, train, rng), self._emb("entity_emb", sources, train, rng)])
            rel_state = self._lstm("pair_lstm", x, None, B)
            ent_state = None
        else:
            rel_state = self._lstm("rel_lstm", self._emb("relation_emb", r_s, train, rng), None, B)
            ent_state = self._lstm("ent_lstm", self._emb("entity_emb", sources, train, rng), None, B)
        return AgentState(0, sources.copy(), sources, query_relations, rel_state, ent_state)

    def _lstm(self, prefix, x, state, batch):
        cfg = self.config
        if state is None:
            state = C.zero_state(batch, cfg.hidden, cfg.layers, self.dtype)
        return C.lstm_stack_step(self.params, prefix, cfg.layers, x, state)

    def _emb(self, table, idx, train, rng):
        out = C.gather(self.params[table], idx)
        return C.dropout(out, self.config.emb_dropout, train, rng)

    def advance(self, state, relations, entities, train=False, rng=None):
        """Feed the chosen (relation, entity) into the histories."""
        B = len(relations)
        if self.config.single_agent:
            x = C.concat([self._emb("relation_emb", relations, train, rng),
                          self._emb("entity_emb", entities, train, rng)])
            rel_state = self._lstm("pair_lstm", x, state.rel_state, B)
            ent_state = None
        else:
            rel_state = self._lstm("rel_lstm", self._emb("relation_emb", relations, train, rng), state.rel_state, B)
            ent_state = self._lstm("ent_lstm", self._emb("entity_emb", entities, train, rng), state.ent_state, B)
        return AgentState(state.t + 1, np.asarray(entities, dtype=np.int64), state.source,
                          state.query_relation, rel_state, ent_state)

    # ------------------------------------------------------------ distributions

    def relation_distribution(self, state, train=False, rng=None):
        """Softmax over the distinct relations leaving each current entity."""
        if self.config.single_agent:
            raise RuntimeError("single-agent policy has no separate relation distribution")
        p, cfg = self.params, self.config
        cand, mask = self.candidate_relations(state.entity)
        h = state.rel_state[-1][0]
        rq = self._emb("relation_emb", state.query_relation, train, rng)
        z = C.relu(C.linear(C.concat([h, rq]), p["W2"]))
        z = C.dropout(z, cfg.hidden_dropout, train, rng)
        u = C.linear(z, p["W1"])
        logits = C.bmv(self._emb("relation_emb", cand, train, rng), u)
        return Distribution(cand, mask, logits, C.masked_log_softmax(logits, mask))

    def entity_logits(self, state, ae, train=False, rng=None):
        p, cfg = self.params, self.config
        h = state.ent_state[-1][0]
        rq = self._emb("relation_emb", state.query_relation, train, rng)
        es = self._emb("entity_emb", state.source, train, rng)
        ec = self._emb("entity_emb", state.entity, train, rng)
        z = C.relu(C.linear(C.concat([h, rq, es, ec]), p["W4"]))
        z = C.dropout(z, cfg.hidden_dropout, train, rng)
        u = C.linear(z, p["W3"])
        return C.bmv(self._emb("entity_emb", ae, train, rng), u)

    def entity_distribution(self, state, chosen_relation, train=False, rng=None):
        """Softmax over successors of the current entity along ``chosen_relation``.

        Candidates are indices into the padded full action arrays.
        """
        chosen_relation = np.asarray(chosen_relation)
        ar, ae, amask = self.actions(state.entity)
        mask = amask & (ar == chosen_relation[:, None])
        bad = ~mask.any(axis=1)
        if bad.any():
            b = int(np.flatnonzero(bad)[0])
            raise ValueError(f"relation {int(chosen_relation[b])} is not an action of entity {int(state.entity[b])}")
        logits = self.entity_logits(state, ae, train, rng)
        cand = np.broadcast_to(np.arange(ar.shape[1]), ar.shape)
        return Distribution(cand, mask, logits, C.masked_log_softmax(logits, mask)), ae

    def pair_distribution(self, state, train=False, rng=None):
        """Single-agent ablation: softmax over full (relation, entity) actions."""
        p, cfg = self.params, self.config
        ar, ae, amask = self.actions(state.entity)
        h = state.rel_state[-1][0]
        rq = self._emb("relation_emb", state.query_relation, train, rng)
        z = C.relu(C.linear(C.concat([h, rq]), p["W2s"]))
        z = C.dropout(z, cfg.hidden_dropout, train, rng)
        u = C.linear(z, p["W1s"])
        pairs = C.concat([self._emb("relation_emb", ar, train, rng), self._emb("entity_emb", ae, train, rng)])
        logits = C.bmv(pairs, u)
        cand = np.broadcast_to(np.arange(ar.shape[1]), ar.shape)
        return Distribution(cand, amask, logits, C.masked_log_softmax(logits, amask)), ar, ae

    def action_log_probs(self, state):
        """Joint log-prob of every full action (relation then entity), no tape.

        Returns padded (relations, entities, mask, logp) of shape (B, A).
        """
        with C.no_grad():
            ar, ae, amask = self.actions(state.entity)
            if self.config.single_agent:
                dist, _, _ = self.pair_distribution(state)
                return ar, ae, amask, np.where(amask, dist.logp.data, -np.inf)
            rd = self.relation_distribution(state)
            logits = self.entity_logits(state, ae).data
            logp = np.full(ar.shape, -np.inf)
            for k in range(rd.candidates.shape[1]):
                r_k = rd.candidates[:, k]
                group = amask & (ar == r_k[:, None]) & rd.mask[:, k:k + 1]
                if not group.any():
                    continue
                ent_lp, _ = C._masked_log_softmax_np(logits, group)
                logp = np.where(group, rd.logp.data[:, k:k + 1] + ent_lp, logp)
        return ar, ae, amask, logp

    # ------------------------------------------------------------ rollout

    def rollout(self, queries, mode="sample", train=False, rng=None, forced=None,
                entity_mode="agent", record_entropy=True):
        """Walk ``hops`` steps for every query.

        ``queries`` is a sequence of :class:`Query` or an (B, 2|3) id array.
        ``mode`` is ``sample`` or ``greedy``; ``forced`` optionally supplies
        (relations, entities) arrays of shape (B, T) to replay. With
        ``entity_mode="uniform"`` the entity step is a uniform random pick
        that contributes no log-prob (used while the entity agent is frozen).
        """
        src, qrel, ans = query_arrays(queries)
        if rng is None:
            rng = np.random.default_rng(0)
        cfg = self.config
        T = cfg.hops
        B = len(src)
        rows = np.arange(B)
        state = self.init_state(src, qrel, train, rng)
        rels = np.zeros((B, T), dtype=np.int64)
        ents = np.zeros((B, T), dtype=np.int64)
        out = RolloutBatch(src, qrel, ans, rels, ents, [], [], [])
        for t in range(T):
            if cfg.single_agent:
                dist, ar, ae = self.pair_distribution(state, train, rng)
                if forced is not None:
                    idx = _forced_index(ar, ae, dist.mask, forced[0][:, t], forced[1][:, t])
                else:
                    idx = self._choose(dist, mode, rng, cfg.relation_dropout, train)
                r, e = ar[rows, idx], ae[rows, idx]
                out.rel_logps.append(C.pick(dist.logp, idx))
                out.rel_masks.append(dist.mask)
                if record_entropy:
                    out.entropies.append(C.masked_entropy(dist.logits, dist.mask))
            else:
                rd = self.relation_distribution(state, train, rng)
                if forced is not None:
                    ridx = _forced_index(rd.candidates, None, rd.mask, forced[0][:, t], None)
                else:
                    ridx = self._choose(rd, mode, rng, cfg.relation_dropout, train)
                r = rd.candidates[rows, ridx]
                out.rel_logps.append(C.pick(rd.logp, ridx))
                out.rel_masks.append(rd.mask)
                if record_entropy:
                    out.entropies.append(C.masked_entropy(rd.logits, rd.mask))
                if entity_mode == "uniform":
                    ar, ae, amask = self.actions(state.entity)
                    emask = amask & (ar == r[:, None])
                    if forced is not None:
                        eidx = _forced_index(ar, ae, emask, r, forced[1][:, t])
                    else:
                        eidx = _sample(np.where(emask, 1.0, 0.0) / emask.sum(1, keepdims=True), emask, rng)
                    out.ent_masks.append(emask)
                else:
                    ed, ae = self.entity_distribution(state, r, train, rng)
                    if forced is not None:
                        eidx = _forced_index(np.where(ed.mask, r[:, None], -1), ae, ed.mask, r, forced[1][:, t])
                    else:
                        eidx = self._choose(ed, mode, rng, cfg.entity_dropout, train)
                    out.ent_logps.append(C.pick(ed.logp, eidx))
                    out.ent_masks.append(ed.mask)
                    if record_entropy:
                        out.entropies.append(C.masked_entropy(ed.logits, ed.mask))
                e = ae[rows, eidx]
            rels[:, t] = r
            ents[:, t] = e
            if t + 1 < T:
                state = self.advance(state, r, e, train, rng)
        return out

    def _choose(self, dist, mode, rng, dropout_rate=0.0, train=False):
        if mode == "greedy":
            return np.argmax(np.where(dist.mask, dist.logp.data, -np.inf), axis=1)
        if mode != "sample":
            raise ValueError(f"unknown rollout mode {mode!r}")
        keep = action_dropout(dist.mask, dropout_rate, train, rng)
        probs = np.where(keep, dist.probs, 0.0)
        # every kept action may carry ~0 probability; fall back to uniform over kept
        dead = probs.sum(axis=1) <= 1e-30
        probs[dead] = keep[dead]
        return _sample(probs / probs.sum(axis=1, keepdims=True), keep, rng)


def action_dropout(mask, rate, train, rng):
    """Randomly hide valid actions; a row never loses all of its actions."""
    if not train or rate <= 0:
        return mask
    keep = mask & (rng.random(mask.shape) >= rate)
    empty = ~keep.any(axis=1)
    keep[empty] = mask[empty]
    return keep


def query_arrays(queries):
    """(sources, relations, answers) arrays; a missing answer becomes -1."""
    rows = [tuple(q) for q in queries]
    src = np.array([int(q[0]) for q in rows], dtype=np.int64)
    rel = np.array([int(q[1]) for q in rows], dtype=np.int64)
    ans = np.array([-1 if len(q) < 3 or q[2] is None else int(q[2]) for q in rows], dtype=np.int64)
    return src, rel, ans


def _sample(probs, mask, rng):
    u = rng.random(len(probs))
    cum = np.cumsum(probs, axis=1)
    idx = (cum < u[:, None]).sum(axis=1)
    last_valid = mask.shape[1] - 1 - np.argmax(mask[:, ::-1], axis=1)
    idx = np.minimum(idx, last_valid)
    # float round-off can land on a masked slot; step back to the nearest valid one
    rows = np.arange(len(idx))
    while True:
        bad = ~mask[rows, idx]
        if not bad.any():
            return idx
        idx[bad] -= 1


def _forced_index(cand_r, cand_e, mask, r, e):
    if cand_e is None:
        hit = mask & (cand_r == np.asarray(r)[:, None])
    else:
        hit = mask & (cand_r == np.asarray(r)[:, None]) & (cand_e == np.asarray(e)[:, None])
    if not hit.any(axis=1).all():
        b = int(np.flatnonzero(~hit.any(axis=1))[0])
        raise ValueError(f"forced action ({r[b]}, {None if e is None else e[b]}) not available in row {b}")
    return np.argmax(hit, axis=1)


def export_trajectories(path, trajectories, vocab):
    """One line per walk: source, query relation, (relation, entity) per hop, reward."""
    with open(path, "w", encoding="utf-8") as f:
        for tr in trajectories:
            cols = [vocab.id2entity[tr.query.source], vocab.relation_name(tr.query.relation)]
            for s in tr.steps:
                cols += [vocab.relation_name(s.relation), vocab.id2entity[s.entity]]
            cols.append(repr(float(tr.reward)))
            f.write("\t".join(cols) + "\n")

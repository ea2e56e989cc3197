"""Terminal rewards: rule guidance, embedding-shaped hit, and their mix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rules import SMOOTHING, match


@dataclass
class RewardConfig:
    lam: float = 0.65
    smoothing: float = SMOOTHING
    split: str = "train"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"reward mix must lie in [0, 1], got {self.lam}")


def rule_reward(path_relations, query_relation, index, self_loop):
    """Confidence of the best rule whose body is the walked relation sequence, else 0."""
    rule = match(path_relations, query_relation, index, self_loop)
    return 0.0 if rule is None else rule.confidence


def hit_reward(source, query_relation, terminal, graph, model, split="train"):
    """1 if the predicted triple is a known fact, else the embedding shaping value."""
    if graph.contains(source, query_relation, terminal, split):
        return 1.0
    if model is None:
        return 0.0
    return float(model.shaping(source, query_relation, terminal))


def mix(rule_r, hit_r, lam):
    return lam * rule_r + (1.0 - lam) * hit_r


def total_reward(trajectory, graph, index, model, config):
    q = trajectory.query
    rr = rule_reward(trajectory.relations, q.relation, index, graph.vocab.self_loop)
    rh = hit_reward(q.source, q.relation, trajectory.terminal, graph, model, config.split)
    return mix(rr, rh, config.lam)


def batch_rule_rewards(batch, index, self_loop):
    return np.array([rule_reward(batch.relations[b], batch.query_relation[b], index, self_loop)
                     for b in range(len(batch))])


def batch_hit_rewards(batch, graph, model, split="train"):
    src, rel, term = batch.source, batch.query_relation, batch.terminal
    hit = np.array([graph.contains(int(s), int(r), int(o), split) for s, r, o in zip(src, rel, term)])
    out = np.ones(len(src))
    miss = ~hit
    if miss.any():
        out[miss] = model.shaping(src[miss], rel[miss], term[miss]) if model is not None else 0.0
    return out


def batch_total_rewards(batch, graph, index, model, config):
    rr = batch_rule_rewards(batch, index, graph.vocab.self_loop)
    rh = batch_hit_rewards(batch, graph, model, config.split)
    return mix(rr, rh, config.lam), rr, rh

"""Beam-search decoding, ranking metrics, rule-usage statistics and path export."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import core as C
from .agents import AgentState, query_arrays
from .kg import ConfigError, Query
from .rules import match


@dataclass
class RankedPrediction:
    query: Query
    entities: list
    paths: list          # per entity: tuple of (relation, entity) hops
    log_probs: list
    rule_matched: list = field(default_factory=list)

    def rank_of(self, entity):
        try:
            return self.entities.index(entity) + 1
        except ValueError:
            return None


@dataclass
class MetricsReport:
    hits1: float
    hits5: float
    hits10: float
    mrr: float
    rule_usage: float
    count: int

    def line(self):
        return (f"hits@1={self.hits1:.2f}\thits@5={self.hits5:.2f}\thits@10={self.hits10:.2f}"
                f"\tmrr={self.mrr:.2f}\trule_usage={self.rule_usage:.2f}\tqueries={self.count}")

    def table(self):
        rows = [("Hits@1", self.hits1), ("Hits@5", self.hits5), ("Hits@10", self.hits10),
                ("MRR", self.mrr), ("Rule usage %", self.rule_usage)]
        width = max(len(r[0]) for r in rows)
        out = [f"{'metric':<{width}}  value", f"{'-' * width}  ------"]
        out += [f"{name:<{width}}  {value:6.2f}" for name, value in rows]
        out.append(f"{'queries':<{width}}  {self.count:6d}")
        return "\n".join(out)


def _select(state, rows):
    def sel(stack):
        if stack is None:
            return None
        return [(C.Tensor(h.data[rows]), C.Tensor(c.data[rows])) for h, c in stack]

    return AgentState(state.t, state.entity[rows], state.source[rows], state.query_relation[rows],
                      sel(state.rel_state), sel(state.ent_state))


def _top_per_group(groups, scores, k, n_groups):
    """Indices of the ``k`` best scores within each group; ties keep input order."""
    order = np.lexsort((np.arange(len(scores)), -scores, groups))
    keep = []
    counts = np.zeros(n_groups, dtype=np.int64)
    for i in order:
        g = groups[i]
        if counts[g] < k and np.isfinite(scores[i]):
            keep.append(i)
            counts[g] += 1
    return np.asarray(keep, dtype=np.int64)


def beam_search(policy, queries, beam_width, rule_index=None):
    """Rank candidate answers for each query by best path log-probability.

    Each hop is two decisions (relation, then entity); the beam is pruned to
    ``beam_width`` entries per query after each decision. Paths ending at the
    same entity are merged, keeping the highest-scoring one.
    """
    if beam_width is None or beam_width < 1:
        raise ConfigError(f"beam width must be a positive integer, got {beam_width}")
    queries = [Query(*q) if not isinstance(q, Query) else q for q in queries]
    if not queries:
        return []
    src, qrel, _ = query_arrays(queries)
    nq = len(queries)
    single = policy.config.single_agent
    with C.no_grad():
        state = policy.init_state(src, qrel)
        owner = np.arange(nq)
        score = np.zeros(nq)
        paths = [() for _ in range(nq)]
        for t in range(policy.config.hops):
            if single:
                ar, ae, amask, logp = policy.action_log_probs(state)
                rows, cols = np.nonzero(amask)
                total = score[rows] + logp[rows, cols]
                keep = _top_per_group(owner[rows], total, beam_width, nq)
                rows, cols = rows[keep], cols[keep]
                r, e = ar[rows, cols], ae[rows, cols]
                score = total[keep]
            else:
                rd = policy.relation_distribution(state)
                rows, cols = np.nonzero(rd.mask)
                total = score[rows] + rd.logp.data[rows, cols]
                keep = _top_per_group(owner[rows], total, beam_width, nq)
                rows, r, score_r = rows[keep], rd.candidates[rows[keep], cols[keep]], total[keep]
                sub = _select(state, rows)
                ed, ae = policy.entity_distribution(sub, r)
                erows, ecols = np.nonzero(ed.mask)
                total = score_r[erows] + ed.logp.data[erows, ecols]
                keep = _top_per_group(owner[rows][erows], total, beam_width, nq)
                erows, ecols = erows[keep], ecols[keep]
                r, e = r[erows], ae[erows, ecols]
                rows = rows[erows]
                score = total[keep]
            owner = owner[rows]
            paths = [paths[p] + ((int(ri), int(ei)),) for p, ri, ei in zip(rows, r, e)]
            state = _select(state, rows)
            if t + 1 < policy.config.hops:
                state = policy.advance(state, r, e)

    predictions = []
    self_loop = policy.vocab.self_loop
    for qi, q in enumerate(queries):
        best = {}
        for i in np.flatnonzero(owner == qi):
            ent = paths[i][-1][1]
            if ent not in best or score[i] > best[ent][0]:
                best[ent] = (float(score[i]), paths[i])
        ranked = sorted(best.items(), key=lambda kv: (-kv[1][0], kv[0]))
        pred = RankedPrediction(q, [e for e, _ in ranked], [v[1] for _, v in ranked], [v[0] for _, v in ranked])
        if rule_index is not None:
            pred.rule_matched = [match([r for r, _ in p], q.relation, rule_index, self_loop) is not None
                                 for p in pred.paths]
        predictions.append(pred)
    return predictions


def ranks(predictions, graph, mode="filtered"):
    """(raw_or_filtered_rank or None) per prediction."""
    if mode not in ("raw", "filtered"):
        raise ConfigError(f"ranking mode must be raw or filtered, got {mode!r}")
    out = []
    for pred in predictions:
        q = pred.query
        if q.answer is None:
            raise ValueError("evaluation needs queries with known answers")
        pos = pred.rank_of(q.answer)
        if pos is None:
            out.append(None)
            continue
        if mode == "filtered":
            known = graph.known_answers.get((q.source, q.relation), frozenset())
            above = pred.entities[:pos - 1]
            pos = 1 + sum(1 for e in above if e not in known)
        out.append(pos)
    return out


def evaluate(predictions, graph, mode="filtered", rule_index=None):
    """Hits@{1,5,10} and MRR, all in percent."""
    rk = ranks(predictions, graph, mode)
    n = len(rk)
    if n == 0:
        return MetricsReport(0.0, 0.0, 0.0, 0.0, 0.0, 0)

    def hits(k):
        return 100.0 * sum(1 for r in rk if r is not None and r <= k) / n

    mrr = 100.0 * sum(1.0 / r for r in rk if r is not None) / n
    usage = rule_usage(predictions, rule_index, graph.vocab.self_loop) if rule_index is not None else 0.0
    return MetricsReport(hits(1), hits(5), hits(10), mrr, usage, n)


def rule_usage(predictions, rule_index, self_loop):
    """Percent of queries whose top-ranked path is the body of a rule for the query relation."""
    if not predictions:
        return 0.0
    used = 0
    for pred in predictions:
        if not pred.paths:
            continue
        rels = [r for r, _ in pred.paths[0]]
        if match(rels, pred.query.relation, rule_index, self_loop) is not None:
            used += 1
    return 100.0 * used / len(predictions)


def format_path(pred, i, vocab):
    q = pred.query
    parts = [vocab.id2entity[q.source]]
    for r, e in pred.paths[i]:
        parts.append(f"--{vocab.relation_name(r)}--> {vocab.id2entity[e]}")
    matched = pred.rule_matched[i] if pred.rule_matched else False
    return (" ".join(parts) + f"  [query: {vocab.relation_name(q.relation)}]"
            f"  [logprob: {pred.log_probs[i]:.4f}]  [rule-matched: {'yes' if matched else 'no'}]")


def export_paths(predictions, vocab, path, top=1):
    """Write one block per query holding its ``top`` best paths with entity names."""
    if not predictions:
        raise ValueError("nothing to export")
    with open(path, "w", encoding="utf-8") as f:
        for pred in predictions:
            q = pred.query
            answer = vocab.id2entity[q.answer] if q.answer is not None else "?"
            f.write(f"# ({vocab.id2entity[q.source]}, {vocab.relation_name(q.relation)}, {answer})\n")
            for i in range(min(top, len(pred.paths))):
                f.write(format_path(pred, i, vocab) + "\n")
            f.write("\n")


def write_report(path, report, split, mode):
    with open(path, "w", encoding="utf-8") as f:
        f.write("split\tmode\thits1\thits5\thits10\tmrr\trule_usage\tqueries\n")
        f.write(f"{split}\t{mode}\t{report.hits1:.4f}\t{report.hits5:.4f}\t{report.hits10:.4f}"
                f"\t{report.mrr:.4f}\t{report.rule_usage:.4f}\t{report.count}\n")

"""Cyclic Horn-rule mining by path sampling, and rule lookup for rewards.

A rule ``head(X,Y) <= b1(X,A2), ..., bn(An,Y)`` is stored as a head relation
id plus the body relation sequence. Inverse relation ids in a body stand for
atoms with swapped variables, which is also how they are written to disk.
"""

from __future__ import annotations

import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

SMOOTHING = 5.0
DEFAULT_GROUNDING_CAP = 10_000


@dataclass(frozen=True)
class Rule:
    head: int
    body: tuple
    confidence: float = 0.0
    support: int = 0
    body_count: int = 0
    approximate: bool = False

    @property
    def key(self):
        return (self.head, self.body)


def confidence(support, body_count, smoothing=SMOOTHING):
    if body_count == 0:
        return 0.0
    return support / (body_count + smoothing)


def _sort_key(rule):
    return (-rule.confidence, len(rule.body), rule.body)


class RuleIndex:
    """Rules grouped by head, sorted by descending confidence."""

    def __init__(self, rules=(), threshold=0.0):
        self.threshold = threshold
        best = {}
        for rule in rules:
            if rule.confidence < threshold:
                continue
            prev = best.get(rule.key)
            if prev is None or rule.confidence > prev.confidence:
                best[rule.key] = rule
        self._by_key = best
        by_head = defaultdict(list)
        for rule in best.values():
            by_head[rule.head].append(rule)
        self.by_head = {h: sorted(rs, key=_sort_key) for h, rs in by_head.items()}

    def __len__(self):
        return len(self._by_key)

    def __iter__(self):
        for head in sorted(self.by_head):
            yield from self.by_head[head]

    def rules_for(self, head):
        return self.by_head.get(head, [])

    def lookup(self, head, body):
        return self._by_key.get((head, tuple(body)))


@dataclass
class MinerConfig:
    samples: int = 10_000
    max_rule_length: int = 3
    threshold: float = 0.15
    smoothing: float = SMOOTHING
    grounding_cap: int = DEFAULT_GROUNDING_CAP
    seed: int = 0


def sample_paths(graph, count, max_len, seed):
    """Random walks ``[e0, r1, e1, ..., rn, en]`` over the unpruned train graph.

    Start entities are uniform over entities with outgoing edges; the length
    ``n`` is drawn uniformly from ``1..max_len``; each step is uniform over the
    current entity's edges. A walk that reaches a dead end stops early.
    """
    starts = [e for e, pairs in enumerate(graph.full_adjacency) if pairs]
    if not starts:
        return []
    rng = np.random.default_rng(seed)
    paths = []
    for _ in range(count):
        e = starts[rng.integers(len(starts))]
        n = int(rng.integers(1, max_len + 1))
        path = [e]
        for _ in range(n):
            pairs = graph.full_adjacency[e]
            if not pairs:
                break
            r, e = pairs[rng.integers(len(pairs))]
            path += [r, e]
        paths.append(tuple(path))
    return paths


def generalize(path, graph):
    """Candidate rules closing the walk: one per train relation linking its ends."""
    body = tuple(path[1::2])
    if not body:
        return []
    e0, en = path[0], path[-1]
    vocab = graph.vocab
    out = []
    for r in graph.pair_relations.get((e0, en), ()):
        if r >= vocab.num_relations:
            continue  # heads are data relations only
        if body == (r,):
            continue  # r <= r is a tautology
        out.append(Rule(head=r, body=body))
    return out


def ground_body(graph, source, body, limit=None):
    """All entities reachable from ``source`` along the relation chain ``body``."""
    frontier = {source}
    for r in body:
        nxt = set()
        for e in frontier:
            nxt.update(graph.objects.get((e, r), ()))
        frontier = nxt
        if not frontier:
            break
    return frontier


def score_rule(rule, graph, grounding_cap=DEFAULT_GROUNDING_CAP, smoothing=SMOOTHING):
    """Count distinct body groundings (X, Y) and how many are closed by the head."""
    body_count = support = 0
    approximate = False
    for x in graph.subjects_of.get(rule.body[0], ()):
        ys = ground_body(graph, x, rule.body)
        if not ys:
            continue
        ys = sorted(ys)
        if body_count + len(ys) > grounding_cap:
            ys = ys[: grounding_cap - body_count]
            approximate = True
        body_count += len(ys)
        support += sum(1 for y in ys if (x, rule.head, y) in graph.train_set)
        if approximate:
            break
    return Rule(rule.head, rule.body, confidence(support, body_count, smoothing),
                support, body_count, approximate)


def mine(graph, config=MinerConfig()):
    """Sample walks, generalize them into rules, score each once, keep conf >= threshold."""
    candidates = {}
    for path in sample_paths(graph, config.samples, config.max_rule_length, config.seed):
        for rule in generalize(path, graph):
            candidates.setdefault(rule.key, rule)
    scored = [score_rule(r, graph, config.grounding_cap, config.smoothing)
              for _, r in sorted(candidates.items())]
    index = RuleIndex(scored, threshold=config.threshold)
    log.info("mined %d candidate rules, %d kept at threshold %.2f",
             len(candidates), len(index), config.threshold)
    return index


def strip_self_loops(relations, self_loop):
    relations = list(relations)
    while relations and relations[-1] == self_loop:
        relations.pop()
    return tuple(relations)


def match(path_relations, query_relation, index, self_loop):
    """Best rule with head ``query_relation`` whose body equals the path (trailing self-loops dropped)."""
    body = strip_self_loops(path_relations, self_loop)
    if not body:
        return None
    return index.lookup(query_relation, body)


@dataclass
class RulePrecision:
    rule: Rule
    precision: float
    hits: int
    predictions: int


def rank_rules_by_accuracy(index, eval_triples, graph):
    """Precision of each rule's predictions for the eval queries it fires on.

    For every eval source with the rule's head relation, the body is grounded
    over the train graph; objects already known in train are not counted as
    predictions. Rules without predictions are left out.
    """
    answers = defaultdict(set)
    for s, r, o in eval_triples:
        answers[(s, r)].add(o)
    sources = defaultdict(set)
    for s, r in answers:
        sources[r].add(s)
    report = []
    for rule in index:
        hits = preds = 0
        for s in sorted(sources.get(rule.head, ())):
            for y in ground_body(graph, s, rule.body):
                if (s, rule.head, y) in graph.train_set:
                    continue
                preds += 1
                hits += y in answers[(s, rule.head)]
        if preds:
            report.append(RulePrecision(rule, hits / preds, hits, preds))
    report.sort(key=lambda p: (-p.precision, _sort_key(p.rule)))
    return report


# ---------------------------------------------------------------- rule files

def format_rule(rule, vocab):
    n = len(rule.body)
    names = ["X"] + [f"A{i}" for i in range(2, n + 1)] + ["Y"]
    atoms = []
    for i, r in enumerate(rule.body):
        a, b = names[i], names[i + 1]
        if vocab.is_inverse(r):
            atoms.append(f"{vocab.relation_name(vocab.inv(r))}({b},{a})")
        else:
            atoms.append(f"{vocab.relation_name(r)}({a},{b})")
    return f"{vocab.relation_name(rule.head)}(X,Y) <= " + ", ".join(atoms)


def save_rules(path, index, vocab):
    with open(path, "w", encoding="utf-8") as f:
        for rule in index:
            f.write(f"{rule.confidence!r}\t{rule.support}\t{rule.body_count}\t{format_rule(rule, vocab)}\n")


_ATOM = re.compile(r"\s*([^(),]+?)\(([^,()]+),([^,()]+)\)\s*")


class RuleParseError(ValueError):
    pass


def parse_rule(text, vocab):
    head_txt, sep, body_txt = text.partition("<=")
    if not sep:
        raise RuleParseError(f"missing '<=' in {text!r}")
    m = _ATOM.fullmatch(head_txt)
    if not m:
        raise RuleParseError(f"bad head atom {head_txt!r}")
    head = vocab.relation_id(m.group(1).strip())
    x, y = m.group(2).strip(), m.group(3).strip()
    atoms = [a for a in re.split(r"\)\s*,", body_txt) if a.strip()]
    body = []
    cur = x
    for i, atom in enumerate(atoms):
        atom = atom.strip()
        if not atom.endswith(")"):
            atom += ")"
        m = _ATOM.fullmatch(atom)
        if not m:
            raise RuleParseError(f"bad body atom {atom!r}")
        r = vocab.relation_id(m.group(1).strip())
        a, b = m.group(2).strip(), m.group(3).strip()
        if a == cur:
            body.append(r)
            cur = b
        elif b == cur:
            body.append(vocab.inv(r))
            cur = a
        else:
            raise RuleParseError(f"atom {atom!r} does not continue the chain at {cur}")
    if cur != y or not body:
        raise RuleParseError(f"body of {text!r} is not a chain from {x} to {y}")
    return head, tuple(body)


def load_rules(path, vocab, threshold=0.0):
    rules = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                conf, support, body_count, text = line.rstrip("\n").split("\t")
                head, body = parse_rule(text, vocab)
            except (ValueError, KeyError) as exc:
                raise RuleParseError(f"{path}:{lineno}: {exc}") from exc
            rules.append(Rule(head, body, float(conf), int(support), int(body_count)))
    return RuleIndex(rules, threshold=threshold)

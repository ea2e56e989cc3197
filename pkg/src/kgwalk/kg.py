"""Triple storage, vocabulary, reverse links and the pruned action space."""

from __future__ import annotations

import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .pagerank import PageRankConfig, compute_pagerank

log = logging.getLogger(__name__)

START = "<START>"
SELF_LOOP = "<SELF_LOOP>"
PAD = "<PAD>"
INV_SUFFIX = "_inv"


class Triple(NamedTuple):
    subject: int
    relation: int
    object: int


class Query(NamedTuple):
    source: int
    relation: int
    answer: int | None = None


class TripleParseError(ValueError):
    pass


class UnknownIdError(KeyError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class Vocabulary:
    """Entity and relation name <-> id maps.

    Data relations occupy ids ``0..R-1``. Once frozen, inverse relations take
    ``R..2R-1`` (``inv(r) = r + R``), followed by START, SELF_LOOP and PAD.
    """

    entity2id: dict = field(default_factory=dict)
    id2entity: list = field(default_factory=list)
    relation2id: dict = field(default_factory=dict)
    id2relation: list = field(default_factory=list)
    frozen: bool = False

    def add_entity(self, name):
        if name not in self.entity2id:
            if self.frozen:
                raise UnknownIdError(f"vocabulary is frozen; unseen entity {name!r}")
            self.entity2id[name] = len(self.id2entity)
            self.id2entity.append(name)
        return self.entity2id[name]

    def add_relation(self, name):
        if name not in self.relation2id:
            if self.frozen:
                raise UnknownIdError(f"vocabulary is frozen; unseen relation {name!r}")
            self.relation2id[name] = len(self.id2relation)
            self.id2relation.append(name)
        return self.relation2id[name]

    def freeze(self):
        self.frozen = True
        return self

    @property
    def num_entities(self):
        return len(self.id2entity)

    @property
    def num_relations(self):
        """Number of data relations (without inverses and reserved ids)."""
        return len(self.id2relation)

    @property
    def num_relation_ids(self):
        return 2 * self.num_relations + 3

    @property
    def start_relation(self):
        return 2 * self.num_relations

    @property
    def self_loop(self):
        return 2 * self.num_relations + 1

    @property
    def pad_relation(self):
        return 2 * self.num_relations + 2

    def inv(self, r):
        R = self.num_relations
        if 0 <= r < R:
            return r + R
        if R <= r < 2 * R:
            return r - R
        raise UnknownIdError(f"relation id {r} has no inverse")

    def is_inverse(self, r):
        return self.num_relations <= r < 2 * self.num_relations

    def relation_name(self, r):
        R = self.num_relations
        if r < R:
            return self.id2relation[r]
        if r < 2 * R:
            return self.id2relation[r - R] + INV_SUFFIX
        return (START, SELF_LOOP, PAD)[r - 2 * R]

    def relation_id(self, name):
        if name in self.relation2id:
            return self.relation2id[name]
        if name.endswith(INV_SUFFIX) and name[: -len(INV_SUFFIX)] in self.relation2id:
            return self.inv(self.relation2id[name[: -len(INV_SUFFIX)]])
        special = {START: self.start_relation, SELF_LOOP: self.self_loop, PAD: self.pad_relation}
        if name in special:
            return special[name]
        raise UnknownIdError(f"unknown relation {name!r}")

    def entity_id(self, name):
        try:
            return self.entity2id[name]
        except KeyError:
            raise UnknownIdError(f"unknown entity {name!r}") from None

    def save(self, directory):
        """Write ``entities.tsv`` and ``relations.tsv`` (``name<TAB>id``)."""
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "entities.tsv"), "w", encoding="utf-8") as f:
            for i, name in enumerate(self.id2entity):
                f.write(f"{name}\t{i}\n")
        with open(os.path.join(directory, "relations.tsv"), "w", encoding="utf-8") as f:
            for i in range(self.num_relation_ids):
                f.write(f"{self.relation_name(i)}\t{i}\n")

    @classmethod
    def load(cls, directory):
        vocab = cls()
        with open(os.path.join(directory, "entities.tsv"), encoding="utf-8") as f:
            for line in f:
                name, i = line.rstrip("\n").split("\t")
                if vocab.add_entity(name) != int(i):
                    raise ValueError(f"entity ids in {directory} are not dense")
        with open(os.path.join(directory, "relations.tsv"), encoding="utf-8") as f:
            rows = [line.rstrip("\n").split("\t") for line in f]
        n_data = (len(rows) - 3) // 2
        for name, i in rows[:n_data]:
            if vocab.add_relation(name) != int(i):
                raise ValueError(f"relation ids in {directory} are not dense")
        return vocab.freeze()


def load_triples(path, vocab=None, *, extend=True, unseen="skip"):
    """Parse a ``subject<TAB>relation<TAB>object`` file.

    With ``extend`` the vocabulary grows in first-appearance order. Otherwise
    lines with unseen names are skipped with a warning (``unseen="skip"``) or
    raise (``unseen="error"``).
    """
    if vocab is None:
        vocab = Vocabulary()
    if unseen not in ("skip", "error"):
        raise ConfigError(f"unseen policy must be 'skip' or 'error', got {unseen!r}")
    triples = []
    seen = set()
    skipped = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise TripleParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            s, r, o = parts
            if extend and not vocab.frozen:
                t = Triple(vocab.add_entity(s), vocab.add_relation(r), vocab.add_entity(o))
            else:
                if s not in vocab.entity2id or o not in vocab.entity2id or r not in vocab.relation2id:
                    if unseen == "error":
                        raise UnknownIdError(f"{path}:{lineno}: unseen name in {line!r}")
                    skipped += 1
                    continue
                t = Triple(vocab.entity2id[s], vocab.relation2id[r], vocab.entity2id[o])
            if t not in seen:
                seen.add(t)
                triples.append(t)
    if skipped:
        log.warning("%s: skipped %d triples with unseen entities or relations", path, skipped)
    return triples, vocab


def add_reverse_links(triples, vocab):
    """Each triple followed by its reverse ``(o, inv(r), s)``; duplicates dropped."""
    out = []
    seen = set()
    for s, r, o in triples:
        for t in (Triple(s, r, o), Triple(o, vocab.inv(r), s)):
            if t not in seen:
                seen.add(t)
                out.append(t)
    return out


def build_adjacency(triples, pagerank_scores, eta, num_entities):
    """Per-entity outgoing (relation, entity) pairs, capped at ``eta``.

    Pairs are ranked by the neighbour's PageRank score (descending, ties by
    ascending ids); the kept pairs are returned in (relation, entity) order.
    The SELF_LOOP pair is added by :class:`KnowledgeGraph`, not here.
    """
    if eta is None or eta <= 0:
        raise ConfigError(f"degree cap must be a positive integer, got {eta}")
    pagerank_scores = np.asarray(pagerank_scores)
    out = defaultdict(set)
    for s, r, o in triples:
        out[s].add((r, o))
    adjacency = [[] for _ in range(num_entities)]
    for e, pairs in out.items():
        pairs = sorted(pairs)
        if len(pairs) > eta:
            pairs = sorted(pairs, key=lambda p: (-pagerank_scores[p[1]], p[0], p[1]))[:eta]
            pairs.sort()
        adjacency[e] = pairs
    return adjacency


class KnowledgeGraph:
    """Immutable KG over a frozen vocabulary.

    ``adjacency[e]`` lists the pruned walkable (relation, entity) pairs for
    ``e`` followed by ``(SELF_LOOP, e)``.
    """

    def __init__(self, vocab, train, dev=(), test=(), eta=None, pagerank_scores=None,
                 pagerank_config=None):
        vocab.freeze()
        self.vocab = vocab
        self.train = list(train)
        self.dev = list(dev)
        self.test = list(test)
        self.eta = eta
        E = vocab.num_entities

        self.train_reversed = add_reverse_links(self.train, vocab)
        self.train_set = frozenset(self.train_reversed)
        self.all_set = frozenset(add_reverse_links(self.train + self.dev + self.test, vocab))
        self._split_sets = {"train": self.train_set,
                            "train+dev": frozenset(add_reverse_links(self.train + self.dev, vocab)),
                            "all": self.all_set}

        if pagerank_scores is None:
            pagerank_scores = compute_pagerank(
                E, [(s, o) for s, _, o in self.train_reversed], pagerank_config or PageRankConfig())
        self.pagerank = np.asarray(pagerank_scores, dtype=np.float64)
        if self.pagerank.shape != (E,):
            raise ValueError(f"pagerank scores cover {self.pagerank.shape} entities, expected {E}")

        cap = eta if eta is not None else max(1, len(self.train_reversed))
        pruned = build_adjacency(self.train_reversed, self.pagerank, cap, E)
        loop = vocab.self_loop
        self.adjacency = [tuple(pairs) + ((loop, e),) for e, pairs in enumerate(pruned)]

        # unpruned index used by the rule miner: (subject, relation) -> sorted objects
        by_sr = defaultdict(list)
        for s, r, o in self.train_reversed:
            by_sr[(s, r)].append(o)
        self.objects = {k: tuple(sorted(v)) for k, v in by_sr.items()}
        self.subjects_of = defaultdict(set)
        for s, r in self.objects:
            self.subjects_of[r].add(s)
        self.subjects_of = {r: tuple(sorted(v)) for r, v in self.subjects_of.items()}
        pair_rel = defaultdict(set)
        for s, r, o in self.train_reversed:
            pair_rel[(s, o)].add(r)
        self.pair_relations = {k: tuple(sorted(v)) for k, v in pair_rel.items()}
        self.full_adjacency = [[] for _ in range(E)]
        for (s, r), objs in sorted(self.objects.items()):
            self.full_adjacency[s].extend((r, o) for o in objs)

        answers = defaultdict(set)
        for s, r, o in self.train + self.dev + self.test:
            answers[(s, r)].add(o)
        self.known_answers = {k: frozenset(v) for k, v in answers.items()}
        self._build_action_arrays()

    def _build_action_arrays(self):
        # per entity: distinct relations, and relation -> successor entities
        self.action_relations = []
        self.action_targets = []
        for pairs in self.adjacency:
            targets = defaultdict(list)
            for r, e in pairs:
                targets[r].append(e)
            self.action_relations.append(np.array(sorted(targets), dtype=np.int64))
            self.action_targets.append({r: np.array(v, dtype=np.int64) for r, v in targets.items()})

    @property
    def num_entities(self):
        return self.vocab.num_entities

    def actions_from(self, entity):
        if not 0 <= entity < self.num_entities:
            raise UnknownIdError(f"unknown entity id {entity}")
        return list(self.adjacency[entity])

    def contains(self, subject, relation, obj, split="train"):
        try:
            return Triple(subject, relation, obj) in self._split_sets[split]
        except KeyError:
            raise ConfigError(f"unknown split-set {split!r}; use train, train+dev or all") from None

    def queries(self, split):
        triples = {"train": self.train, "dev": self.dev, "test": self.test}[split]
        return [Query(s, r, o) for s, r, o in triples]

    def split_triples(self, split):
        return {"train": self.train, "dev": self.dev, "test": self.test}[split]


def load_dataset(data_dir, eta=None, unseen="skip", pagerank_scores=None, pagerank_config=None):
    """Load ``train.txt``/``dev.txt``/``test.txt`` from a directory into a KnowledgeGraph."""
    train, vocab = load_triples(os.path.join(data_dir, "train.txt"))
    vocab.freeze()
    splits = {}
    for name in ("dev", "test"):
        path = os.path.join(data_dir, f"{name}.txt")
        splits[name] = load_triples(path, vocab, extend=False, unseen=unseen)[0] if os.path.exists(path) else []
    return KnowledgeGraph(vocab, train, splits["dev"], splits["test"], eta=eta,
                          pagerank_scores=pagerank_scores, pagerank_config=pagerank_config)

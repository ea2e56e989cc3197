"""Small seeded knowledge graphs for tests and the bundled benchmark."""

from __future__ import annotations

import os

import numpy as np


def kinship(families=30, branching=2, generations=4, noise_per_entity=1.0, held_out=12, seed=0):
    """Family trees with ``grandparentOf(X,Y) <= parentOf(X,A), parentOf(A,Y)`` planted.

    Every grandparent pair is a fact; ``held_out`` of them go to dev and as
    many to test. ``knows`` edges between random people act as noise.
    Returns (train, dev, test) lists of name triples.
    """
    rng = np.random.default_rng(seed)
    parent, people = [], []
    for f in range(families):
        level = [f"f{f}_0"]
        people += level
        count = 1
        for _ in range(generations - 1):
            nxt = []
            for p in level:
                for _ in range(branching):
                    child = f"f{f}_{count}"
                    count += 1
                    parent.append((p, child))
                    nxt.append(child)
            people += nxt
            level = nxt
    children = {}
    for p, c in parent:
        children.setdefault(p, []).append(c)
    grand = [(g, c) for g, kids in children.items() for k in kids for c in children.get(k, [])]

    order = rng.permutation(len(grand))
    dev_idx, test_idx = set(order[:held_out]), set(order[held_out:2 * held_out])
    train = [(p, "parentOf", c) for p, c in parent]
    dev, test = [], []
    for i, (g, c) in enumerate(grand):
        t = (g, "grandparentOf", c)
        (dev if i in dev_idx else test if i in test_idx else train).append(t)
    n_noise = int(noise_per_entity * len(people))
    seen = set()
    while len(seen) < n_noise:
        a, b = rng.choice(len(people), size=2, replace=False)
        seen.add((people[a], people[b]))
    train += [(a, "knows", b) for a, b in sorted(seen)]
    order = rng.permutation(len(train))
    train = [train[i] for i in order]
    return train, dev, test


def tiny_groups(seed=0, held_out=6):
    """10 entities in two groups of 5 with a reflexive ``sameGroup`` relation.

    Also a ``leads`` relation from each group's first member to the others.
    """
    rng = np.random.default_rng(seed)
    groups = [[f"e{i}" for i in range(5)], [f"e{i}" for i in range(5, 10)]]
    facts = []
    for g in groups:
        facts += [(a, "sameGroup", b) for a in g for b in g]
        facts += [(g[0], "leads", b) for b in g[1:]]
    order = rng.permutation(len(facts))
    facts = [facts[i] for i in order]
    # keep held-out facts whose entities still appear in train
    dev, train = [], []
    for t in facts:
        if len(dev) < held_out and t[1] == "sameGroup" and t[0] != t[2]:
            dev.append(t)
        else:
            train.append(t)
    return train, dev, []


def write_dataset(directory, train, dev, test):
    os.makedirs(directory, exist_ok=True)
    for name, rows in (("train", train), ("dev", dev), ("test", test)):
        with open(os.path.join(directory, f"{name}.txt"), "w", encoding="utf-8") as f:
            for s, r, o in rows:
                f.write(f"{s}\t{r}\t{o}\n")


def build_graph(train, dev, test, eta=None):
    """In-memory KnowledgeGraph from name triples (train defines the vocabulary)."""
    from .kg import KnowledgeGraph, Triple, Vocabulary

    vocab = Vocabulary()
    tr = []
    for s, r, o in train:
        t = Triple(vocab.add_entity(s), vocab.add_relation(r), vocab.add_entity(o))
        if t not in tr:
            tr.append(t)
    vocab.freeze()

    def ids(rows):
        out = []
        for s, r, o in rows:
            if s in vocab.entity2id and o in vocab.entity2id and r in vocab.relation2id:
                out.append(Triple(vocab.entity2id[s], vocab.relation2id[r], vocab.entity2id[o]))
        return out

    return KnowledgeGraph(vocab, tr, ids(dev), ids(test), eta=eta)

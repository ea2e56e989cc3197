"""PageRank by power iteration over a sparse column-stochastic matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class PageRankConfig:
    damping: float = 0.85
    max_iterations: int = 100
    tolerance: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.damping < 1.0:
            raise ValueError(f"damping must be in (0, 1), got {self.damping}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")


def compute_pagerank(num_nodes, edges, config=PageRankConfig()):
    """Scores for nodes ``0..num_nodes-1`` given directed ``(src, dst)`` edges.

    Parallel edges are collapsed. Mass on dangling nodes is spread uniformly.
    Stops when the L1 change drops below ``config.tolerance``.
    """
    if num_nodes <= 0:
        raise ValueError("graph has no nodes")
    n = num_nodes
    edges = np.asarray(sorted(set(map(tuple, edges))), dtype=np.int64).reshape(-1, 2)
    src, dst = edges[:, 0], edges[:, 1]
    out_deg = np.bincount(src, minlength=n).astype(np.float64)
    dangling = out_deg == 0
    weights = 1.0 / out_deg[src] if len(src) else np.zeros(0)
    # M[dst, src] = 1 / outdeg(src)
    M = sp.csr_matrix((weights, (dst, src)), shape=(n, n))

    d = config.damping
    r = np.full(n, 1.0 / n)
    for _ in range(config.max_iterations):
        new = d * (M @ r + r[dangling].sum() / n) + (1.0 - d) / n
        new /= new.sum()
        delta = np.abs(new - r).sum()
        r = new
        if delta < config.tolerance:
            break
    return r


def save_scores(path, scores):
    with open(path, "w", encoding="utf-8") as f:
        for i, s in enumerate(scores):
            f.write(f"{i}\t{float(s)!r}\n")


def load_scores(path):
    with open(path, encoding="utf-8") as f:
        rows = [line.rstrip("\n").split("\t") for line in f if line.strip()]
    scores = np.zeros(len(rows))
    for i, s in rows:
        scores[int(i)] = float(s)
    return scores

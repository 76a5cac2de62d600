"""Brute-force reference implementations used for verification.

Everything here is written with plain loops and the ``math`` module so that it
shares no code path with the vectorised implementations it checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import NodePartition


def _normalized_support(a: np.ndarray, theta: float) -> list[list[bool]]:
    n = len(a)
    off = [float(a[i][j]) for i in range(n) for j in range(n) if i != j]
    lo = min(off) if off else 0.0
    hi = max(off) if off else 0.0
    out = [[False] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            v = float(a[i][j])
            s = (v - lo) / (hi - lo) if hi > lo else (1.0 if v > 0 else 0.0)
            out[i][j] = s > theta
    for i in range(n):
        for j in range(n):
            out[i][j] = out[i][j] or out[j][i]
    return out


def brute_select_pairs(a_h, a_l, partition: NodePartition, theta: float, two_hop_offset: int = 0):
    """Exhaustive pair classification; returns (positives, negatives) as sorted lists.

    ``two_hop_offset`` shifts the mediator index and exists only to inject a
    deliberate fault for mutation testing.
    """
    h = _normalized_support(a_h, theta)
    l = _normalized_support(a_l, theta)
    v_l, v_d = list(partition.v_l), list(partition.v_d)
    pos, neg = [], []
    for i in range(len(v_l)):
        for j in range(i + 1, len(v_l)):
            gi, gj = v_l[i], v_l[j]
            linked = h[gi][gj]
            if not linked:
                for k in v_d:
                    kk = k + two_hop_offset
                    if 0 <= kk < len(h) and h[kk][gi] and h[kk][gj]:
                        linked = True
                        break
            if linked:
                pos.append((i, j))
            elif l[i][j]:
                neg.append((i, j))
    return pos, neg


def _kl_softmax(zs: Sequence[float], zt: Sequence[float]) -> float:
    ms, mt = max(zs), max(zt)
    ls = math.log(math.fsum(math.exp(v - ms) for v in zs)) + ms
    lt = math.log(math.fsum(math.exp(v - mt) for v in zt)) + mt
    return math.fsum(math.exp(s - ls) * ((s - ls) - (t - lt)) for s, t in zip(zs, zt))


def brute_gtd(s_nodes, t_nodes, pos, neg, eps: float) -> float:
    """Topology loss with a linear kernel by direct summation."""
    dot = lambda e, i, j: math.fsum(float(u) * float(v) for u, v in zip(e[i], e[j]))
    if not pos:
        return 0.0
    l_pos = _kl_softmax([dot(s_nodes, i, j) for i, j in pos], [dot(t_nodes, i, j) for i, j in pos])
    neg_avg = 0.0
    if neg:
        neg_avg = _kl_softmax([dot(s_nodes, i, j) for i, j in neg], [dot(t_nodes, i, j) for i, j in neg]) / len(neg)
    return (l_pos / len(pos)) / (neg_avg + eps)


def brute_info_nce(query, positives, negatives, tau: float) -> float:
    """Mean over positives of -log(e^{q.p/t} / (e^{q.p/t} + sum_neg e^{q.k/t}))."""
    dot = lambda u, v: math.fsum(float(a) * float(b) for a, b in zip(u, v))
    neg_terms = [math.exp(dot(query, k) / tau) for k in negatives]
    total = 0.0
    for p in positives:
        e = math.exp(dot(query, p) / tau)
        total += -math.log(e / (e + math.fsum(neg_terms)))
    return total / len(positives)


@dataclass
class OracleInstance:
    a_h: np.ndarray
    a_l: np.ndarray
    partition: NodePartition
    theta: float
    s_nodes: np.ndarray
    t_nodes: np.ndarray

    def to_dict(self) -> dict:
        return {
            "a_h": self.a_h.tolist(),
            "a_l": self.a_l.tolist(),
            "v_l": list(self.partition.v_l),
            "v_d": list(self.partition.v_d),
            "theta": self.theta,
            "s_nodes": self.s_nodes.tolist(),
            "t_nodes": self.t_nodes.tolist(),
        }


def _random_adjacency(rng: np.random.Generator, n: int, density: float) -> np.ndarray:
    w = rng.uniform(0.0, 1.0, (n, n))
    w = np.triu(w * (rng.uniform(size=(n, n)) < density), k=1)
    return w + w.T


def random_instance(rng: np.random.Generator, max_nodes: int, h2h: bool | None = None) -> OracleInstance:
    """A random teacher graph, student graph, partition and embeddings.

    Thresholds are drawn from a small grid so that ties with normalized
    entries are impossible.
    """
    m = int(rng.integers(2, max_nodes + 1))
    if h2h is None:
        h2h = bool(rng.uniform() < 0.25)
    n = m if h2h else int(rng.integers(1, m + 1))
    v_l = tuple(sorted(rng.choice(m, size=n, replace=False).tolist()))
    v_d = tuple(i for i in range(m) if i not in set(v_l))
    a_h = _random_adjacency(rng, m, rng.uniform(0.2, 0.9))
    a_l = _random_adjacency(rng, n, rng.uniform(0.2, 0.9))
    theta = float(rng.choice([0.0, 0.25, 0.5]))
    D = int(rng.integers(1, 5))
    return OracleInstance(
        a_h, a_l, NodePartition(tuple(range(m)), v_l, v_d), theta, rng.normal(size=(n, D)), rng.normal(size=(n, D + 1))
    )

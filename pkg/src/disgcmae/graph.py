"""EEG graph data model, density reduction, drop augmentation and masking."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

TIERS = ("HD", "MD", "LD", "VLD")
VIEW_KINDS = ("query", "key", "reconstructed-query", "reconstructed-key")


@dataclass(frozen=True, eq=False)
class EegGraph:
    x: np.ndarray
    a: np.ndarray
    node_ids: tuple[int, ...]
    density_tier: str = "HD"
    label: int | None = None
    source_id: str = ""

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        a = np.asarray(self.a, dtype=np.float64)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "node_ids", tuple(int(i) for i in self.node_ids))
        n = x.shape[0]
        if a.shape != (n, n):
            raise ValueError(f"adjacency shape {a.shape} does not match {n} nodes")
        if len(self.node_ids) != n or len(set(self.node_ids)) != n:
            raise ValueError("node_ids must be n distinct indices")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def check(self, atol: float = 0.0) -> None:
        """Raise if the adjacency is not symmetric, zero-diagonal and nonnegative."""
        if not np.allclose(self.a, self.a.T, atol=atol, rtol=0):
            raise ValueError("adjacency not symmetric")
        if np.any(np.diag(self.a) != 0):
            raise ValueError("adjacency diagonal not zero")
        if np.any(self.a < 0):
            raise ValueError("negative adjacency entry")


@dataclass(frozen=True)
class NodePartition:
    v_h: tuple[int, ...]
    v_l: tuple[int, ...]
    v_d: tuple[int, ...]

    @property
    def m(self) -> int:
        return len(self.v_h)

    @property
    def n(self) -> int:
        return len(self.v_l)

    @property
    def is_h2h(self) -> bool:
        return len(self.v_d) == 0


@dataclass(frozen=True, eq=False)
class GraphView:
    graph: EegGraph
    kind: str
    source_id: str
    dropped_nodes: tuple[int, ...] = ()
    dropped_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    origin: str = ""

    def __post_init__(self):
        if self.kind not in VIEW_KINDS:
            raise ValueError(f"unknown view kind {self.kind!r}")
        object.__setattr__(self, "dropped_edges", np.asarray(self.dropped_edges, dtype=int).reshape(-1, 2))


@dataclass(frozen=True, eq=False)
class MaskedGraph:
    view: GraphView
    x: np.ndarray
    masked: np.ndarray = field(repr=False)

    @property
    def a(self) -> np.ndarray:
        return self.view.graph.a

    @property
    def node_ids(self) -> tuple[int, ...]:
        return self.view.graph.node_ids


def reduce_density(g_h: EegGraph, keep: Sequence[int], tier: str = "LD") -> tuple[EegGraph, NodePartition]:
    """Vertex-induced subgraph on local indices ``keep``."""
    keep = [int(k) for k in keep]
    if not keep:
        raise ValueError("keep set is empty")
    if len(set(keep)) != len(keep):
        raise ValueError("keep set has duplicates")
    if min(keep) < 0 or max(keep) >= g_h.n:
        raise ValueError("keep index out of range")
    idx = np.asarray(keep)
    sub = EegGraph(
        x=g_h.x[idx],
        a=g_h.a[np.ix_(idx, idx)],
        node_ids=tuple(g_h.node_ids[k] for k in keep),
        density_tier=tier,
        label=g_h.label,
        source_id=g_h.source_id,
    )
    kept = set(keep)
    part = NodePartition(
        v_h=tuple(range(g_h.n)),
        v_l=tuple(keep),
        v_d=tuple(i for i in range(g_h.n) if i not in kept),
    )
    return sub, part


def keep_from_global(g_h: EegGraph, global_ids: Iterable[int]) -> list[int]:
    """Translate global electrode ids into local indices of ``g_h``."""
    pos = {gid: i for i, gid in enumerate(g_h.node_ids)}
    try:
        return [pos[int(gid)] for gid in global_ids]
    except KeyError as exc:
        raise ValueError(f"electrode {exc.args[0]} not in graph") from None


@lru_cache(maxsize=16)
def _upper_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, k=1)


def undirected_edges(a: np.ndarray) -> np.ndarray:
    """(k, 2) array of i < j pairs with a nonzero entry, row-major order."""
    iu, ju = _upper_pairs(a.shape[0])
    hit = a[iu, ju] != 0
    return np.column_stack([iu[hit], ju[hit]])


def _drop(g: EegGraph, node_ratio: float, edge_ratio: float, rng: np.random.Generator, kind: str, source_id: str) -> GraphView:
    n = g.n
    n_drop = int(np.floor(node_ratio * n))
    dropped = np.sort(rng.choice(n, size=n_drop, replace=False)) if n_drop else np.empty(0, dtype=int)
    edges = undirected_edges(g.a)
    e_drop = int(np.floor(edge_ratio * len(edges)))
    removed = edges[np.sort(rng.choice(len(edges), size=e_drop, replace=False))] if e_drop else edges[:0]

    x = g.x.copy()
    x[dropped] = 0.0
    a = g.a.copy()
    if len(removed):
        a[removed[:, 0], removed[:, 1]] = 0.0
        a[removed[:, 1], removed[:, 0]] = 0.0
    view_graph = replace(g, x=x, a=a)
    return GraphView(
        graph=view_graph,
        kind=kind,
        source_id=source_id,
        dropped_nodes=tuple(dropped.tolist()),
        dropped_edges=removed,
    )


def augment(
    g: EegGraph,
    node_drop_ratio: float,
    edge_drop_ratio: float,
    rng: np.random.Generator | int,
) -> tuple[GraphView, GraphView]:
    """Two independent node/edge-drop views (query, key) of ``g``.

    Dropped nodes keep their edges and carry zero features; the masking step
    decides what stands in for them.
    """
    for r in (node_drop_ratio, edge_drop_ratio):
        if not 0.0 <= r < 1.0:
            raise ValueError("drop ratios must be in [0, 1)")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.Philox(int(rng)))
    sid = g.source_id
    q = _drop(g, node_drop_ratio, edge_drop_ratio, rng, "query", sid)
    k = _drop(g, node_drop_ratio, edge_drop_ratio, rng, "key", sid)
    return q, k


def mask_graph(view: GraphView, mask_embedding: np.ndarray) -> MaskedGraph:
    mask_embedding = np.asarray(mask_embedding, dtype=np.float64)
    if mask_embedding.shape != (view.graph.d,):
        raise ValueError(f"mask embedding has shape {mask_embedding.shape}, expected ({view.graph.d},)")
    masked = np.zeros(view.graph.n, dtype=bool)
    masked[list(view.dropped_nodes)] = True
    x = view.graph.x.copy()
    x[masked] = mask_embedding
    return MaskedGraph(view=view, x=x, masked=masked)


def split_reconstructed(batch: Iterable[GraphView]) -> tuple[list[GraphView], list[GraphView]]:
    queries, keys = [], []
    for item in batch:
        if item.kind == "reconstructed-query":
            queries.append(item)
        elif item.kind == "reconstructed-key":
            keys.append(item)
        else:
            raise ValueError(f"not a reconstructed view: {item.kind!r}")
    return queries, keys

"""All-pairs shortest-path preprocessing and the reload-augmented search graph.

The original network is condensed once into a complete graph whose entries
are, per metric, the best achievable value over directed paths.  The three
metrics are optimized independently: the cheapest path between two nodes
need not be the fastest one.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass

import numpy as np

from .model import DemandRealization, InputError, Network, UnknownNodeError

METRICS = ("cost", "time", "distance")

_ARC_FIELD = {"cost": "dollars", "time": "hours", "distance": "miles"}


class CompleteGraph:
    """Dense shortest-path closure of a network for cost, time and distance."""

    def __init__(self, order, matrices, predecessors, source_hash=""):
        self.order = tuple(order)
        self.index = {node: i for i, node in enumerate(self.order)}
        self.matrices = matrices  # metric -> (n, n) float array
        self.predecessors = predecessors  # metric -> (n, n) int array, -1 for none
        self.source_hash = source_hash

    def has_node(self, node_id: str) -> bool:
        return node_id in self.index

    def _entry(self, metric, i, j):
        try:
            a, b = self.index[i], self.index[j]
        except KeyError as exc:
            raise UnknownNodeError(str(exc)) from exc
        return float(self.matrices[metric][a, b])

    def cost(self, i: str, j: str) -> float:
        return self._entry("cost", i, j)

    def time(self, i: str, j: str) -> float:
        return self._entry("time", i, j)

    def distance(self, i: str, j: str) -> float:
        return self._entry("distance", i, j)

    def expand(self, i: str, j: str, metric: str = "cost") -> list[str]:
        """Original-arc path achieving the matrix entry for (i, j)."""
        a, b = self.index[i], self.index[j]
        if a == b:
            return [i]
        pred = self.predecessors[metric]
        if not math.isfinite(self.matrices[metric][a, b]):
            raise InputError(f"no path from {i} to {j}")
        path = [b]
        while path[-1] != a:
            p = int(pred[a, path[-1]])
            if p < 0:
                raise InputError(f"broken predecessor chain from {i} to {j}")
            path.append(p)
        return [self.order[k] for k in reversed(path)]


def _single_source(adj, n, source):
    """Binary-heap label setting from one source; returns (dist, pred)."""
    dist = np.full(n, math.inf)
    pred = np.full(n, -1, dtype=np.int64)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, pred


def all_pairs_shortest(net: Network, metric: str):
    """All-pairs shortest paths for one metric.

    Returns ``(order, matrix, predecessors)`` where ``matrix[i, j]`` is the
    minimum metric over directed paths and unreachable pairs are ``inf``.
    """
    if metric not in METRICS:
        raise InputError(f"unknown metric {metric!r}")
    field = _ARC_FIELD[metric]
    order = net.node_ids
    index = {node: i for i, node in enumerate(order)}
    n = len(order)
    adj = [[] for _ in range(n)]
    for a in net.arcs:
        w = getattr(a, field)
        if w < 0:
            raise InputError(f"negative {metric} on arc ({a.tail}, {a.head})")
        adj[index[a.tail]].append((index[a.head], w))
    matrix = np.full((n, n), math.inf)
    pred = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        dist, p = _single_source(adj, n, s)
        matrix[s] = dist
        pred[s] = p
    np.fill_diagonal(matrix, 0.0)
    return order, matrix, pred


def build_complete_graph(net: Network, source_hash: str = "") -> CompleteGraph:
    """Run the three independent all-pairs computations over a network."""
    matrices, preds = {}, {}
    order = net.node_ids
    for metric in METRICS:
        _, matrix, pred = all_pairs_shortest(net, metric)
        matrices[metric] = matrix
        preds[metric] = pred
    return CompleteGraph(order, matrices, preds, source_hash)


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_cache(cg: CompleteGraph, path) -> None:
    arrays = {f"m_{m}": cg.matrices[m] for m in METRICS}
    arrays.update({f"p_{m}": cg.predecessors[m] for m in METRICS})
    np.savez_compressed(
        path,
        order=np.array(cg.order, dtype=object),
        source_hash=np.array(cg.source_hash),
        **arrays,
    )


def load_cache(path, expected_hash: str) -> CompleteGraph | None:
    """Load a cached closure; ``None`` when missing or stale."""
    try:
        with np.load(path, allow_pickle=True) as data:
            if str(data["source_hash"]) != expected_hash:
                return None
            order = [str(x) for x in data["order"]]
            matrices = {m: data[f"m_{m}"] for m in METRICS}
            preds = {m: data[f"p_{m}"] for m in METRICS}
            return CompleteGraph(order, matrices, preds, expected_hash)
    except (OSError, KeyError, ValueError):
        return None


def load_or_build(net: Network, raw_bytes: bytes, cache_path=None) -> CompleteGraph:
    """Build the closure, reusing a content-addressed cache when it matches."""
    digest = content_hash(raw_bytes)
    if cache_path is not None:
        cached = load_cache(cache_path, digest)
        if cached is not None:
            return cached
    cg = build_complete_graph(net, digest)
    if cache_path is not None:
        save_cache(cg, cache_path)
    return cg


@dataclass(frozen=True)
class AuxNode:
    """Synthetic node of the search graph: start, end or reload copy."""

    kind: str  # "start", "end", "reload"
    ordinal: int = 0


@dataclass(frozen=True)
class AuxiliaryGraph:
    """Search graph for one depot and one realization.

    The depot is unfolded into a start copy, an end copy and ``reload_count``
    mid-route reload copies; every copy reuses the depot's shortest-path row
    and column.  Client nodes are the realization's active set.
    """

    depot: str
    clients: tuple[str, ...]
    reload_count: int
    cg: CompleteGraph
    demand: dict

    @property
    def start_node(self) -> AuxNode:
        return AuxNode("start")

    @property
    def end_node(self) -> AuxNode:
        return AuxNode("end")

    @property
    def reload_nodes(self) -> tuple[AuxNode, ...]:
        return tuple(AuxNode("reload", i + 1) for i in range(self.reload_count))

    @property
    def nodes(self) -> tuple:
        return self.clients + (self.start_node, self.end_node) + self.reload_nodes

    @property
    def start_arcs(self) -> list:
        return [(self.start_node, c) for c in self.clients]

    @property
    def end_arcs(self) -> list:
        return [(c, self.end_node) for c in self.clients]

    @property
    def reload_arcs(self) -> list:
        arcs = []
        for r in self.reload_nodes:
            arcs.extend((r, c) for c in self.clients)
            arcs.extend((c, r) for c in self.clients)
        return arcs

    def physical(self, node) -> str:
        """Map a search node onto the network node it stands on."""
        return node if isinstance(node, str) else self.depot

    def cost(self, u, v) -> float:
        return self.cg.cost(self.physical(u), self.physical(v))

    def time(self, u, v) -> float:
        return self.cg.time(self.physical(u), self.physical(v))


def reload_copies_needed(total_demand: float, capacity: float) -> int:
    """Depot reload copies that could ever be needed: ceil(total / capacity)."""
    if total_demand <= 0:
        raise InputError("empty realization")
    if capacity <= 0:
        raise InputError("capacity must be > 0")
    # guard float noise on exact divisors
    return int(math.ceil(total_demand / capacity - 1e-12))


def build_auxiliary(cg: CompleteGraph, depot: str, xi: DemandRealization, capacity: float) -> AuxiliaryGraph:
    """Unfold the depot into start/end/reload copies over the active clients."""
    if not cg.has_node(depot):
        raise UnknownNodeError(depot)
    for c in xi.active:
        if not cg.has_node(c):
            raise UnknownNodeError(c)
    total = xi.total_demand
    r = reload_copies_needed(total, capacity)
    clients = tuple(sorted(xi.active))
    return AuxiliaryGraph(depot=depot, clients=clients, reload_count=r, cg=cg, demand=dict(xi.order_size))

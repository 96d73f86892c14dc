"""Undirected communication graphs and their Laplacians."""

from __future__ import annotations

from collections import deque
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DisconnectedGraphError, ScenarioError


class CommGraph:
    """Connected undirected graph over prosumers ``0..n-1``.

    Edges are stored once as ``(u, v)`` with ``u < v``, sorted. Neighbor
    lists are sorted so every neighborhood sum runs in a fixed order.
    """

    def __init__(self, node_count: int, edges):
        if node_count < 1:
            raise ValueError("graph needs at least one node")
        clean = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop at node {u}")
            if not (0 <= u < node_count and 0 <= v < node_count):
                raise ValueError(f"edge ({u}, {v}) outside 0..{node_count - 1}")
            clean.add((min(u, v), max(u, v)))
        self.node_count = node_count
        self.edges = tuple(sorted(clean))
        nbrs = [[] for _ in range(node_count)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        self.neighbors = tuple(tuple(sorted(nb)) for nb in nbrs)
        self.degree = np.array([len(nb) for nb in self.neighbors], dtype=int)
        self._check_connected()
        self._lap = None

    def _check_connected(self):
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in self.neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        if len(seen) != self.node_count:
            raise DisconnectedGraphError(
                f"graph is disconnected: reached {len(seen)} of {self.node_count} nodes"
            )

    @property
    def deg_max(self) -> int:
        return int(self.degree.max()) if self.node_count else 0

    @property
    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.node_count, self.node_count), dtype=int)
        for u, v in self.edges:
            A[u, v] = A[v, u] = 1
        return A

    @property
    def L(self) -> np.ndarray:
        if self._lap is None:
            self._lap = laplacian(self)
        return self._lap

    def laplacian_row(self, i: int) -> np.ndarray:
        return self.L[i]

    def directed_edges(self):
        """All ``(src, dst)`` pairs, grouped by receiver then sender."""
        return [(j, i) for i in range(self.node_count) for j in self.neighbors[i]]

    def __eq__(self, other):
        return (
            isinstance(other, CommGraph)
            and self.node_count == other.node_count
            and self.edges == other.edges
        )

    def __repr__(self):
        return f"CommGraph(n={self.node_count}, edges={len(self.edges)})"

    # constructors

    @classmethod
    def path(cls, n):
        return cls(n, [(i, i + 1) for i in range(n - 1)])

    @classmethod
    def ring(cls, n):
        if n < 3:
            return cls.path(n)
        return cls(n, [(i, (i + 1) % n) for i in range(n)])

    @classmethod
    def complete(cls, n):
        return cls(n, [(i, j) for i in range(n) for j in range(i + 1, n)])

    @classmethod
    def star(cls, n):
        return cls(n, [(0, j) for j in range(1, n)])

    @classmethod
    def random_connected(cls, n, rng, extra_edges=None):
        """Random labelled tree (uniform attachment) plus extra chords."""
        order = rng.permutation(n)
        edges = [(int(order[t]), int(order[rng.integers(0, t)])) for t in range(1, n)]
        if extra_edges is None:
            extra_edges = int(rng.integers(0, n // 2 + 1))
        present = {(min(u, v), max(u, v)) for u, v in edges}
        for _ in range(extra_edges):
            u, v = (int(x) for x in rng.choice(n, size=2, replace=False))
            present.add((min(u, v), max(u, v)))
        return cls(n, sorted(present))

    @classmethod
    def from_edge_text(cls, text, node_count=None, source="<text>"):
        edges = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ScenarioError("expected 'u v'", where=f"{source}:{lineno}")
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ScenarioError(f"non-integer node id in {line!r}", where=f"{source}:{lineno}")
        if node_count is None:
            node_count = 1 + max(max(e) for e in edges) if edges else 1
        return cls(node_count, edges)

    @classmethod
    def from_edge_file(cls, path, node_count=None):
        path = Path(path)
        return cls.from_edge_text(path.read_text(), node_count, source=str(path))

    @classmethod
    def ieee123(cls):
        """Radial topology of the IEEE 123-node test feeder (see data file)."""
        text = resources.files("prosumer_gne.data").joinpath("ieee123_edges.txt").read_text()
        return cls.from_edge_text(text, 123, source="ieee123_edges.txt")

    def to_edge_text(self) -> str:
        return "".join(f"{u} {v}\n" for u, v in self.edges)


def laplacian(graph: CommGraph) -> np.ndarray:
    """Integer Laplacian: degrees on the diagonal, -1 per edge."""
    n = graph.node_count
    L = np.zeros((n, n), dtype=np.int64)
    for u, v in graph.edges:
        L[u, v] -= 1
        L[v, u] -= 1
        L[u, u] += 1
        L[v, v] += 1
    return L


NAMED_GRAPHS = {
    "path": CommGraph.path,
    "ring": CommGraph.ring,
    "complete": CommGraph.complete,
    "star": CommGraph.star,
}


def named_graph(name: str, n: int) -> CommGraph:
    if name == "ieee123":
        g = CommGraph.ieee123()
        if n != g.node_count:
            raise ScenarioError(f"ieee123 graph has 123 nodes, scenario has {n} prosumers", where="graph")
        return g
    try:
        return NAMED_GRAPHS[name](n)
    except KeyError:
        known = ", ".join(sorted([*NAMED_GRAPHS, "ieee123"]))
        raise ScenarioError(f"unknown graph {name!r} (known: {known})", where="graph") from None

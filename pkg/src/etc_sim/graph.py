"""Weighted communication graphs, Laplacians and spectral summaries."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

STRUCT_TOL = 1e-12
SPECTRAL_TOL = 1e-9


class GraphError(ValueError):
    """Invalid graph construction."""


class ConnectivityError(GraphError):
    """Graph is not (strongly) connected where connectivity is required."""


@dataclass(frozen=True)
class Graph:
    """Weighted digraph on vertices 0..n-1.

    ``edges`` holds directed triples (i, j, w) with 0-based ids; an undirected
    graph stores both (i, j, w) and (j, i, w). ``adjacency[i, j] = w_ij``.
    """

    n: int
    edges: tuple[tuple[int, int, float], ...]
    undirected: bool
    adjacency: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        self.adjacency.setflags(write=False)

    @property
    def out_neighbors(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.adjacency[i] > 0) for i in range(self.n)]

    @property
    def in_neighbors(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.adjacency[:, i] > 0) for i in range(self.n)]

    @property
    def out_degree_count(self) -> np.ndarray:
        """|N_i^out| (neighbor counts, not weighted degrees)."""
        return (self.adjacency > 0).sum(axis=1)

    @property
    def max_neighbors(self) -> int:
        return int(self.out_degree_count.max())

    def to_json(self) -> dict:
        """1-based JSON form; undirected graphs list each edge once."""
        out = []
        for i, j, w in self.edges:
            if self.undirected and i > j:
                continue
            out.append([i + 1, j + 1, w])
        return {"n": self.n, "undirected": self.undirected, "edges": out}


@dataclass(frozen=True)
class SpectralSummary:
    lambda2: float
    lambdaN: float
    laplacian_norm: float
    eigenvalues: tuple[float, ...]


def build_graph(n: int, edges, undirected: bool = True) -> Graph:
    """Build a graph from 1-based weighted edges ``(i, j, w)``.

    For undirected graphs each edge may be given once or as an explicit
    symmetric pair with equal weights.
    """
    if int(n) != n or n < 1:
        raise GraphError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    given: dict[tuple[int, int], float] = {}
    for edge in edges:
        if len(edge) == 2:
            i, j = edge
            w = 1.0
        elif len(edge) == 3:
            i, j, w = edge
        else:
            raise GraphError(f"edge must be (i, j) or (i, j, w), got {edge!r}")
        if int(i) != i or int(j) != j:
            raise GraphError(f"vertex ids must be integers: {edge!r}")
        i, j, w = int(i), int(j), float(w)
        if not (1 <= i <= n and 1 <= j <= n):
            raise GraphError(f"vertex id out of range 1..{n}: {edge!r}")
        if i == j:
            raise GraphError(f"self-loop at vertex {i}")
        if not np.isfinite(w) or w <= 0:
            raise GraphError(f"nonpositive weight on edge ({i}, {j}): {w}")
        if (i, j) in given:
            raise GraphError(f"duplicate edge ({i}, {j})")
        given[(i, j)] = w

    adj = np.zeros((n, n))
    for (i, j), w in given.items():
        adj[i - 1, j - 1] = w
    if undirected:
        for (i, j), w in given.items():
            back = given.get((j, i))
            if back is not None and back != w:
                raise GraphError(
                    f"asymmetric weights on undirected edge ({i}, {j}): {w} vs {back}"
                )
            adj[j - 1, i - 1] = w
    triples = tuple(
        (int(i), int(j), float(adj[i, j])) for i, j in zip(*np.nonzero(adj))
    )
    is_sym = bool(np.array_equal(adj, adj.T))
    if undirected and not is_sym:  # pragma: no cover - guarded above
        raise GraphError("undirected flag set but adjacency is not symmetric")
    return Graph(n=n, edges=triples, undirected=bool(undirected), adjacency=adj)


def graph_from_json(payload: dict) -> Graph:
    return build_graph(payload["n"], payload["edges"], payload.get("undirected", True))


def laplacian(g: Graph) -> np.ndarray:
    """L = D_out - W."""
    W = np.array(g.adjacency, dtype=float)
    return np.diag(W.sum(axis=1)) - W


def sym_laplacian(g: Graph) -> np.ndarray:
    L = laplacian(g)
    return 0.5 * (L + L.T)


def _reach(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(adj[i] > 0):
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    return seen


def is_connected(g: Graph) -> bool:
    """Connectivity of the underlying undirected graph."""
    if g.n == 1:
        return True
    sym = g.adjacency + g.adjacency.T
    return bool(_reach(sym, 0).all())


def is_strongly_connected(g: Graph) -> bool:
    # Kosaraju-style: one SCC iff vertex 0 reaches everything forwards and backwards
    if g.n == 1:
        return True
    return bool(_reach(g.adjacency, 0).all() and _reach(g.adjacency.T, 0).all())


def is_weight_balanced(g: Graph, tol: float = STRUCT_TOL) -> bool:
    """True iff 1^T L = 0, i.e. in-degree equals out-degree everywhere."""
    return bool(np.all(np.abs(laplacian(g).sum(axis=0)) <= tol))


def spectral_summary(g: Graph) -> SpectralSummary:
    """Eigenvalues of Sym(L) plus the spectral norm of L.

    Raises ConnectivityError for disconnected undirected graphs or digraphs
    that are not strongly connected.
    """
    if g.undirected:
        if not is_connected(g):
            raise ConnectivityError("graph is not connected")
    elif not is_strongly_connected(g):
        raise ConnectivityError("digraph is not strongly connected")
    L = laplacian(g)
    eig = np.sort(np.linalg.eigvalsh(0.5 * (L + L.T)))
    eig[np.abs(eig) < STRUCT_TOL] = 0.0
    lam2 = float(eig[1]) if g.n > 1 else 0.0
    return SpectralSummary(
        lambda2=lam2,
        lambdaN=float(eig[-1]),
        laplacian_norm=float(np.linalg.norm(L, 2)),
        eigenvalues=tuple(float(v) for v in eig),
    )


def generate(kind: str, n: int, seed: int = 0, p: float = 0.4,
             max_attempts: int = 1000) -> Graph:
    """Unit-weight undirected graph families.

    ``random_connected`` draws Erdos-Renyi G(n, p) graphs from a seeded
    generator until one is connected.
    """
    if n < 2:
        raise GraphError(f"n must be at least 2, got {n}")
    if kind == "path":
        edges = [(i, i + 1) for i in range(1, n)]
    elif kind == "cycle":
        if n < 3:
            raise GraphError("cycle needs n >= 3")
        edges = [(i, i + 1) for i in range(1, n)] + [(n, 1)]
    elif kind == "complete":
        edges = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    elif kind == "star":
        edges = [(1, j) for j in range(2, n + 1)]
    elif kind == "random_connected":
        rng = np.random.default_rng(seed)
        iu = np.triu_indices(n, k=1)
        for _ in range(max_attempts):
            mask = rng.random(iu[0].size) < p
            edges = [(int(i) + 1, int(j) + 1) for i, j in zip(iu[0][mask], iu[1][mask])]
            g = build_graph(n, edges, undirected=True)
            if is_connected(g):
                return g
        raise GraphError(
            f"no connected G({n}, {p}) sample in {max_attempts} attempts"
        )
    else:
        raise GraphError(f"unknown graph kind {kind!r}")
    return build_graph(n, edges, undirected=True)


def directed_cycle(n: int, weight: float = 1.0) -> Graph:
    return build_graph(
        n, [(i, i % n + 1, weight) for i in range(1, n + 1)], undirected=False
    )

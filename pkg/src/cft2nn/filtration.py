"""Node centralities used as sublevel filtration functions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import jit
from .graph import Graph

KINDS = ("degree", "betweenness", "closeness", "eigenvector")


@dataclass(frozen=True, eq=False)
class FiltrationValues:
    kind: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{self.kind} filtration has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


@jit
def _brandes(indptr, indices, n):
    bc = np.zeros(n)
    sigma = np.zeros(n)
    dist = np.empty(n, dtype=np.int64)
    delta = np.zeros(n)
    order = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for s in range(n):
        sigma[:] = 0.0
        dist[:] = -1
        delta[:] = 0.0
        sigma[s] = 1.0
        dist[s] = 0
        queue[0] = s
        head, tail, seen = 0, 1, 0
        while head < tail:
            v = queue[head]
            head += 1
            order[seen] = v
            seen += 1
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue[tail] = w
                    tail += 1
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
        # dependency accumulation in reverse BFS order
        for i in range(seen - 1, -1, -1):
            w = order[i]
            for k in range(indptr[w], indptr[w + 1]):
                v = indices[k]
                if dist[v] == dist[w] - 1:
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc / 2.0


@jit
def _closeness(indptr, indices, n):
    out = np.zeros(n)
    dist = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for s in range(n):
        dist[:] = -1
        dist[s] = 0
        queue[0] = s
        head, tail, total = 0, 1, 0
        while head < tail:
            v = queue[head]
            head += 1
            total += dist[v]
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue[tail] = w
                    tail += 1
        if total > 0:
            out[s] = (tail - 1) / total
    return out


def degree_centrality(g: Graph) -> FiltrationValues:
    deg = np.bincount(g.edges.ravel(), minlength=g.node_count).astype(np.float64)
    return FiltrationValues("degree", deg)


def betweenness_centrality(g: Graph) -> FiltrationValues:
    """Unnormalized shortest-path betweenness, each unordered pair once.

    Path lengths are hop counts; edge weights are ignored.
    """
    indptr, indices = g.csr()
    return FiltrationValues("betweenness", _brandes(indptr, indices, g.node_count))


def closeness_centrality(g: Graph) -> FiltrationValues:
    """``(n_v - 1) / sum of hop distances`` within the node's component."""
    indptr, indices = g.csr()
    return FiltrationValues("closeness", _closeness(indptr, indices, g.node_count))


def eigenvector_centrality(g: Graph, tol: float = 1e-10, max_iter: int = 1000) -> FiltrationValues:
    """Principal eigenvector of the (weighted) adjacency, unit 2-norm.

    Iterates on ``A + I`` from the all-ones vector. The shift keeps the
    spectrum positive, so bipartite graphs converge instead of oscillating,
    and the eigenvectors are those of ``A``.
    """
    n = g.node_count
    if g.edge_count == 0:
        return FiltrationValues("eigenvector", np.zeros(n))
    a = g.adjacency()
    v = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(max_iter):
        w = a @ v + v
        w /= np.linalg.norm(w)
        if np.linalg.norm(w - v) <= tol * np.linalg.norm(w):
            v = w
            break
        v = w
    return FiltrationValues("eigenvector", v)


_FUNCS = {
    "degree": degree_centrality,
    "betweenness": betweenness_centrality,
    "closeness": closeness_centrality,
    "eigenvector": eigenvector_centrality,
}


def centrality(g: Graph, kind: str) -> FiltrationValues:
    try:
        fn = _FUNCS[kind]
    except KeyError:
        raise ValueError(f"unknown filtration {kind!r}; choose from {KINDS}") from None
    return fn(g)

"""Graph data model, TUDataset ingestion and dataset splitting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, FormatError, IntegrityError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with node features.

    ``edges`` is an (E, 2) int array with ``u < v`` in every row.
    """

    node_count: int
    edges: np.ndarray
    node_features: np.ndarray
    edge_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        n = int(self.node_count)
        if n < 1:
            raise IntegrityError(f"node_count must be >= 1, got {n}")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(e):
            if e.min() < 0 or e.max() >= n:
                raise IntegrityError("edge endpoint out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise IntegrityError("self-loops are not allowed")
        e = np.sort(e, axis=1)
        if len(np.unique(e, axis=0)) != len(e):
            raise IntegrityError("duplicate undirected edge")
        x = np.asarray(self.node_features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(n, -1)
        if x.shape[0] != n:
            raise IntegrityError(f"node_features has {x.shape[0]} rows, expected {n}")
        w = self.edge_weights
        if w is not None:
            w = np.asarray(w, dtype=np.float64)
            if w.shape != (len(e),) or np.any(w <= 0):
                raise IntegrityError("edge_weights must be positive and aligned with edges")
            w = _frozen(w)
        object.__setattr__(self, "node_count", n)
        object.__setattr__(self, "edges", _frozen(e))
        object.__setattr__(self, "node_features", _frozen(x))
        object.__setattr__(self, "edge_weights", w)

    @classmethod
    def from_edges(cls, n, edges=(), features=None, weights=None) -> "Graph":
        if features is None:
            features = np.ones((n, 1))
        return cls(n, np.asarray(list(edges), dtype=np.int64).reshape(-1, 2), features, weights)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def adjacency(self, weighted: bool = True) -> np.ndarray:
        a = np.zeros((self.node_count, self.node_count))
        if self.edge_count:
            w = self.edge_weights if (weighted and self.edge_weights is not None) else 1.0
            a[self.edges[:, 0], self.edges[:, 1]] = w
            a[self.edges[:, 1], self.edges[:, 0]] = w
        return a

    def csr(self):
        """Unweighted neighbour lists as (indptr, indices), sorted per row."""
        n = self.node_count
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        order = np.lexsort((dst, src))
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return np.cumsum(indptr), dst[order].astype(np.int64)

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        x = np.empty_like(self.node_features)
        x[perm] = self.node_features
        return Graph(self.node_count, perm[self.edges], x, self.edge_weights)


@dataclass(frozen=True, eq=False)
class LabeledGraph:
    graph: Graph
    label: int


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    valid: tuple
    calib: tuple
    test: tuple
    seed: int

    def as_dict(self):
        return {k: list(getattr(self, k)) for k in ("train", "valid", "calib", "test")}


# -- TUDataset ---------------------------------------------------------------

def _read_rows(path: Path, dtype):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([dtype(t) for t in line.replace(",", " ").split()])
    return rows


def load_tudataset(root: str | Path, name: str) -> list[LabeledGraph]:
    """Load ``{name}_*.txt`` files from ``root`` (the TUDataset text layout).

    Node attributes become features when present; otherwise node labels are
    one-hot encoded; otherwise every node gets the constant feature 1.0.
    Graph labels are remapped to ``0..k-1`` in sorted order of the raw values.
    """
    root = Path(root)
    required = {k: root / f"{name}_{k}.txt" for k in ("A", "graph_indicator", "graph_labels")}
    for path in required.values():
        if not path.is_file():
            raise FormatError(f"missing required file {path.name} in {root}")

    indicator = np.array([r[0] for r in _read_rows(required["graph_indicator"], int)], dtype=np.int64)
    raw_labels = np.array([r[0] for r in _read_rows(required["graph_labels"], int)], dtype=np.int64)
    n_total = len(indicator)
    graph_ids = np.unique(indicator)
    if len(raw_labels) != len(graph_ids):
        raise FormatError(
            f"{required['graph_labels'].name} has {len(raw_labels)} lines for {len(graph_ids)} graphs"
        )

    attr_path = root / f"{name}_node_attributes.txt"
    nlab_path = root / f"{name}_node_labels.txt"
    if attr_path.is_file():
        feats = np.array(_read_rows(attr_path, float), dtype=np.float64)
    elif nlab_path.is_file():
        nl = np.array([r[0] for r in _read_rows(nlab_path, int)], dtype=np.int64)
        values, inv = np.unique(nl, return_inverse=True)
        feats = np.eye(len(values))[inv]
    else:
        feats = np.ones((n_total, 1))
    if len(feats) != n_total:
        raise FormatError(f"node feature file has {len(feats)} rows for {n_total} nodes")

    # node ids are 1-based and contiguous per graph
    starts = {}
    for node, gid in enumerate(indicator):
        starts.setdefault(gid, node)
    counts = {gid: int(c) for gid, c in zip(*np.unique(indicator, return_counts=True))}

    edge_sets: dict[int, set] = {gid: set() for gid in graph_ids}
    with open(required["A"]) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                u, v = (int(t) - 1 for t in line.replace(",", " ").split())
            except ValueError as exc:
                raise FormatError(f"{required['A'].name}:{lineno}: cannot parse {line!r}") from exc
            if not (0 <= u < n_total and 0 <= v < n_total) or indicator[u] != indicator[v]:
                raise IntegrityError(
                    f"{required['A'].name}:{lineno}: edge ({u + 1}, {v + 1}) crosses graphs or is out of range"
                )
            if u == v:
                continue
            gid = indicator[u]
            s = starts[gid]
            a, b = sorted((u - s, v - s))
            edge_sets[gid].add((a, b))

    label_values = np.unique(raw_labels)
    label_map = {int(v): i for i, v in enumerate(label_values)}
    out = []
    for i, gid in enumerate(graph_ids):
        s, n = starts[gid], counts[gid]
        edges = np.array(sorted(edge_sets[gid]), dtype=np.int64).reshape(-1, 2)
        g = Graph(n, edges, feats[s:s + n])
        out.append(LabeledGraph(g, label_map[int(raw_labels[i])]))
    return out


def num_classes(data: Sequence[LabeledGraph]) -> int:
    return max(d.label for d in data) + 1


# -- splitting ---------------------------------------------------------------

def split_sizes(n: int, ratios: Sequence[float]) -> tuple:
    sizes = [int(math.floor(r * n + 1e-9)) for r in ratios]
    sizes[0] += n - sum(sizes)
    return tuple(sizes)


def split_dataset(n: int, ratios: Sequence[float], seed: int) -> DatasetSplit:
    """Random disjoint (train, valid, calib, test) split.

    ``ratios`` are given in that same order. Sizes are ``floor(ratio * n)``
    with the remainder added to train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 4:
        raise ConfigError(f"need four split ratios, got {len(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    if any(not 0.0 < r < 1.0 for r in ratios):
        raise ConfigError("each split ratio must lie in (0, 1)")
    if n < 4:
        raise ConfigError("need at least 4 samples to split")
    sizes = split_sizes(n, ratios)
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum((0,) + sizes)
    parts = [tuple(int(i) for i in np.sort(perm[bounds[j]:bounds[j + 1]])) for j in range(4)]
    return DatasetSplit(*parts, seed=int(seed))


# -- matrices ----------------------------------------------------------------

def normalized_adjacency(g: Graph, literal: bool = False) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with D the degree matrix of ``A + I``.

    ``literal=True`` gives ``D^-1/2 (A + I) D^+1/2`` instead, the variant with
    a positive exponent on the right.
    """
    a = g.adjacency() + np.eye(g.node_count)
    d = a.sum(axis=1)
    left = 1.0 / np.sqrt(d)
    right = np.sqrt(d) if literal else left
    return left[:, None] * a * right[None, :]

"""Small synthetic graph sets for tests and the toy CLI config."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .graph import Graph, LabeledGraph


def _hub_graph(rng, body_len, closed):
    """Body path or cycle, a bridge, and a star hub of higher degree.

    The hub is the degree maximum, so under the degree filtration a cycle in
    the body closes before the maximum and has positive persistence.
    """
    edges = [(i, i + 1) for i in range(body_len - 1)]
    if closed:
        edges.append((0, body_len - 1))
    bridge = int(rng.integers(1, 3))
    prev, n = 0, body_len
    for _ in range(bridge):
        edges.append((prev, n))
        prev, n = n, n + 1
    hub = prev
    for _ in range(int(rng.integers(5, 7))):
        edges.append((hub, n))
        n += 1
    # a few pendant leaves on the body; body degree stays below the hub's
    for v in rng.choice(body_len, size=int(rng.integers(0, 3)), replace=False):
        edges.append((int(v), n))
        n += 1
    return n, edges


def separable_dataset(n_graphs: int = 40, seed: int = 0) -> list[LabeledGraph]:
    """Label 0: trees. Label 1: graphs with exactly one cycle. Classes alternate.

    Node features are a constant column and a uniform(0, 1) column that
    carries no label information.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_graphs):
        y = i % 2
        n, edges = _hub_graph(rng, int(rng.integers(4, 8)), closed=bool(y))
        x = np.column_stack([np.ones(n), rng.random(n)])
        out.append(LabeledGraph(Graph.from_edges(n, [tuple(sorted(e)) for e in edges], x), y))
    return out


def write_tudataset(data, root, name):
    """Write graphs in the TUDataset text layout (no node labels)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    a_lines, indicator, labels = [], [], []
    offset = 0
    for gid, d in enumerate(data, start=1):
        g = d.graph
        for u, v in g.edges:
            a_lines.append(f"{u + offset + 1}, {v + offset + 1}")
            a_lines.append(f"{v + offset + 1}, {u + offset + 1}")
        indicator += [gid] * g.node_count
        labels.append(d.label)
        offset += g.node_count
    (root / f"{name}_A.txt").write_text("\n".join(a_lines) + "\n")
    (root / f"{name}_graph_indicator.txt").write_text("\n".join(map(str, indicator)) + "\n")
    (root / f"{name}_graph_labels.txt").write_text("\n".join(map(str, labels)) + "\n")
    return root

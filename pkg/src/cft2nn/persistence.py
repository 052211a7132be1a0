"""Sublevel persistent homology of graphs and persistence images.

Diagrams keep essential classes with death ``inf``; they are given a finite
death (``essential_death``) only when vectorized or compared.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import ndtr

from ._accel import USE_NUMBA, jit
from .errors import ConfigError, StateError
from .filtration import KINDS, FiltrationValues, centrality
from .graph import Graph

DIMS = (0, 1)


@dataclass(frozen=True, eq=False)
class FilteredComplex:
    vertex_values: np.ndarray
    edges: np.ndarray
    edge_values: np.ndarray
    # simplex stream sorted by (value, dim, id)
    stream_values: np.ndarray
    stream_dims: np.ndarray
    stream_ids: np.ndarray

    @property
    def max_value(self) -> float:
        return float(self.vertex_values.max())


@dataclass(frozen=True, eq=False)
class PersistenceDiagram:
    dim: int
    points: np.ndarray  # (n, 2) birth/death, death == inf for essential classes

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def essential(self) -> np.ndarray:
        return np.isinf(self.points[:, 1])

    def finite(self, essential_death: float) -> np.ndarray:
        pts = self.points.copy()
        pts[np.isinf(pts[:, 1]), 1] = essential_death
        return pts


@dataclass(frozen=True)
class GridRange:
    birth_min: float
    birth_max: float
    pers_min: float
    pers_max: float

    def __post_init__(self):
        if not (self.birth_max > self.birth_min and self.pers_max > self.pers_min):
            raise ConfigError(f"degenerate persistence-image range {self}")

    def bandwidths(self, frac: float) -> tuple:
        return (frac * (self.birth_max - self.birth_min), frac * (self.pers_max - self.pers_min))

    def as_tuple(self):
        return (self.birth_min, self.birth_max, self.pers_min, self.pers_max)


@dataclass(frozen=True, eq=False)
class PersistenceImage:
    pixels: np.ndarray  # (P, P); axis 0 is birth, axis 1 is persistence
    grid: GridRange
    bandwidth: tuple

    @property
    def resolution(self) -> int:
        return self.pixels.shape[0]


# -- filtration and homology -------------------------------------------------

def build_sublevel_filtration(g: Graph, f: FiltrationValues | np.ndarray) -> FilteredComplex:
    vals = np.asarray(getattr(f, "values", f), dtype=np.float64)
    if len(vals) != g.node_count:
        raise ValueError(f"filtration has {len(vals)} values for {g.node_count} nodes")
    e = g.edges
    ev = np.maximum(vals[e[:, 0]], vals[e[:, 1]]) if len(e) else np.zeros(0)
    values = np.concatenate([vals, ev])
    dims = np.concatenate([np.zeros(len(vals), np.int64), np.ones(len(ev), np.int64)])
    ids = np.concatenate([np.arange(len(vals)), np.arange(len(ev))]).astype(np.int64)
    order = np.lexsort((ids, dims, values))
    return FilteredComplex(vals, e, ev, values[order], dims[order], ids[order])


@jit
def _persistence_pairs(vertex_values, eu, ev, edge_values, stream_dims, stream_ids):
    n = len(vertex_values)
    parent = np.arange(n)
    h0 = np.empty((n, 2))
    n0 = 0
    h1 = np.empty(len(eu))
    n1 = 0
    for k in range(len(stream_dims)):
        if stream_dims[k] == 0:
            continue
        e = stream_ids[k]
        t = edge_values[e]
        ru = eu[e]
        while parent[ru] != ru:
            parent[ru] = parent[parent[ru]]
            ru = parent[ru]
        rv = ev[e]
        while parent[rv] != rv:
            parent[rv] = parent[parent[rv]]
            rv = parent[rv]
        if ru == rv:
            h1[n1] = t
            n1 += 1
            continue
        # roots are the oldest vertex of their component; the younger dies,
        # equal births kill the larger vertex id
        if vertex_values[ru] < vertex_values[rv] or (vertex_values[ru] == vertex_values[rv] and ru < rv):
            old, young = ru, rv
        else:
            old, young = rv, ru
        parent[young] = old
        if t > vertex_values[young]:
            h0[n0, 0] = vertex_values[young]
            h0[n0, 1] = t
            n0 += 1
    for v in range(n):
        if parent[v] == v:
            h0[n0, 0] = vertex_values[v]
            h0[n0, 1] = np.inf
            n0 += 1
    return h0[:n0], h1[:n1]


def _pairs(fc: FilteredComplex):
    e = fc.edges
    eu = np.ascontiguousarray(e[:, 0]) if len(e) else np.zeros(0, np.int64)
    ev = np.ascontiguousarray(e[:, 1]) if len(e) else np.zeros(0, np.int64)
    return _persistence_pairs(fc.vertex_values, eu, ev, fc.edge_values, fc.stream_dims, fc.stream_ids)


def _components(n, edges) -> int:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    c = n
    for u, v in edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
            c -= 1
    return c


def compute_ph0(fc: FilteredComplex) -> PersistenceDiagram:
    """Connected components by union-find under the elder rule."""
    h0, _ = _pairs(fc)
    return PersistenceDiagram(0, h0)


def compute_ph1(fc: FilteredComplex) -> PersistenceDiagram:
    """Independent cycles; on a 1-complex every class is essential."""
    _, h1 = _pairs(fc)
    n = len(fc.vertex_values)
    rank = len(fc.edges) - n + _components(n, fc.edges)
    if len(h1) != rank:  # pragma: no cover - would mean a broken union-find
        raise AssertionError(f"H1 count {len(h1)} != cycle rank {rank}")
    return PersistenceDiagram(1, np.column_stack([h1, np.full(len(h1), np.inf)]))


def compute_diagrams(g: Graph, f: FiltrationValues | np.ndarray) -> tuple:
    fc = build_sublevel_filtration(g, f)
    h0, h1 = _pairs(fc)
    return (
        PersistenceDiagram(0, h0),
        PersistenceDiagram(1, np.column_stack([h1, np.full(len(h1), np.inf)])),
    )


# -- persistence images ------------------------------------------------------

@jit
def _raster_kernel(bx, py, w, xedges, yedges, sx, sy):
    P = len(xedges) - 1
    out = np.zeros((P, P))
    cx = np.empty(P + 1)
    cy = np.empty(P + 1)
    r2 = math.sqrt(2.0)
    for k in range(len(bx)):
        if w[k] == 0.0:
            continue
        for i in range(P + 1):
            cx[i] = 0.5 * math.erfc(-(xedges[i] - bx[k]) / (sx * r2))
            cy[i] = 0.5 * math.erfc(-(yedges[i] - py[k]) / (sy * r2))
        for i in range(P):
            ax = w[k] * (cx[i + 1] - cx[i])
            if ax == 0.0:
                continue
            for j in range(P):
                out[i, j] += ax * (cy[j + 1] - cy[j])
    return out


def _raster_numpy(bx, py, w, xedges, yedges, sx, sy):
    ax = np.diff(ndtr((xedges[None, :] - bx[:, None]) / sx), axis=1)
    ay = np.diff(ndtr((yedges[None, :] - py[:, None]) / sy), axis=1)
    return np.einsum("k,ki,kj->ij", w, ax, ay)


def rasterize_persistence_image(
    dg: PersistenceDiagram | np.ndarray,
    resolution: int,
    grid: GridRange,
    bandwidth: Optional[Sequence[float]] = None,
    essential_death: float = 0.0,
    bandwidth_frac: float = 0.05,
) -> PersistenceImage:
    """Exact pixel integrals of the weighted Gaussian persistence surface.

    Points go to birth/persistence coordinates; each carries weight
    ``persistence / grid.pers_max``. Every pixel is the integral of the
    mixture over its box, a product of two Gaussian CDF differences.
    """
    if resolution < 1:
        raise ConfigError("resolution must be >= 1")
    if bandwidth is None:
        bandwidth = grid.bandwidths(bandwidth_frac)
    sx, sy = (float(b) for b in bandwidth)
    if sx <= 0 or sy <= 0:
        raise ConfigError("bandwidths must be positive")
    pts = dg.finite(essential_death) if isinstance(dg, PersistenceDiagram) else np.asarray(dg, float).reshape(-1, 2)
    bx = np.ascontiguousarray(pts[:, 0])
    py = np.ascontiguousarray(pts[:, 1] - pts[:, 0])
    w = np.maximum(py, 0.0) / grid.pers_max
    xedges = np.linspace(grid.birth_min, grid.birth_max, resolution + 1)
    yedges = np.linspace(grid.pers_min, grid.pers_max, resolution + 1)
    if len(pts) == 0:
        pixels = np.zeros((resolution, resolution))
    elif USE_NUMBA:
        pixels = _raster_kernel(bx, py, w, xedges, yedges, sx, sy)
    else:
        pixels = _raster_numpy(bx, py, w, xedges, yedges, sx, sy)
    return PersistenceImage(pixels, grid, (sx, sy))


# -- Wasserstein -------------------------------------------------------------

def _as_points(dg, essential_death):
    if isinstance(dg, PersistenceDiagram):
        return dg.finite(essential_death)
    pts = np.asarray(dg, dtype=np.float64).reshape(-1, 2)
    if np.isinf(pts).any():
        pts = pts.copy()
        pts[np.isinf(pts[:, 1]), 1] = essential_death
    return pts


def wasserstein_distance(dg_a, dg_b, p: int = 1, essential_death=0.0) -> float:
    """p-Wasserstein distance with L-infinity ground metric.

    ``essential_death`` is a float or an ``(a, b)`` pair, one per diagram.
    Solved as an assignment problem on the diagonal-augmented cost matrix.
    """
    ea, eb = essential_death if isinstance(essential_death, (tuple, list)) else (essential_death,) * 2
    a = _as_points(dg_a, ea)
    b = _as_points(dg_b, eb)
    na, nb = len(a), len(b)
    if na + nb == 0:
        return 0.0
    da = (a[:, 1] - a[:, 0]) / 2.0  # L-inf distance to the diagonal
    db = (b[:, 1] - b[:, 0]) / 2.0
    n = na + nb
    big = np.inf
    cost = np.zeros((n, n))
    if na and nb:
        cost[:na, :nb] = np.abs(a[:, None, :] - b[None, :, :]).max(axis=2) ** p
    cost[:na, nb:] = big
    cost[na:, :nb] = big
    cost[np.arange(na), nb + np.arange(na)] = np.abs(da) ** p
    cost[na + np.arange(nb), np.arange(nb)] = np.abs(db) ** p
    cost[na:, nb:] = 0.0
    finite_cap = 1.0 + 2.0 * np.nanmax(np.where(np.isfinite(cost), cost, 0.0)) * n
    cost[np.isinf(cost)] = finite_cap
    rows, cols = linear_sum_assignment(cost)
    # fsum keeps the result independent of argument order
    return float(math.fsum(cost[rows, cols]) ** (1.0 / p))


# -- PI tensor ---------------------------------------------------------------

@dataclass(frozen=True)
class PIConfig:
    filtrations: tuple = KINDS
    resolution: int = 50
    bandwidth_frac: float = 0.05
    pad_frac: float = 0.05

    @property
    def shape(self):
        return (len(self.filtrations), len(DIMS), self.resolution, self.resolution)


@dataclass(frozen=True, eq=False)
class GraphTopology:
    """Diagrams of one graph under every configured filtration."""

    diagrams: Mapping  # (kind, dim) -> PersistenceDiagram
    essential_death: Mapping  # kind -> float


def graph_topology(g: Graph, filtrations: Iterable[str] = KINDS) -> GraphTopology:
    diagrams, ess = {}, {}
    for kind in filtrations:
        f = centrality(g, kind)
        ess[kind] = float(f.values.max())
        d0, d1 = compute_diagrams(g, f)
        diagrams[(kind, 0)] = d0
        diagrams[(kind, 1)] = d1
    return GraphTopology(diagrams, ess)


def fit_grids(topologies: Sequence[GraphTopology], config: PIConfig) -> dict:
    """Per (kind, dim) birth/persistence range over the given graphs, padded."""
    grids = {}
    for kind in config.filtrations:
        for dim in DIMS:
            pts = [t.diagrams[(kind, dim)].finite(t.essential_death[kind]) for t in topologies]
            pts = np.concatenate(pts) if pts else np.zeros((0, 2))
            if len(pts):
                b, pers = pts[:, 0], pts[:, 1] - pts[:, 0]
                lo_b, hi_b, lo_p, hi_p = b.min(), b.max(), pers.min(), pers.max()
            else:
                lo_b = hi_b = lo_p = hi_p = 0.0
            grids[(kind, dim)] = GridRange(*_pad(lo_b, hi_b, config.pad_frac), *_pad(lo_p, hi_p, config.pad_frac))
    return grids


def _pad(lo, hi, frac):
    span = hi - lo
    pad = frac * span if span > 1e-12 else 0.5
    return float(lo - pad), float(hi + pad)


def pi_tensor_from_topology(topo: GraphTopology, config: PIConfig, grids: Mapping) -> np.ndarray:
    out = np.zeros(config.shape)
    for i, kind in enumerate(config.filtrations):
        for q in DIMS:
            img = rasterize_persistence_image(
                topo.diagrams[(kind, q)],
                config.resolution,
                grids[(kind, q)],
                essential_death=topo.essential_death[kind],
                bandwidth_frac=config.bandwidth_frac,
            )
            out[i, q] = img.pixels
    return out


def build_pi_tensor(g: Graph, config: PIConfig = PIConfig(), grids: Optional[Mapping] = None) -> np.ndarray:
    """K x Q x P x P stack of persistence images for one graph.

    Without frozen ``grids`` the range is fitted to this graph alone.
    """
    topo = graph_topology(g, config.filtrations)
    if grids is None:
        grids = fit_grids([topo], config)
    return pi_tensor_from_topology(topo, config, grids)


# -- similarity --------------------------------------------------------------

def topological_distance(a: GraphTopology, b: GraphTopology, kinds=None, dims=DIMS, p: int = 1) -> float:
    if a is None or b is None:
        raise StateError("topological features missing; run featurize first")
    kinds = kinds or tuple(a.essential_death)
    total = 0.0
    for kind in kinds:
        for dim in dims:
            try:
                da, db = a.diagrams[(kind, dim)], b.diagrams[(kind, dim)]
            except KeyError:
                raise StateError(f"no cached diagram for ({kind}, {dim}); run featurize first") from None
            total += wasserstein_distance(da, db, p, (a.essential_death[kind], b.essential_death[kind]))
    return total


def graph_similarity(a, b, measure: str = "topological", **kw) -> float:
    """Distance between two graphs; smaller means more similar.

    ``topological`` sums W1 over every (filtration, dim) diagram pair, or over
    the ``kinds``/``dims`` given. ``embedding`` is the Euclidean distance of
    the model embeddings.
    """
    if measure == "topological":
        return topological_distance(a, b, **kw)
    if measure == "embedding":
        if a is None or b is None:
            raise StateError("embedding missing; train the model and embed first")
        return float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))
    raise ConfigError(f"unknown similarity measure {measure!r}")

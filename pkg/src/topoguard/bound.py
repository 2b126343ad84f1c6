"""Vulnerability graphs and the iteration bound for the correction loop.

A vulnerable pair is any two vertices whose relative order some detector
inspects: mesh neighbors, a vertex's steepest neighbor against the rest of
its closed neighborhood, consecutive saddles and consecutive critical points
in the f-sorted order, and same-kind extrema (compared by the pairing replay
of the original event constraints).  Edges point from the SoS-larger vertex
of f to the smaller one, so every stage is a DAG.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .compressor import lower_bound
from .grid import ScalarField, neighbor_table, sos_greater_arrays
from .topology import MAX, MIN, ReferenceTopology, build_reference

__all__ = [
    "Stage",
    "VulnerabilityGraph",
    "CycleError",
    "candidate_pairs",
    "build_weak",
    "prune_strong",
    "reduce",
    "longest_path",
    "iteration_bound",
    "vulnerability_stats",
    "theoretical_bound",
]


class Stage(str, enum.Enum):
    WEAK = "weak"
    STRONG = "strong"
    REDUCED = "reduced"


class CycleError(RuntimeError):
    pass


@dataclass(eq=False)
class VulnerabilityGraph:
    stage: Stage
    n: int
    src: np.ndarray  # f-larger endpoint
    dst: np.ndarray  # f-smaller endpoint
    seeds: np.ndarray | None = None  # (k, 2) seed edges, REDUCED only
    _d_max: int | None = field(default=None, repr=False)

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))

    def vertices(self) -> np.ndarray:
        return np.unique(np.concatenate([self.src, self.dst]))

    def vertex_fraction(self) -> float:
        return self.vertices().size / self.n if self.n else 0.0

    @property
    def d_max(self) -> int:
        if self._d_max is None:
            self._d_max = longest_path(self)
        return self._d_max


def _orient(f: np.ndarray, a: np.ndarray, b: np.ndarray):
    a_up = sos_greater_arrays(f[a], a, f[b], b)
    return np.where(a_up, a, b), np.where(a_up, b, a)


def candidate_pairs(ref: ReferenceTopology, window: float) -> tuple[np.ndarray, np.ndarray]:
    """Every compared pair with ``|f_u - f_v| <= window``, oriented and deduplicated."""
    f = ref.field.values
    n = f.size
    table = neighbor_table(ref.dims)
    ids = np.arange(n, dtype=np.int64)
    chunks_a, chunks_b = [], []

    def keep(a, b):
        m = (a >= 0) & (b >= 0) & (a != b)
        a, b = a[m], b[m]
        m = np.abs(f[a] - f[b]) <= window
        chunks_a.append(a[m])
        chunks_b.append(b[m])

    closed = np.concatenate([ids[:, None], table], axis=1)
    for k in range(table.shape[1]):
        nb = table[:, k]
        keep(ids[nb > ids], nb[nb > ids])
    for anchor in (ref.n_max, ref.n_min):
        for k in range(closed.shape[1]):
            keep(closed[:, k], anchor)
    for seq in (ref.saddles_sorted, ref.cps_sorted):
        keep(seq[:-1], seq[1:])
    for kind in (MIN, MAX):
        ext = np.flatnonzero(ref.flags & kind)
        ext = ext[np.argsort(f[ext], kind="stable")]
        vals = f[ext]
        # sorted sweep: each extremum against the ones within the window above it
        for shift in range(1, ext.size):
            close = vals[shift:] - vals[:-shift] <= window
            if not close.any():
                break
            keep(ext[:-shift][close], ext[shift:][close])
    a = np.concatenate(chunks_a)
    b = np.concatenate(chunks_b)
    hi, lo = _orient(f, a, b)
    code = np.unique(hi * n + lo)
    return code // n, code % n


def build_weak(f: ScalarField | ReferenceTopology, xi_abs: float) -> VulnerabilityGraph:
    ref = f if isinstance(f, ReferenceTopology) else build_reference(f)
    hi, lo = candidate_pairs(ref, 2.0 * xi_abs)
    return VulnerabilityGraph(Stage.WEAK, ref.field.size, hi, lo)


def prune_strong(weak: VulnerabilityGraph, f: ScalarField, fhat: ScalarField, xi_abs: float) -> VulnerabilityGraph:
    """Keep edges ``u -> v`` whose decompressed ``v`` can still reach ``f_u - xi``."""
    if f.dims != fhat.dims or f.size != weak.n:
        raise ValueError("field dims do not match the vulnerability graph")
    keep = fhat.values[weak.dst] >= lower_bound(f.values, xi_abs)[weak.src]
    return VulnerabilityGraph(Stage.STRONG, weak.n, weak.src[keep], weak.dst[keep])


def reduce(strong: VulnerabilityGraph, fhat: ScalarField) -> VulnerabilityGraph:
    """Part of the strong graph reachable from pairs already flipped in ``fhat``."""
    h = fhat.values
    src, dst = strong.src, strong.dst
    flipped = ~sos_greater_arrays(h[src], src, h[dst], dst)
    seeds = np.stack([src[flipped], dst[flipped]], axis=1)
    if seeds.size == 0:
        z = np.zeros(0, dtype=np.int64)
        return VulnerabilityGraph(Stage.REDUCED, strong.n, z, z.copy(), seeds.reshape(0, 2), 0)
    order = np.argsort(src, kind="stable")
    s_sorted, d_sorted = src[order], dst[order]
    starts = np.searchsorted(s_sorted, np.arange(strong.n + 1))
    reached = np.zeros(strong.n, dtype=bool)
    queue = deque(np.unique(seeds).tolist())
    reached[list(queue)] = True
    while queue:
        u = queue.popleft()
        for v in d_sorted[starts[u] : starts[u + 1]].tolist():
            if not reached[v]:
                reached[v] = True
                queue.append(v)
    keep = reached[src] & reached[dst]
    return VulnerabilityGraph(Stage.REDUCED, strong.n, src[keep], dst[keep], seeds)


def longest_path(graph: VulnerabilityGraph) -> int:
    """Vertices on the longest directed path (0 for an empty graph).

    Kahn's topological order with a depth DP; a leftover vertex means the
    graph had a cycle.
    """
    if graph.n_edges == 0:
        return 0
    verts, inv = np.unique(np.concatenate([graph.src, graph.dst]), return_inverse=True)
    m = graph.n_edges
    u, v = inv[:m], inv[m:]
    k = verts.size
    order = np.argsort(u, kind="stable")
    starts = np.searchsorted(u[order], np.arange(k + 1))
    succ = v[order].tolist()
    indeg = np.bincount(v, minlength=k).tolist()
    depth = [1] * k
    queue = deque(i for i in range(k) if indeg[i] == 0)
    seen = 0
    while queue:
        x = queue.popleft()
        seen += 1
        dx = depth[x] + 1
        for y in succ[starts[x] : starts[x + 1]]:
            if dx > depth[y]:
                depth[y] = dx
            indeg[y] -= 1
            if indeg[y] == 0:
                queue.append(y)
    if seen != k:
        raise CycleError("vulnerability graph is not acyclic")
    return max(depth)


def iteration_bound(steps: int, d_max: int) -> int:
    if steps < 1 or d_max < 0:
        raise ValueError("need steps >= 1 and d_max >= 0")
    return steps * d_max


@dataclass
class BoundReport:
    weak: VulnerabilityGraph
    strong: VulnerabilityGraph
    reduced: VulnerabilityGraph
    steps: int

    @property
    def d_max(self) -> int:
        return self.reduced.d_max

    @property
    def bound(self) -> int:
        return iteration_bound(self.steps, self.d_max)


def theoretical_bound(ref: ReferenceTopology, fhat: ScalarField, xi_abs: float, steps: int) -> BoundReport:
    weak = build_weak(ref, xi_abs)
    strong = prune_strong(weak, ref.field, fhat, xi_abs)
    return BoundReport(weak, strong, reduce(strong, fhat), steps)


def vulnerability_stats(f, fhat: ScalarField, xi_abs: float, edits=None, steps: int = 5) -> dict:
    """Table-style percentages of vertices touched by each stage, plus edits."""
    ref = f if isinstance(f, ReferenceTopology) else build_reference(f)
    rep = theoretical_bound(ref, fhat, xi_abs, steps)
    n = ref.field.size
    edited = 0 if edits is None else len(edits.entries)
    return {
        "gv_pct": 100.0 * rep.weak.vertex_fraction(),
        "gs_pct": 100.0 * rep.strong.vertex_fraction(),
        "gr_pct": 100.0 * rep.reduced.vertex_fraction(),
        "edit_pct": 100.0 * edited / n,
        "gv_edges": rep.weak.n_edges,
        "gs_edges": rep.strong.n_edges,
        "gr_edges": rep.reduced.n_edges,
        "seeds": int(rep.reduced.seeds.shape[0]),
        "d_max": rep.d_max,
        "steps": steps,
        "theoretical_max_iter": rep.bound,
    }

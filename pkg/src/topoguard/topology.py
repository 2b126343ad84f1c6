"""Critical points, extremum graphs and merge trees on PL grid fields.

The join tree is built from the extremum graph of minima by Extremum Graph
Pairing (EGP); ``brute_force_merge_tree`` sweeps the whole field with a
union-find and serves as the independent reference for it.  Split trees use
the same code on the reversed SoS order.

Most functions accept a precomputed SoS rank array so that callers running
many queries on one field (the corrector, the distributed simulator) sort
only once.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .grid import ScalarField, link_edges, neighbor_table, sos_rank

__all__ = [
    "Polarity",
    "Direction",
    "CriticalPoint",
    "ExtremumGraph",
    "MergeTree",
    "ReferenceTopology",
    "TopologyMismatchError",
    "MIN",
    "MAX",
    "JOIN",
    "SPLIT",
    "classify_critical_points",
    "critical_flags",
    "link_component_counts",
    "count_link_components",
    "flags_from_counts",
    "compute_topology",
    "FieldTopology",
    "steepest_neighbors",
    "steepest_terminus",
    "termini",
    "build_extremum_graph",
    "egp_merge_tree",
    "brute_force_merge_tree",
    "build_reference",
    "flags_to_points",
]

MIN, MAX, JOIN, SPLIT = 1, 2, 4, 8


class Polarity(str, enum.Enum):
    JOIN = "join"
    SPLIT = "split"


class Direction(str, enum.Enum):
    DESCENT = "descent"
    ASCENT = "ascent"


class TopologyMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class CriticalPoint:
    vertex: int
    is_min: bool = False
    is_max: bool = False
    is_join_saddle: bool = False
    is_split_saddle: bool = False

    @property
    def flags(self) -> int:
        return (
            MIN * self.is_min
            | MAX * self.is_max
            | JOIN * self.is_join_saddle
            | SPLIT * self.is_split_saddle
        )

    @property
    def is_saddle(self) -> bool:
        return self.is_join_saddle or self.is_split_saddle


@dataclass(frozen=True)
class ExtremumGraph:
    polarity: Polarity
    edges: frozenset  # of (saddle, extremum)

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {}
        for s, m in sorted(self.edges):
            adj.setdefault(s, []).append(m)
        return adj


@dataclass(frozen=True)
class MergeTree:
    polarity: Polarity
    arcs: frozenset  # of (extremum, saddle_or_root)
    root_arc: tuple[int, int]


def _rank_of(field_or_rank) -> np.ndarray:
    if isinstance(field_or_rank, ScalarField):
        return sos_rank(field_or_rank.values)
    return np.asarray(field_or_rank)


def _oriented(rank: np.ndarray, polarity: Polarity) -> np.ndarray:
    # the split tree of f is the join tree of -f; reversing the rank keeps SoS exact
    return rank if polarity == Polarity.JOIN else rank.size - 1 - rank


def link_component_counts(rank, table, pairs, rows=None):
    """Lower- and upper-link component counts for ``rows`` (all vertices by default)."""
    if rows is None:
        rows = np.arange(table.shape[0])
    nb = table[rows]
    valid = nb >= 0
    r_self = rank[rows][:, None]
    r_nb = rank[np.where(valid, nb, 0)]
    lower = valid & (r_nb < r_self)
    upper = valid & (r_nb > r_self)
    return count_link_components(lower, pairs), count_link_components(upper, pairs)


def count_link_components(mask: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Connected components of the masked link vertices, per row."""
    n, k = mask.shape
    slots = np.arange(k)
    labels = np.where(mask, slots, k)
    changed = True
    while changed:
        changed = False
        for a, b in pairs:
            both = mask[:, a] & mask[:, b]
            la, lb = labels[:, a], labels[:, b]
            upd = both & (la != lb)
            if upd.any():
                changed = True
                low = np.minimum(la, lb)
                labels[upd, a] = low[upd]
                labels[upd, b] = low[upd]
    return (mask & (labels == slots)).sum(axis=1)


def critical_flags(field_or_rank, dims=None, rows=None) -> np.ndarray:
    """Bitmask per vertex: MIN | MAX | JOIN | SPLIT (0 for regular vertices)."""
    if isinstance(field_or_rank, ScalarField):
        dims = field_or_rank.dims
    rank = _rank_of(field_or_rank)
    table = neighbor_table(dims)
    return flags_from_counts(*link_component_counts(rank, table, link_edges(dims), rows))


def flags_from_counts(n_lower, n_upper):
    # On 2D/3D grids an extremum's link is connected, so the saddle flags
    # never coexist with min/max there.  On a degenerate path grid an interior
    # maximum is where two sublevel components meet, and keeps its JOIN flag.
    flags = np.zeros(n_lower.shape, dtype=np.uint8)
    flags |= np.where(n_lower == 0, MIN, 0).astype(np.uint8)
    flags |= np.where(n_upper == 0, MAX, 0).astype(np.uint8)
    flags |= np.where(n_lower >= 2, JOIN, 0).astype(np.uint8)
    flags |= np.where(n_upper >= 2, SPLIT, 0).astype(np.uint8)
    return flags


def flags_to_points(flags: np.ndarray) -> list[CriticalPoint]:
    return [
        CriticalPoint(
            int(v),
            bool(f & MIN),
            bool(f & MAX),
            bool(f & JOIN),
            bool(f & SPLIT),
        )
        for v, f in zip(np.flatnonzero(flags), flags[flags != 0])
    ]


def classify_critical_points(field: ScalarField) -> list[CriticalPoint]:
    """Critical points by link-component counting under SoS, ascending vertex id."""
    return flags_to_points(critical_flags(field))


def steepest_neighbors(rank, table):
    """SoS-smallest and SoS-largest vertex of each closed neighborhood.

    An extremum points at itself, which is what makes the pointer arrays
    encode extremum status as well as integral-path directions.
    """
    n = rank.size
    ids = np.arange(n)
    valid = table >= 0
    r_nb = rank[np.where(valid, table, 0)]
    lo = np.where(valid, r_nb, n).argmin(axis=1)
    hi = np.where(valid, r_nb, -1).argmax(axis=1)
    lo_id = table[ids, lo]
    hi_id = table[ids, hi]
    down = np.where((lo_id >= 0) & (rank[np.maximum(lo_id, 0)] < rank), lo_id, ids)
    up = np.where((hi_id >= 0) & (rank[np.maximum(hi_id, 0)] > rank), hi_id, ids)
    return down, up


def termini(pointer: np.ndarray) -> np.ndarray:
    """Follow steepest pointers to their fixed points by pointer jumping."""
    t = pointer.copy()
    while True:
        nxt = t[t]
        if np.array_equal(nxt, t):
            return t
        t = nxt


def steepest_terminus(field: ScalarField, v: int, direction: Direction) -> int:
    rank = sos_rank(field.values)
    table = neighbor_table(field.dims)
    ascend = Direction(direction) == Direction.ASCENT
    while True:
        nb = table[v][table[v] >= 0]
        if nb.size == 0:
            return int(v)
        best = nb[np.argmax(rank[nb])] if ascend else nb[np.argmin(rank[nb])]
        if (rank[best] > rank[v]) if ascend else (rank[best] < rank[v]):
            v = int(best)
        else:
            return int(v)


def build_extremum_graph(field_or_rank, flags, polarity, dims=None, pointers=None) -> ExtremumGraph:
    """Saddle-extremum edges along steepest paths leaving each saddle's lower (upper) link."""
    polarity = Polarity(polarity)
    if isinstance(field_or_rank, ScalarField):
        dims = field_or_rank.dims
    rank = _rank_of(field_or_rank)
    table = neighbor_table(dims)
    if flags is None:
        flags = critical_flags(rank, dims)
    elif not isinstance(flags, np.ndarray):
        flags = _points_to_flags(flags, rank.size)
    if pointers is None:
        pointers = steepest_neighbors(rank, table)
    down, up = pointers
    join = polarity == Polarity.JOIN
    ends = termini(down if join else up)
    saddles = np.flatnonzero(flags & (JOIN if join else SPLIT))
    if saddles.size == 0:
        return ExtremumGraph(polarity, frozenset())
    nb = table[saddles]
    valid = nb >= 0
    r_nb = rank[np.where(valid, nb, 0)]
    r_s = rank[saddles][:, None]
    side = valid & ((r_nb < r_s) if join else (r_nb > r_s))
    s_idx, k_idx = np.nonzero(side)
    pairs = np.stack([saddles[s_idx], ends[nb[s_idx, k_idx]]], axis=1)
    pairs = np.unique(pairs, axis=0)
    return ExtremumGraph(polarity, frozenset(map(tuple, pairs.tolist())))


def _points_to_flags(points, n):
    flags = np.zeros(n, dtype=np.uint8)
    for cp in points:
        flags[cp.vertex] = cp.flags
    return flags


class _UnionFind:
    def __init__(self):
        self.parent: dict[int, int] = {}

    def add(self, x):
        self.parent.setdefault(x, x)

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root


def egp_merge_tree(eg: ExtremumGraph, field_or_rank, flags=None, dims=None) -> MergeTree:
    """Extract branches from an extremum graph by Extremum Graph Pairing.

    Saddles are visited lowest first.  While a saddle still connects two or
    more distinct extrema, the highest of them is paired with it and replaced
    everywhere by the lowest one; saddles left connecting a single extremum
    drop out.  For the split tree "lowest"/"highest" are mirrored.
    """
    polarity = Polarity(eg.polarity)
    if isinstance(field_or_rank, ScalarField):
        dims = field_or_rank.dims
    rank = _rank_of(field_or_rank)
    key = _oriented(rank, polarity)
    want = MIN if polarity == Polarity.JOIN else MAX
    want_saddle = JOIN if polarity == Polarity.JOIN else SPLIT
    if flags is None:
        flags = critical_flags(rank, dims)
    extrema = np.flatnonzero(flags & want)
    for s, m in eg.edges:
        if not (flags[s] & want_saddle) or not (flags[m] & want):
            raise TopologyMismatchError(f"edge ({s}, {m}) does not match the field's critical points")
    if extrema.size == 0:
        raise TopologyMismatchError("field has no extrema of the requested kind")

    global_ext = int(extrema[np.argmin(key[extrema])])
    root = int(np.argmax(key))
    arcs = set()
    uf = _UnionFind()
    for m in extrema.tolist():
        uf.add(m)
    adj = eg.adjacency()
    for s in sorted(adj, key=lambda s: key[s]):
        # current representatives = lowest extremum of each merged component
        reps = sorted({uf.find(m) for m in adj[s]}, key=lambda m: key[m])
        if len(reps) < 2:
            continue
        survivor = reps[0]
        for m in reversed(reps[1:]):
            arcs.add((m, int(s)))
            uf.parent[m] = survivor
    leftovers = {uf.find(m) for m in extrema.tolist()} - {uf.find(global_ext)}
    for m in leftovers:
        # disconnected extremum graph; cannot happen on a connected grid
        arcs.add((m, root))
    root_arc = (global_ext, root)
    arcs.add(root_arc)
    return MergeTree(polarity, frozenset(arcs), root_arc)


def brute_force_merge_tree(field_or_rank, polarity, dims=None) -> MergeTree:
    """Merge tree by a full sublevel-set sweep with union-find (reference oracle)."""
    polarity = Polarity(polarity)
    if isinstance(field_or_rank, ScalarField):
        dims = field_or_rank.dims
    rank = _rank_of(field_or_rank)
    key = _oriented(rank, polarity)
    table = neighbor_table(dims)
    order = np.argsort(key)
    parent = np.full(rank.size, -1, dtype=np.int64)
    birth = {}  # component root -> its extremum

    def find(x):
        r = x
        while parent[r] != r:
            r = parent[r]
        while parent[x] != r:
            parent[x], x = r, parent[x]
        return r

    arcs = set()
    for v in order.tolist():
        parent[v] = v
        roots = {find(u) for u in table[v] if u >= 0 and parent[u] >= 0}
        if not roots:
            birth[v] = v
            continue
        comps = sorted(roots, key=lambda r: key[birth[r]])
        keep = comps[0]
        for r in comps[1:]:
            arcs.add((birth[r], v))
            parent[r] = keep
        parent[v] = keep
    global_ext = int(order[0])
    root_arc = (global_ext, int(order[-1]))
    arcs.add(root_arc)
    return MergeTree(polarity, frozenset(arcs), root_arc)


@dataclass(frozen=True, eq=False)
class ReferenceTopology:
    """Ground truth extracted once from the original field."""

    field: ScalarField
    rank: np.ndarray
    n_min: np.ndarray
    n_max: np.ndarray
    flags: np.ndarray
    saddles_sorted: np.ndarray
    cps_sorted: np.ndarray
    eg_join: ExtremumGraph
    eg_split: ExtremumGraph
    tree_join: MergeTree
    tree_split: MergeTree

    @property
    def dims(self):
        return self.field.dims

    def critical_points(self) -> list[CriticalPoint]:
        return flags_to_points(self.flags)

    def extremum_graph(self, polarity) -> ExtremumGraph:
        return self.eg_join if Polarity(polarity) == Polarity.JOIN else self.eg_split

    def merge_tree(self, polarity) -> MergeTree:
        return self.tree_join if Polarity(polarity) == Polarity.JOIN else self.tree_split


@dataclass(frozen=True, eq=False)
class FieldTopology:
    """Extremum graphs and merge trees of an arbitrary (candidate) field."""

    rank: np.ndarray
    flags: np.ndarray
    eg_join: ExtremumGraph
    eg_split: ExtremumGraph
    tree_join: MergeTree
    tree_split: MergeTree


def compute_topology(field: ScalarField, rank=None) -> FieldTopology:
    if rank is None:
        rank = sos_rank(field.values)
    table = neighbor_table(field.dims)
    flags = critical_flags(rank, field.dims)
    pointers = steepest_neighbors(rank, table)
    eg_j = build_extremum_graph(rank, flags, Polarity.JOIN, field.dims, pointers)
    eg_s = build_extremum_graph(rank, flags, Polarity.SPLIT, field.dims, pointers)
    return FieldTopology(
        rank,
        flags,
        eg_j,
        eg_s,
        egp_merge_tree(eg_j, rank, flags),
        egp_merge_tree(eg_s, rank, flags),
    )


def build_reference(field: ScalarField) -> ReferenceTopology:
    rank = sos_rank(field.values)
    table = neighbor_table(field.dims)
    topo = compute_topology(field, rank)
    n_min, n_max = steepest_neighbors(rank, table)
    flags = topo.flags
    saddles = np.flatnonzero(flags & (JOIN | SPLIT))
    cps = np.flatnonzero(flags)
    for arr in (rank, n_min, n_max, flags):
        arr.flags.writeable = False
    return ReferenceTopology(
        field=field,
        rank=rank,
        n_min=n_min,
        n_max=n_max,
        flags=flags,
        saddles_sorted=saddles[np.argsort(rank[saddles])],
        cps_sorted=cps[np.argsort(rank[cps])],
        eg_join=topo.eg_join,
        eg_split=topo.eg_split,
        tree_join=topo.tree_join,
        tree_split=topo.tree_split,
    )

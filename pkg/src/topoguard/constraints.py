"""Violation detectors for the extremum-graph, saddle-order and event constraints.

Every detector reports a vertex pair whose SoS order in the candidate field
``g`` is the reverse of its order in the original ``f``.  The edit target is
always the f-smaller endpoint: edits only ever decrease values, so lowering
the vertex that belongs below is the only move that restores the pair.

The kernels work on a :class:`DetectorContext`, which is either the whole
grid (serial correction) or one partition's owned block plus ghost layer
(distributed simulator).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .grid import ScalarField, link_edges, neighbor_table, sos_greater_arrays, sos_rank
from .topology import (
    JOIN,
    MAX,
    MIN,
    SPLIT,
    FieldTopology,
    Polarity,
    ReferenceTopology,
    build_extremum_graph,
    compute_topology,
    count_link_components,
    flags_from_counts,
)

__all__ = [
    "Reason",
    "Mode",
    "Violation",
    "Violations",
    "DetectorContext",
    "serial_context",
    "check_eg_constraints",
    "check_saddle_ordering",
    "check_event_constraints_original",
    "check_event_constraints_reformulated",
    "check_constraints",
    "detect",
    "eg_violations",
    "LocalDetector",
    "order_violations",
]


class Reason(enum.IntEnum):
    WRONG_MAX_NEIGHBOR = 0
    WRONG_MIN_NEIGHBOR = 1
    SADDLE_NEIGHBOR_FLIP = 2
    SADDLE_ORDER_FLIP = 3
    EVENT_PAIR_FLIP = 4
    CP_ORDER_FLIP = 5
    # a non-saddle vertex of f whose link classification changed in g
    CRITICAL_TYPE_FLIP = 6


class Mode(str, enum.Enum):
    ORIGINAL = "original"
    REFORMULATED = "reformulated"


@dataclass(frozen=True, order=True)
class Violation:
    target: int
    reason: Reason
    witness: int


@dataclass
class Violations:
    """Columnar violation list (global vertex ids)."""

    target: np.ndarray
    witness: np.ndarray
    reason: np.ndarray

    @classmethod
    def empty(cls) -> "Violations":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy())

    @classmethod
    def concat(cls, parts) -> "Violations":
        parts = [p for p in parts if p.target.size]
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.target for p in parts]),
            np.concatenate([p.witness for p in parts]),
            np.concatenate([p.reason for p in parts]),
        )

    def __len__(self):
        return int(self.target.size)

    def targets(self) -> np.ndarray:
        """Deduplicated targets, ascending: one edit per vertex per iteration."""
        return np.unique(self.target)

    def to_list(self) -> list[Violation]:
        rows = sorted(
            set(zip(self.target.tolist(), self.reason.tolist(), self.witness.tolist()))
        )
        return [Violation(t, Reason(r), w) for t, r, w in rows]

    def histogram(self) -> dict[str, int]:
        counts = np.bincount(self.reason, minlength=len(Reason)) if len(self) else np.zeros(len(Reason), int)
        return {r.name: int(counts[r]) for r in Reason}


def _pack(target, witness, reason) -> Violations:
    target = np.asarray(target, dtype=np.int64)
    return Violations(
        target,
        np.asarray(witness, dtype=np.int64),
        np.full(target.size, int(reason), dtype=np.int64),
    )


@dataclass(frozen=True, eq=False)
class DetectorContext:
    """f-side data needed to evaluate the local constraints on a vertex block.

    All arrays are indexed by local vertex id; ``gid`` maps back to global ids.
    ``anchors`` are the vertices whose constraints this context evaluates.
    """

    table: np.ndarray
    links: np.ndarray
    gid: np.ndarray
    f_rank: np.ndarray
    flags: np.ndarray
    n_min: np.ndarray  # local ids, valid for anchors
    n_max: np.ndarray
    anchors: np.ndarray


def serial_context(ref: ReferenceTopology) -> DetectorContext:
    n = ref.field.size
    ids = np.arange(n, dtype=np.int64)
    return DetectorContext(
        table=neighbor_table(ref.dims),
        links=link_edges(ref.dims),
        gid=ids,
        f_rank=ref.rank,
        flags=ref.flags,
        n_min=ref.n_min,
        n_max=ref.n_max,
        anchors=ids,
    )


def _closed_steepest(ctx: DetectorContext, g: np.ndarray, a: np.ndarray):
    """SoS-min and SoS-max of each anchor's closed neighborhood in ``g`` (local ids)."""
    cand = np.concatenate([a[:, None], ctx.table[a]], axis=1)
    valid = cand >= 0
    safe = np.where(valid, cand, 0)
    vals = g[safe]
    ids = ctx.gid[safe]
    big = np.iinfo(np.int64).max
    hi_v = np.where(valid, vals, -np.inf).max(axis=1)
    at_hi = valid & (vals == hi_v[:, None])
    up = np.take_along_axis(safe, np.where(at_hi, ids, -1).argmax(axis=1)[:, None], 1)[:, 0]
    lo_v = np.where(valid, vals, np.inf).min(axis=1)
    at_lo = valid & (vals == lo_v[:, None])
    down = np.take_along_axis(safe, np.where(at_lo, ids, big).argmin(axis=1)[:, None], 1)[:, 0]
    return down, up


def _eg_kernel(ctx: DetectorContext, g: np.ndarray, a: np.ndarray):
    """Local C1 checks for anchors ``a``.

    Returns the violations, the anchor each one belongs to, and the anchors'
    steepest pointers and critical flags in ``g`` (all local ids).
    """
    gid = ctx.gid
    down, up = _closed_steepest(ctx, g, a)
    parts, owners = [], []

    bad = up != ctx.n_max[a]
    # the impostor that overtook the true steepest-ascent neighbor goes down
    parts.append(_pack(gid[up[bad]], gid[ctx.n_max[a][bad]], Reason.WRONG_MAX_NEIGHBOR))
    owners.append(a[bad])
    bad = down != ctx.n_min[a]
    # the true steepest-descent neighbor goes down below the impostor
    parts.append(_pack(gid[ctx.n_min[a][bad]], gid[down[bad]], Reason.WRONG_MIN_NEIGHBOR))
    owners.append(a[bad])

    g_flags = ctx.flags[a].copy()
    nb = ctx.table[a]
    valid = nb >= 0
    safe = np.where(valid, nb, 0)
    g_above = sos_greater_arrays(g[safe], gid[safe], g[a][:, None], gid[a][:, None])
    f_above = ctx.f_rank[safe] > ctx.f_rank[a][:, None]
    flip = valid & (g_above != f_above)
    rows = np.flatnonzero(flip.any(axis=1))
    if rows.size:
        # only rows with a flipped neighbor can classify differently from f
        lower = valid[rows] & ~g_above[rows]
        upper = valid[rows] & g_above[rows]
        g_flags[rows] = flags_from_counts(
            count_link_components(lower, ctx.links), count_link_components(upper, ctx.links)
        )
        saddle = (ctx.flags[a[rows]] & (JOIN | SPLIT)) != 0
        for sel, reason in (
            (rows[saddle], Reason.SADDLE_NEIGHBOR_FLIP),
            (rows[~saddle][g_flags[rows[~saddle]] != ctx.flags[a[rows[~saddle]]]], Reason.CRITICAL_TYPE_FLIP),
        ):
            found, who = _flip_pairs(ctx, a, nb, flip, f_above, sel, reason)
            parts.append(found)
            owners.append(who)
    return Violations.concat(parts), np.concatenate(owners), down, up, g_flags


def eg_violations(ctx: DetectorContext, g: np.ndarray) -> Violations:
    """Steepest-neighbor, saddle-neighbor and critical-type checks on the anchors."""
    return _eg_kernel(ctx, g, ctx.anchors)[0]


class LocalDetector:
    """C1 state of a vertex block, refreshed only where values changed.

    Everything the C1 checks look at for an anchor lies in its closed
    neighborhood, so after edits only anchors next to a changed vertex are
    re-evaluated.  Also keeps g's steepest pointers and critical flags,
    which the pairing replay of the original event constraints reuses.
    """

    def __init__(self, ctx: DetectorContext, g: np.ndarray):
        self.ctx = ctx
        n = ctx.table.shape[0]
        self.is_anchor = np.zeros(n, dtype=bool)
        self.is_anchor[ctx.anchors] = True
        self.down = np.arange(n, dtype=np.int64)
        self.up = np.arange(n, dtype=np.int64)
        self.g_flags = np.zeros(n, dtype=np.uint8)
        self._found, self._owner = self._refresh(g, ctx.anchors)

    def _refresh(self, g, anchors):
        found, owner, down, up, flags = _eg_kernel(self.ctx, g, anchors)
        self.down[anchors] = down
        self.up[anchors] = up
        self.g_flags[anchors] = flags
        return found, owner

    def update(self, g: np.ndarray, changed: np.ndarray) -> None:
        """Re-evaluate anchors whose closed neighborhood contains ``changed`` (local ids)."""
        if changed.size == 0:
            return
        touched = np.zeros(self.is_anchor.size, dtype=bool)
        touched[changed] = True
        nb = self.ctx.table[changed]
        touched[nb[nb >= 0]] = True
        touched &= self.is_anchor
        dirty = np.flatnonzero(touched)
        keep = ~touched[self._owner]
        found, owner = self._refresh(g, dirty)
        old = self._found
        self._found = Violations.concat(
            [Violations(old.target[keep], old.witness[keep], old.reason[keep]), found]
        )
        self._owner = np.concatenate([self._owner[keep], owner])

    @property
    def violations(self) -> Violations:
        return self._found


def _flip_pairs(ctx, a, nb, flip, f_above, rows, reason):
    if rows.size == 0:
        return Violations.empty(), np.zeros(0, dtype=np.int64)
    r, k = np.nonzero(flip[rows])
    center = a[rows[r]]
    other = nb[rows[r], k]
    # f_above: neighbor is f-larger, so the center is the f-smaller endpoint
    center_lower = f_above[rows[r], k]
    target = np.where(center_lower, center, other)
    witness = np.where(center_lower, other, center)
    return _pack(ctx.gid[target], ctx.gid[witness], reason), center


def order_violations(seq: np.ndarray, g: np.ndarray, reason: Reason) -> Violations:
    """Adjacent pairs of an f-ascending sequence whose order flipped in ``g``."""
    if seq.size < 2:
        return Violations.empty()
    lo, hi = seq[:-1], seq[1:]
    bad = sos_greater_arrays(g[lo], lo, g[hi], hi)
    return _pack(lo[bad], hi[bad], reason)


def _as_values(ref: ReferenceTopology, g) -> np.ndarray:
    if isinstance(g, ScalarField):
        if g.dims != ref.dims:
            raise ValueError(f"dims differ: {ref.dims} vs {g.dims}")
        return g.values
    g = np.asarray(g, dtype=np.float64)
    if g.size != ref.field.size:
        raise ValueError("candidate field size does not match the reference")
    return g


def event_violations_original(ref: ReferenceTopology, g: np.ndarray, topo_g: FieldTopology | None = None) -> Violations:
    """Replay EGP on g's own extremum graphs and compare each merge with f.

    Every component formed at a saddle keeps two representatives: its lowest
    reference extremum under f and under g.  EGP pairs the representative,
    so when the two disagree the g-selected extremum must come down below
    the other one.
    """
    if topo_g is None:
        topo_g = compute_topology(ScalarField(ref.dims, g), sos_rank(g))
    return _replay_pairing(ref, topo_g.rank, topo_g.eg_join, topo_g.eg_split)


def _replay_pairing(ref: ReferenceTopology, g_rank, eg_join, eg_split) -> Violations:
    f_rank = ref.rank
    out_t, out_w = [], []
    for eg, want, sign in ((eg_join, MIN, 1), (eg_split, MAX, -1)):
        fk = f_rank * sign
        gk = g_rank * sign
        is_ref = (ref.flags & want) != 0
        parent: dict[int, int] = {}
        rep: dict[int, tuple[int, int]] = {}

        def find(x):
            r = x
            while parent[r] != r:
                r = parent[r]
            while parent[x] != r:
                parent[x], x = r, parent[x]
            return r

        adj = eg.adjacency()
        for s in sorted(adj, key=lambda s: gk[s]):
            roots = []
            for m in adj[s]:
                if m not in parent:
                    parent[m] = m
                    rep[m] = (m, m) if is_ref[m] else (-1, -1)
                r = find(m)
                if r not in roots:
                    roots.append(r)
            if len(roots) < 2:
                continue
            fr = [rep[r][0] for r in roots if rep[r][0] >= 0]
            gr = [rep[r][1] for r in roots if rep[r][1] >= 0]
            keep = roots[0]
            for r in roots[1:]:
                parent[r] = keep
            if not fr:
                continue
            f_rep = min(fr, key=lambda m: fk[m])
            g_rep = min(gr, key=lambda m: gk[m])
            rep[keep] = (f_rep, g_rep)
            if f_rep != g_rep:
                out_t.append(f_rep)
                out_w.append(g_rep)
    return _pack(out_t, out_w, Reason.EVENT_PAIR_FLIP)


def _original_events(ref: ReferenceTopology, g: np.ndarray, local: LocalDetector) -> Violations:
    # g's flags and steepest pointers are already maintained by the C1 state
    g_rank = sos_rank(g)
    pointers = (local.down, local.up)
    egs = [
        build_extremum_graph(g_rank, local.g_flags, pol, ref.dims, pointers)
        for pol in (Polarity.JOIN, Polarity.SPLIT)
    ]
    return _replay_pairing(ref, g_rank, *egs)


def detect(
    ref: ReferenceTopology,
    g,
    mode: Mode = Mode.REFORMULATED,
    ctx: DetectorContext | None = None,
    local: LocalDetector | None = None,
) -> Violations:
    """All violations of C1, C2 and the mode's C3 variant on ``g``.

    ``local`` is an up-to-date :class:`LocalDetector` for ``g`` covering the
    whole grid; when given, the C1 part is read from it instead of recomputed.
    """
    g = _as_values(ref, g)
    if local is None:
        local = LocalDetector(ctx or serial_context(ref), g)
    parts = [
        local.violations,
        order_violations(ref.saddles_sorted, g, Reason.SADDLE_ORDER_FLIP),
    ]
    if Mode(mode) == Mode.REFORMULATED:
        parts.append(order_violations(ref.cps_sorted, g, Reason.CP_ORDER_FLIP))
    else:
        parts.append(_original_events(ref, g, local))
    return Violations.concat(parts)


def check_eg_constraints(ref: ReferenceTopology, g) -> list[Violation]:
    return eg_violations(serial_context(ref), _as_values(ref, g)).to_list()


def check_saddle_ordering(ref: ReferenceTopology, g) -> list[Violation]:
    return order_violations(ref.saddles_sorted, _as_values(ref, g), Reason.SADDLE_ORDER_FLIP).to_list()


def check_event_constraints_original(ref: ReferenceTopology, g, eg_g: FieldTopology | None = None) -> list[Violation]:
    return event_violations_original(ref, _as_values(ref, g), eg_g).to_list()


def check_event_constraints_reformulated(ref: ReferenceTopology, g) -> list[Violation]:
    return order_violations(ref.cps_sorted, _as_values(ref, g), Reason.CP_ORDER_FLIP).to_list()


def check_constraints(ref: ReferenceTopology, g, mode: Mode = Mode.REFORMULATED) -> list[Violation]:
    return detect(ref, g, mode).to_list()

"""Single-process simulator of the block-distributed correction protocol.

Each rank owns an axis-aligned block plus a one-vertex ghost layer.  A round
is globally synchronous: every rank runs the local detectors on its owned
vertices, edit proposals travel to the owning rank, owners apply one bounded
step, ghost layers and critical-point successor values are refreshed, and a
global reduction decides termination.  Message passing is modelled as array
copies whose sizes are counted.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constraints import (
    DetectorContext,
    LocalDetector,
    Mode,
    Reason,
    Violations,
    _original_events,
    _pack,
)
from .corrector import (
    CorrectionConfig,
    CorrectionResult,
    EditState,
    NonConvergenceError,
    UnsupportedConfigError,
    accumulate,
    apply_bounded_edits,
    finish,
    prepare,
)
from .grid import ScalarField, link_edges, neighbor_table, sos_greater_arrays
from .topology import ReferenceTopology

__all__ = [
    "Block",
    "Partition",
    "SimStats",
    "partition",
    "merge_min",
    "worker_count",
    "run_distributed_correction",
]


@dataclass(frozen=True)
class Block:
    """Half-open owned extents ``[lo[i], hi[i])`` per axis."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def partition(dims, p: int) -> list[Block]:
    """Recursive bisection along the longest axis (first one on ties) into ``p`` blocks."""
    dims = tuple(int(d) for d in dims)
    total = int(np.prod(dims))
    if p < 1 or p > total:
        raise ValueError(f"cannot split {total} vertices into {p} blocks")

    def split(lo, hi, k):
        if k == 1:
            return [Block(tuple(lo), tuple(hi))]
        ext = [h - l for l, h in zip(lo, hi)]
        axis = int(np.argmax(ext))
        k1 = k // 2
        k2 = k - k1
        other = int(np.prod(ext)) // ext[axis]
        # proportional cut, nudged so both halves hold at least one vertex per block
        cut = ext[axis] * k1 // k
        cut = max(cut, -(-k1 // other))
        cut = min(cut, ext[axis] - (-(-k2 // other)))
        # small boxes may still not fit; move blocks to the side with room
        k1 = min(max(k1, k - (ext[axis] - cut) * other, 1), cut * other, k - 1)
        k2 = k - k1
        mid_hi = list(hi)
        mid_hi[axis] = lo[axis] + cut
        mid_lo = list(lo)
        mid_lo[axis] = lo[axis] + cut
        return split(lo, mid_hi, k1) + split(mid_lo, hi, k2)

    return split([0] * len(dims), list(dims), p)


def merge_min(targets: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Combine value proposals per vertex; the smaller value wins."""
    uniq, inv = np.unique(targets, return_inverse=True)
    out = np.full(uniq.size, np.inf)
    np.minimum.at(out, inv, values)
    return uniq, out


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("EXACTZ_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(eq=False)
class Partition:
    rank: int
    block: Block
    gid: np.ndarray  # local -> global, ascending
    owned: np.ndarray  # local ids of owned vertices
    ghost: np.ndarray  # local ids of ghost vertices
    f: np.ndarray
    fhat: np.ndarray
    g: np.ndarray
    ctx: DetectorContext
    # adjacent pairs (lo, hi) of the global f-sorted saddle / critical point
    # sequences whose lower element this rank owns, with the exchanged
    # successor values
    seq_lo: dict[Reason, np.ndarray] = field(default_factory=dict)
    seq_hi: dict[Reason, np.ndarray] = field(default_factory=dict)
    succ_val: dict[Reason, np.ndarray] = field(default_factory=dict)
    detector: LocalDetector | None = None

    def to_local(self, gids: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.gid, gids)

    def detect(self) -> Violations:
        parts = [self.detector.violations]
        for reason, lo in self.seq_lo.items():
            hi = self.seq_hi[reason]
            bad = sos_greater_arrays(self.g[self.to_local(lo)], lo, self.succ_val[reason], hi)
            parts.append(_pack(lo[bad], hi[bad], reason))
        return Violations.concat(parts)


def _build_partition(rank: int, block: Block, ref: ReferenceTopology, fhat: np.ndarray, seqs, owner) -> Partition:
    dims = ref.dims
    ext_lo = [max(l - 1, 0) for l in block.lo]
    ext_hi = [min(h + 1, d) for h, d in zip(block.hi, dims)]
    box = tuple(slice(l, h) for l, h in zip(ext_lo, ext_hi))
    local_dims = tuple(h - l for l, h in zip(ext_lo, ext_hi))
    gid = np.arange(ref.field.size, dtype=np.int64).reshape(dims)[box].ravel()
    own = owner[gid] == rank
    owned = np.flatnonzero(own)
    f = ref.field.values[gid]
    order = np.lexsort((gid, f))
    f_rank = np.empty(gid.size, dtype=np.int64)
    f_rank[order] = np.arange(gid.size)
    n_min = np.full(gid.size, -1, dtype=np.int64)
    n_max = np.full(gid.size, -1, dtype=np.int64)
    n_min[owned] = np.searchsorted(gid, ref.n_min[gid[owned]])
    n_max[owned] = np.searchsorted(gid, ref.n_max[gid[owned]])
    ctx = DetectorContext(
        table=neighbor_table(local_dims),
        links=link_edges(local_dims),
        gid=gid,
        f_rank=f_rank,
        flags=ref.flags[gid],
        n_min=n_min,
        n_max=n_max,
        anchors=owned,
    )
    part = Partition(
        rank=rank,
        block=block,
        gid=gid,
        owned=owned,
        ghost=np.flatnonzero(~own),
        f=f,
        fhat=fhat[gid].copy(),
        g=fhat[gid].copy(),
        ctx=ctx,
    )
    for reason, seq in seqs:
        if seq.size < 2:
            continue
        mine = owner[seq[:-1]] == rank
        part.seq_lo[reason] = seq[:-1][mine]
        part.seq_hi[reason] = seq[1:][mine]
        part.succ_val[reason] = fhat[seq[1:][mine]].copy()
    part.detector = LocalDetector(ctx, part.g)
    return part


@dataclass
class SimStats:
    ranks: int
    rounds: int = 0
    edits_per_round: list[int] = field(default_factory=list)
    violations_per_round: list[int] = field(default_factory=list)
    exchanged_per_round: list[int] = field(default_factory=list)
    phase_times: dict[str, float] = field(default_factory=dict)
    # per round: the slowest rank's local work plus the exchange, i.e. T(p)
    parallel_time: float = 0.0
    # all ranks' local work summed, what one worker would spend
    total_work: float = 0.0
    strong_efficiency: float | None = None
    weak_efficiency: float | None = None

    def set_baseline(self, t1: float) -> None:
        """Fill E(p) = T(1) / (p T(p)) and W(p) = T(1) / T(p) from a single-rank time."""
        if self.parallel_time <= 0:
            self.strong_efficiency = self.weak_efficiency = None
            return
        self.strong_efficiency = t1 / (self.ranks * self.parallel_time)
        self.weak_efficiency = t1 / self.parallel_time

    def to_dict(self) -> dict:
        return {
            "ranks": self.ranks,
            "rounds": self.rounds,
            "edits_per_round": self.edits_per_round,
            "violations_per_round": self.violations_per_round,
            "exchanged_per_round": self.exchanged_per_round,
            "phase_times": self.phase_times,
            "parallel_time": self.parallel_time,
            "total_work": self.total_work,
            "strong_efficiency": self.strong_efficiency,
            "weak_efficiency": self.weak_efficiency,
        }


def run_distributed_correction(
    f: ScalarField,
    fhat: ScalarField,
    cfg: CorrectionConfig,
    p: int,
    ref: ReferenceTopology | None = None,
    t1: float | None = None,
) -> tuple[CorrectionResult, SimStats]:
    """Run the correction protocol on ``p`` simulated ranks.

    Only the reformulated constraints are local; the original event
    constraints follow integral paths across blocks and need ``p == 1``.
    """
    mode = Mode(cfg.mode)
    if mode == Mode.ORIGINAL and p > 1:
        raise UnsupportedConfigError("original event constraints are not supported with more than one rank")
    xi, ref, report, limit = prepare(f, fhat, cfg, ref)
    blocks = partition(f.dims, p)
    owner = np.empty(f.size, dtype=np.int64)
    idx = np.arange(f.size).reshape(f.dims)
    for r, b in enumerate(blocks):
        owner[idx[tuple(slice(l, h) for l, h in zip(b.lo, b.hi))].ravel()] = r

    seqs = [(Reason.SADDLE_ORDER_FLIP, ref.saddles_sorted)]
    if mode == Mode.REFORMULATED:
        seqs.append((Reason.CP_ORDER_FLIP, ref.cps_sorted))
    parts = [_build_partition(r, b, ref, fhat.values, seqs, owner) for r, b in enumerate(blocks)]

    # owners hold the authoritative edit counters; the array is shared only
    # because each rank touches nothing but its own entries
    state = EditState.start(f.values, fhat.values, xi, cfg.steps)
    stats = SimStats(ranks=p)
    phases = {"detect": 0.0, "reduce": 0.0, "apply": 0.0, "exchange": 0.0}
    counts: list[int] = []
    hist: dict[str, int] = {}
    workers = min(worker_count(), p)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def timed_detect(part):
        t = time.perf_counter()
        found = part.detect()
        if mode == Mode.ORIGINAL:
            found = Violations.concat([found, _original_events(ref, part.g, part.detector)])
        return found, time.perf_counter() - t

    try:
        while True:
            stats.rounds += 1
            t0 = time.perf_counter()
            out = list(pool.map(timed_detect, parts)) if pool else [timed_detect(q) for q in parts]
            phases["detect"] += time.perf_counter() - t0
            local_t = np.array([dt for _, dt in out])

            t0 = time.perf_counter()
            total = sum(len(v) for v, _ in out)
            phases["reduce"] += time.perf_counter() - t0
            found = Violations.concat([v for v, _ in out])
            counts.append(total)
            stats.violations_per_round.append(total)
            accumulate(hist, found)
            if total == 0:
                stats.parallel_time += float(local_t.max())
                stats.total_work += float(local_t.sum())
                break
            if limit is not None and stats.rounds > limit:
                raise NonConvergenceError(
                    f"distributed correction exceeded the theoretical bound of {limit} edit rounds"
                )

            # proposals: targets owned elsewhere are shipped to their owner
            exchanged = 0
            t0 = time.perf_counter()
            for r, (v, _) in enumerate(out):
                exchanged += int(np.count_nonzero(owner[np.unique(v.target)] != r))
            targets = found.targets()
            apply_t = np.zeros(p)
            for r in range(p):
                ta = time.perf_counter()
                mine = targets[owner[targets] == r]
                apply_bounded_edits(state, mine)
                apply_t[r] = time.perf_counter() - ta
            phases["apply"] += time.perf_counter() - t0
            stats.edits_per_round.append(int(targets.size))

            t0 = time.perf_counter()
            for part in parts:
                changed = part.to_local(targets[np.isin(targets, part.gid, assume_unique=True)])
                # owned copies take the owner's value; ghosts keep the smaller one
                part.g[changed] = np.minimum(part.g[changed], state.g[part.gid[changed]])
                exchanged += int(np.count_nonzero(owner[part.gid[changed]] != part.rank))
                for reason, hi in part.seq_hi.items():
                    part.succ_val[reason] = state.g[hi]
                    exchanged += int(np.count_nonzero(owner[hi] != part.rank))
                part.detector.update(part.g, changed)
            ex_t = time.perf_counter() - t0
            phases["exchange"] += ex_t
            stats.exchanged_per_round.append(exchanged)
            stats.parallel_time += float((local_t + apply_t).max()) + ex_t / p
            stats.total_work += float((local_t + apply_t).sum()) + ex_t
    finally:
        if pool is not None:
            pool.shutdown()

    stitched = np.empty(f.size)
    for part in parts:
        stitched[part.gid[part.owned]] = part.g[part.owned]
    if not np.array_equal(stitched, state.g):
        raise AssertionError("stitched owned blocks disagree with the owners' edit state")
    stats.phase_times = phases
    if t1 is not None:
        stats.set_baseline(t1)
    return finish(fhat, state, xi, stats.rounds, counts, hist, report), stats

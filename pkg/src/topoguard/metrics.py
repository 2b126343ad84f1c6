"""Topology-preservation recalls and compression-efficiency metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .compressor import EditLog, serialize_edit_log
from .grid import ScalarField
from .topology import FieldTopology, ReferenceTopology, compute_topology

__all__ = [
    "MetricsReport",
    "cp_recall",
    "eg_recall",
    "ct_recall",
    "compression_ratios",
    "edit_ratio",
    "edit_log_bytes",
    "build_report",
]

Topo = ScalarField | FieldTopology | ReferenceTopology


def _topo(x: Topo):
    return compute_topology(x) if isinstance(x, ScalarField) else x


def _recall(ref: set, cand: set) -> float:
    if not ref:
        return 1.0
    return len(ref & cand) / len(ref)


def cp_recall(f: Topo, g: Topo) -> float:
    """Fraction of f's critical points kept at the same vertex with the same type."""
    tf, tg = _topo(f), _topo(g)
    if tf.flags.shape != tg.flags.shape:
        raise ValueError("fields have different sizes")
    cps = np.flatnonzero(tf.flags)
    if cps.size == 0:
        return 1.0
    return float(np.count_nonzero(tg.flags[cps] == tf.flags[cps]) / cps.size)


def _eg_edges(t) -> set:
    return {("join", *e) for e in t.eg_join.edges} | {("split", *e) for e in t.eg_split.edges}


def _ct_arcs(t) -> set:
    return {("join", *a) for a in t.tree_join.arcs} | {("split", *a) for a in t.tree_split.arcs}


def eg_recall(f: Topo, g: Topo) -> float:
    """Preserved fraction of f's saddle-extremum edges, both polarities."""
    return _recall(_eg_edges(_topo(f)), _eg_edges(_topo(g)))


def ct_recall(f: Topo, g: Topo) -> float:
    """Preserved fraction of f's join and split tree arcs."""
    return _recall(_ct_arcs(_topo(f)), _ct_arcs(_topo(g)))


def compression_ratios(orig_bytes: int, blob_bytes: int, edit_bytes: int = 0) -> tuple[float, float]:
    """``(cr, ocr)``: original over compressed, and over compressed plus edits."""
    if orig_bytes <= 0 or blob_bytes <= 0 or edit_bytes < 0:
        raise ValueError("need orig_bytes > 0, blob_bytes > 0 and edit_bytes >= 0")
    return orig_bytes / blob_bytes, orig_bytes / (blob_bytes + edit_bytes)


def edit_log_bytes(log: EditLog, codec=None) -> int:
    """Bytes the edits add to the stream; a log with no entries is not shipped."""
    if not log.entries:
        return 0
    return len(serialize_edit_log(log, codec))


def edit_ratio(log: EditLog, field: ScalarField | int) -> float:
    n = field if isinstance(field, int) else field.size
    if n <= 0:
        raise ValueError("field has no vertices")
    return len(log.entries) / n


@dataclass
class MetricsReport:
    cp_recall: float
    eg_recall: float
    ct_recall: float
    cr: float | None = None
    ocr: float | None = None
    edit_ratio: float | None = None
    iterations: int | None = None
    theoretical_bound: int | None = None
    histogram: dict[str, int] = field(default_factory=dict)

    @property
    def preserved(self) -> bool:
        return self.cp_recall == 1.0 and self.eg_recall == 1.0 and self.ct_recall == 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def build_report(
    f: Topo,
    g: ScalarField,
    *,
    orig_bytes: int | None = None,
    blob_bytes: int | None = None,
    edits: EditLog | None = None,
    iterations: int | None = None,
    theoretical_bound: int | None = None,
    histogram: dict[str, int] | None = None,
) -> MetricsReport:
    tf, tg = _topo(f), compute_topology(g)
    rep = MetricsReport(
        cp_recall=cp_recall(tf, tg),
        eg_recall=eg_recall(tf, tg),
        ct_recall=ct_recall(tf, tg),
        iterations=iterations,
        theoretical_bound=theoretical_bound,
        histogram=dict(histogram or {}),
    )
    if edits is not None:
        rep.edit_ratio = edit_ratio(edits, g)
    if orig_bytes is not None and blob_bytes is not None:
        extra = 0 if edits is None else edit_log_bytes(edits)
        rep.cr, rep.ocr = compression_ratios(orig_bytes, blob_bytes, extra)
    return rep

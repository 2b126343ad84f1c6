"""Iterative detect-and-edit loop producing the corrected field and its edit log."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bound import BoundReport, theoretical_bound
from .compressor import BoundViolationError, EditLog, absolute_bound, lower_bound, max_abs_error
from .constraints import LocalDetector, Mode, Violations, detect, serial_context
from .grid import ScalarField
from .topology import ReferenceTopology, build_reference

__all__ = [
    "CorrectionConfig",
    "CorrectionResult",
    "EditState",
    "NonConvergenceError",
    "UnsupportedConfigError",
    "apply_bounded_edits",
    "correct",
]

log = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    """The loop stalled or overran the theoretical iteration bound."""


class UnsupportedConfigError(ValueError):
    pass


@dataclass
class CorrectionConfig:
    rel_eb: float | None = None
    abs_eb: float | None = None
    steps: int = 5
    mode: Mode = Mode.REFORMULATED
    max_iter_override: int | None = None
    check_bound: bool = True

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if (self.rel_eb is None) == (self.abs_eb is None):
            raise ValueError("give exactly one of rel_eb / abs_eb")

    def xi(self, f: ScalarField) -> float:
        if self.abs_eb is not None:
            return float(self.abs_eb)
        if f.span == 0:
            return 0.0
        return absolute_bound(f, self.rel_eb)


@dataclass
class CorrectionResult:
    g: ScalarField
    edits: EditLog
    iterations: int  # detector passes, including the final clean one
    violation_counts: list[int]
    theoretical_bound: int | None
    d_max: int | None
    xi_abs: float
    histogram: dict[str, int] = field(default_factory=dict)
    bound_report: BoundReport | None = None

    @property
    def edit_rounds(self) -> int:
        """Iterations that applied edits; this is what the bound constrains."""
        return self.iterations - 1


@dataclass
class EditState:
    """Per-vertex edit bookkeeping shared by the serial and distributed loops."""

    fhat: np.ndarray
    lower: np.ndarray
    delta: float
    steps: int
    g: np.ndarray
    counts: np.ndarray
    lossless: np.ndarray

    @classmethod
    def start(cls, f: np.ndarray, fhat: np.ndarray, xi: float, steps: int) -> "EditState":
        return cls(
            fhat=fhat,
            lower=lower_bound(f, xi),
            delta=xi / steps,
            steps=steps,
            g=fhat.copy(),
            counts=np.zeros(f.size, dtype=np.int64),
            lossless=np.zeros(f.size, dtype=bool),
        )

    def edit_log(self, xi: float) -> EditLog:
        return EditLog.from_arrays(xi, self.steps, self.counts, self.lossless, self.g)


def apply_bounded_edits(state: EditState, targets: np.ndarray) -> int:
    """One monotone step per target, or a clamp to ``f - xi`` once steps run out.

    ``targets`` must already be deduplicated.  Returns the number of edited
    vertices.
    """
    if targets.size == 0:
        return 0
    stuck = targets[state.lossless[targets]]
    if stuck.size:
        raise NonConvergenceError(
            f"{stuck.size} vertices already at their lossless lower bound still violate "
            f"constraints (first: {int(stuck[0])})"
        )
    c = state.counts[targets] + 1
    stepped = state.fhat[targets] - c * state.delta
    ok = (c <= state.steps) & (stepped >= state.lower[targets])
    t_ok = targets[ok]
    state.g[t_ok] = stepped[ok]
    state.counts[t_ok] = c[ok]
    t_clamp = targets[~ok]
    state.g[t_clamp] = state.lower[t_clamp]
    state.lossless[t_clamp] = True
    state.counts[t_clamp] = 0
    return int(targets.size)


def prepare(f: ScalarField, fhat: ScalarField, cfg: CorrectionConfig, ref: ReferenceTopology | None = None):
    """Shared prologue: absolute bound, input check, reference and iteration limit."""
    if f.dims != fhat.dims:
        raise ValueError(f"dims differ: {f.dims} vs {fhat.dims}")
    xi = cfg.xi(f)
    err = max_abs_error(f, fhat)
    if err > xi:
        raise BoundViolationError(f"max |f - fhat| = {err!r} exceeds bound {xi!r}")
    ref = ref or build_reference(f)
    report = theoretical_bound(ref, fhat, xi, cfg.steps) if cfg.check_bound else None
    limit = None if report is None else report.bound + (cfg.max_iter_override or 0)
    return xi, ref, report, limit


def finish(fhat, state, xi, iterations, counts, hist, report) -> CorrectionResult:
    return CorrectionResult(
        g=fhat.with_values(state.g),
        edits=state.edit_log(xi),
        iterations=iterations,
        violation_counts=counts,
        theoretical_bound=None if report is None else report.bound,
        d_max=None if report is None else report.d_max,
        xi_abs=xi,
        histogram=hist,
        bound_report=report,
    )


def correct(
    f: ScalarField,
    fhat: ScalarField,
    cfg: CorrectionConfig,
    ref: ReferenceTopology | None = None,
    on_iteration: Callable[[int, np.ndarray], None] | None = None,
) -> CorrectionResult:
    """Edit ``fhat`` until it satisfies every constraint relative to ``f``.

    ``on_iteration(i, g)`` is called with a read-only view of the working
    values before each detector pass.
    """
    xi, ref, report, limit = prepare(f, fhat, cfg, ref)
    state = EditState.start(f.values, fhat.values, xi, cfg.steps)
    local = LocalDetector(serial_context(ref), state.g)
    counts, hist = [], {}
    iterations = 0
    while True:
        iterations += 1
        if on_iteration is not None:
            view = state.g.view()
            view.flags.writeable = False
            on_iteration(iterations, view)
        found = detect(ref, state.g, cfg.mode, local=local)
        counts.append(len(found))
        accumulate(hist, found)
        if len(found) == 0:
            break
        if limit is not None and iterations > limit:
            raise NonConvergenceError(
                f"correction exceeded the theoretical bound of {limit} edit rounds"
            )
        targets = found.targets()
        apply_bounded_edits(state, targets)
        local.update(state.g, targets)
    log.debug("corrected in %d iterations, %d edited vertices", iterations, int((state.counts > 0).sum() + state.lossless.sum()))
    return finish(fhat, state, xi, iterations, counts, hist, report)


def accumulate(hist: dict[str, int], found: Violations) -> None:
    for k, v in found.histogram().items():
        hist[k] = hist.get(k, 0) + v

import numpy as np
import pytest

from topoguard.compressor import BoundViolationError, Lossless, Stepped, apply_edit_log
from topoguard.constraints import Mode, check_constraints
from topoguard.corrector import (
    CorrectionConfig,
    EditState,
    NonConvergenceError,
    apply_bounded_edits,
    correct,
)
from topoguard.grid import ScalarField
from topoguard.metrics import cp_recall, ct_recall, eg_recall
from topoguard.topology import build_reference


@pytest.mark.parametrize("mode", list(Mode))
@pytest.mark.parametrize("which", ["small_pair", "cube_pair"])
def test_correction_preserves_topology(request, which, mode):
    f, fh, _ = request.getfixturevalue(which)
    res = correct(f, fh, CorrectionConfig(rel_eb=1e-3, mode=mode))
    ref = build_reference(f)
    assert check_constraints(ref, res.g, mode) == []
    assert cp_recall(ref, res.g) == eg_recall(ref, res.g) == ct_recall(ref, res.g) == 1.0
    assert np.max(np.abs(f.values - res.g.values)) <= res.xi_abs
    assert res.edit_rounds <= res.theoretical_bound
    assert res.violation_counts[-1] == 0 and len(res.violation_counts) == res.iterations


def test_edit_log_reproduces_output(small_pair):
    f, fh, _ = small_pair
    res = correct(f, fh, CorrectionConfig(rel_eb=1e-3))
    assert len(res.edits) > 0
    assert apply_edit_log(fh, res.edits, original=f) == res.g
    changed = np.flatnonzero(res.g.values != fh.values)
    assert changed.tolist() == sorted(res.edits.entries)


def test_values_only_decrease(cube_pair):
    f, fh, _ = cube_pair
    seen = []
    correct(f, fh, CorrectionConfig(rel_eb=1e-3), on_iteration=lambda i, g: seen.append(g.copy()))
    xi = 1e-3 * f.span
    prev = fh.values
    for g in seen:
        assert np.all(g <= prev)
        assert np.all(g >= f.values - xi)
        prev = g


def test_callback_view_is_read_only(small_pair):
    f, fh, _ = small_pair

    def poke(i, g):
        with pytest.raises(ValueError):
            g[0] = 0.0

    correct(f, fh, CorrectionConfig(rel_eb=1e-3), on_iteration=poke)


def test_bounded_step_then_clamp():
    f = np.array([1.0, 2.0, 3.0])
    fh = f + 0.3
    st = EditState.start(f, fh, 0.5, 2)
    t = np.array([0, 2])
    for expect in (fh - 0.25, fh - 0.5):
        apply_bounded_edits(st, t)
        assert st.g[t].tolist() == expect[t].tolist()
    assert st.counts.tolist() == [2, 0, 2]
    # third edit on the same vertex: steps exhausted, clamp to f - xi
    apply_bounded_edits(st, np.array([0]))
    assert st.g[0] == 0.5 and st.lossless[0] and st.counts[0] == 0
    log = st.edit_log(0.5)
    assert log.entries == {0: Lossless(0.5), 2: Stepped(2)}
    with pytest.raises(NonConvergenceError):
        apply_bounded_edits(st, np.array([0]))


def test_step_below_floor_clamps_early():
    # fhat already near the floor: the first step would cross f - xi
    f = np.array([1.0])
    st = EditState.start(f, np.array([0.55]), 0.5, 2)
    apply_bounded_edits(st, np.array([0]))
    assert st.g[0] == 0.5 and st.lossless[0]


def test_bound_violation_rejected(small_pair):
    f, fh, _ = small_pair
    with pytest.raises(BoundViolationError):
        correct(f, fh, CorrectionConfig(rel_eb=1e-6))


def test_overrun_raises(small_pair):
    f, fh, _ = small_pair
    res = correct(f, fh, CorrectionConfig(rel_eb=1e-3))
    cfg = CorrectionConfig(rel_eb=1e-3, max_iter_override=-res.theoretical_bound)
    with pytest.raises(NonConvergenceError):
        correct(f, fh, cfg)


def test_constant_field():
    f = ScalarField((5, 5), np.full(25, 2.0))
    res = correct(f, f, CorrectionConfig(rel_eb=1e-3))
    assert res.xi_abs == 0 and res.iterations == 1 and len(res.edits) == 0


def test_config_validation():
    with pytest.raises(ValueError):
        CorrectionConfig()
    with pytest.raises(ValueError):
        CorrectionConfig(rel_eb=1e-3, abs_eb=1.0)
    with pytest.raises(ValueError):
        CorrectionConfig(rel_eb=1e-3, steps=0)
    with pytest.raises(ValueError):
        CorrectionConfig(rel_eb=1e-3, mode="sideways")


def test_no_bound_check(small_pair):
    f, fh, _ = small_pair
    res = correct(f, fh, CorrectionConfig(rel_eb=1e-3, check_bound=False))
    assert res.theoretical_bound is None and res.bound_report is None


def test_more_steps_edit_no_more_vertices(small_pair):
    # finer steps never need more distinct vertices than the one-shot clamp
    f, fh, _ = small_pair
    coarse = correct(f, fh, CorrectionConfig(rel_eb=1e-3, steps=1))
    fine = correct(f, fh, CorrectionConfig(rel_eb=1e-3, steps=10))
    for r in (coarse, fine):
        assert check_constraints(build_reference(f), r.g) == []
    assert fine.iterations >= 1 and coarse.iterations >= 1

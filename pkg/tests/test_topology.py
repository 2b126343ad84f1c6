import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from topoguard.grid import ScalarField, neighbor_table
from topoguard.synthetic import gaussian_mix, monotone
from topoguard.topology import (
    JOIN,
    MAX,
    MIN,
    SPLIT,
    Direction,
    ExtremumGraph,
    Polarity,
    TopologyMismatchError,
    brute_force_merge_tree,
    build_extremum_graph,
    build_reference,
    classify_critical_points,
    compute_topology,
    critical_flags,
    egp_merge_tree,
    steepest_terminus,
)


def _eg_oracle(values, dims, join):
    """Saddle-extremum pairs by walking steepest paths one vertex at a time."""
    values = np.asarray(values, dtype=float)
    key = lambda v: (values[v], v)
    flags = oracles.flags(values, dims)

    def walk(v):
        while True:
            closed = oracles.neighbors(dims, v) + [v]
            nxt = min(closed, key=key) if join else max(closed, key=key)
            if nxt == v:
                return v
            v = nxt

    edges = set()
    for s in np.flatnonzero(flags & (JOIN if join else SPLIT)):
        for u in oracles.neighbors(dims, int(s)):
            if (key(u) < key(s)) == join:
                edges.add((int(s), walk(u)))
    return edges


def test_monotone_has_only_corner_extrema():
    f = monotone((8, 8))
    cps = classify_critical_points(f)
    assert [(c.vertex, c.is_min, c.is_max) for c in cps] == [(0, True, False), (63, False, True)]
    assert not any(c.is_saddle for c in cps)


def test_single_bump():
    x = np.linspace(-1, 1, 9)
    f = ScalarField.from_array(-(x[:, None] ** 2 + x[None, :] ** 2))
    flags = critical_flags(f)
    assert flags[40] == MAX
    assert np.count_nonzero(flags & MAX) == 1
    # Euler characteristic of a disk: #min - #saddle + #max = 1
    n = lambda bit: np.count_nonzero(flags & bit)
    assert n(MIN) - n(JOIN | SPLIT) + n(MAX) == 1


def test_two_bumps_have_a_saddle():
    f = gaussian_mix((32, 32), k=4, seed=11)
    flags = critical_flags(f)
    assert np.count_nonzero(flags & MAX) >= 2
    assert np.count_nonzero(flags & SPLIT) >= 1


@pytest.mark.parametrize("dims", [(5, 6), (4, 4, 4), (1, 7), (3, 2, 5)])
@pytest.mark.parametrize("seed", range(4))
def test_flags_match_link_oracle(dims, seed):
    rng = np.random.default_rng(seed)
    vals = rng.integers(0, 4, size=int(np.prod(dims))).astype(float)
    f = ScalarField(dims, vals)
    assert critical_flags(f).tolist() == oracles.flags(vals, dims).tolist()


@pytest.mark.parametrize("dims", [(6, 7), (4, 5, 3)])
@pytest.mark.parametrize("seed", range(3))
def test_extremum_graph_matches_path_oracle(dims, seed):
    rng = np.random.default_rng(100 + seed)
    vals = rng.integers(0, 5, size=int(np.prod(dims))).astype(float)
    f = ScalarField(dims, vals)
    flags = critical_flags(f)
    for pol, join in ((Polarity.JOIN, True), (Polarity.SPLIT, False)):
        eg = build_extremum_graph(f, flags, pol)
        assert set(eg.edges) == _eg_oracle(vals, dims, join)


def test_steepest_terminus():
    f = monotone((5, 5))
    assert steepest_terminus(f, 12, Direction.ASCENT) == 24
    assert steepest_terminus(f, 12, Direction.DESCENT) == 0
    assert steepest_terminus(f, 24, Direction.ASCENT) == 24


def test_cross_check_brute_force_and_oracle():
    f = gaussian_mix((10, 9), k=4, seed=5)
    for pol, join in ((Polarity.JOIN, True), (Polarity.SPLIT, False)):
        assert set(brute_force_merge_tree(f, pol).arcs) == oracles.merge_tree_arcs(f.values, f.dims, join)


fields = st.tuples(
    st.lists(st.integers(2, 8), min_size=2, max_size=3).filter(lambda d: np.prod(d) <= 512),
    st.integers(0, 2**32 - 1),
    st.integers(2, 50),
)


@settings(max_examples=80, deadline=None)
@given(fields)
def test_egp_equals_brute_force(spec):
    dims, seed, levels = spec
    rng = np.random.default_rng(seed)
    f = ScalarField(tuple(dims), rng.integers(0, levels, size=int(np.prod(dims))).astype(float))
    flags = critical_flags(f)
    for pol in Polarity:
        eg = build_extremum_graph(f, flags, pol)
        egp = egp_merge_tree(eg, f, flags)
        bf = brute_force_merge_tree(f, pol)
        assert egp.arcs == bf.arcs
        assert egp.root_arc == bf.root_arc


def test_merge_tree_arc_count():
    f = gaussian_mix((24, 24), k=6, seed=9)
    t = compute_topology(f)
    n_min = np.count_nonzero(t.flags & MIN)
    n_max = np.count_nonzero(t.flags & MAX)
    # one arc per extremum: all but one end at a saddle, one at the root
    assert len(t.tree_join.arcs) == n_min
    assert len(t.tree_split.arcs) == n_max


def test_egp_rejects_foreign_graph():
    f = gaussian_mix((10, 10), k=3, seed=1)
    bogus = ExtremumGraph(Polarity.JOIN, frozenset({(0, 99)}))
    with pytest.raises(TopologyMismatchError):
        egp_merge_tree(bogus, f)


def test_reference_is_frozen_and_consistent():
    f = gaussian_mix((16, 16), k=4, seed=2)
    ref = build_reference(f)
    with pytest.raises(ValueError):
        ref.rank[0] = 0
    assert np.all(np.diff(f.values[ref.cps_sorted]) >= 0)
    assert set(ref.saddles_sorted.tolist()) <= set(ref.cps_sorted.tolist())
    t = compute_topology(f)
    assert t.tree_join == ref.merge_tree("join") and t.eg_split == ref.extremum_graph("split")
    # the stored steepest neighbors are the closed-neighborhood SoS extremes
    table = neighbor_table(f.dims)
    for v in (0, 17, 100, 255):
        closed = [v] + [u for u in table[v] if u >= 0]
        assert ref.n_max[v] == max(closed, key=lambda u: (f.values[u], u))
        assert ref.n_min[v] == min(closed, key=lambda u: (f.values[u], u))

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from topoguard.grid import (
    BadMagicError,
    DtypeMismatchError,
    FieldFormatError,
    InvalidVertexError,
    ScalarField,
    SosKey,
    TruncatedPayloadError,
    decode_field,
    encode_field,
    link_edges,
    load_field,
    neighbor_table,
    neighbors,
    save_field,
    sos_less,
    sos_rank,
    stencil_offsets,
)


def test_interior_degree():
    assert len(stencil_offsets(2)) == 6
    assert len(stencil_offsets(3)) == 14
    f2 = ScalarField((5, 5), np.zeros(25))
    assert len(neighbors(f2, 12)) == 6
    f3 = ScalarField((4, 4, 4), np.zeros(64))
    assert len(neighbors(f3, 21)) == 14


def test_corner_clipping():
    f = ScalarField((3, 3), np.zeros(9))
    # (0, 0) keeps (0, 1), (1, 0), (1, 1)
    assert neighbors(f, 0) == [1, 3, 4]
    # (0, 2): (0, 1) and (1, 2) only, the diagonal (1, 3) is off-grid
    assert neighbors(f, 2) == [1, 5]


@pytest.mark.parametrize("dims", [(4, 5), (3, 4, 5), (1, 6), (2, 2, 2)])
def test_neighbors_match_coordinate_oracle(dims):
    f = ScalarField(dims, np.zeros(int(np.prod(dims))))
    for v in range(f.size):
        assert neighbors(f, v) == oracles.neighbors(dims, v)


@pytest.mark.parametrize("dims", [(6, 7), (4, 5, 3)])
def test_neighbor_relation_symmetric(dims):
    table = neighbor_table(dims)
    edges = {(v, u) for v in range(table.shape[0]) for u in table[v] if u >= 0}
    assert all((u, v) in edges for v, u in edges)


def test_link_pairs_are_adjacent_slots():
    dims = (5, 5, 5)
    table = neighbor_table(dims)
    v = 62  # interior
    pairs = link_edges(dims)
    nb = set(table[v].tolist())
    for a, b in pairs:
        assert table[v, b] in set(neighbor_table(dims)[table[v, a]].tolist())
    # 3D Freudenthal link of an interior vertex: 14 vertices, 36 edges
    assert len(pairs) == 36 and len(nb) == 14


def test_invalid_vertex():
    f = ScalarField((3, 3), np.zeros(9))
    with pytest.raises(InvalidVertexError):
        neighbors(f, 9)
    with pytest.raises(InvalidVertexError):
        neighbors(f, -1)


def test_sos_tie_break():
    assert sos_less(SosKey(1.0, 2), SosKey(1.0, 3))
    assert not sos_less(SosKey(1.0, 3), SosKey(1.0, 2))
    assert sos_less(SosKey(0.5, 9), SosKey(1.0, 0))
    assert sos_rank(np.array([2.0, 1.0, 2.0, 1.0])).tolist() == [2, 0, 3, 1]


@given(st.lists(st.integers(0, 4), min_size=1, max_size=40))
def test_sos_rank_is_lexicographic(vals):
    vals = np.array(vals, dtype=float)
    rank = sos_rank(vals)
    expect = sorted(range(vals.size), key=lambda i: (vals[i], i))
    assert [int(i) for i in np.argsort(rank)] == expect


def test_field_rejects_bad_input():
    with pytest.raises(ValueError):
        ScalarField((4,), np.zeros(4))
    with pytest.raises(ValueError):
        ScalarField((2, 2), np.zeros(5))
    with pytest.raises(ValueError):
        ScalarField((2, 2), [0, 1, np.nan, 2])


def test_field_values_read_only():
    f = ScalarField((2, 2), np.arange(4.0))
    with pytest.raises(ValueError):
        f.values[0] = 7.0
    assert f.value_range == (0.0, 3.0) and f.span == 3.0


@pytest.mark.parametrize("dtype", ["f4", "f8"])
def test_excf_round_trip(tmp_path, dtype):
    rng = np.random.default_rng(1)
    arr = rng.normal(size=(5, 6, 7)).astype(np.float32 if dtype == "f4" else np.float64)
    f = ScalarField.from_array(arr, dtype)
    path = tmp_path / "f.excf"
    save_field(f, path)
    g = load_field(path)
    assert g == f and g.dtype == dtype and g.dims == (5, 6, 7)
    raw = path.read_bytes()
    assert raw[:4] == b"EXCF"
    assert struct.unpack_from("<BBBB", raw, 4) == (1, 0 if dtype == "f4" else 1, 3, 0)
    assert struct.unpack_from("<3Q", raw, 8) == (5, 6, 7)


def _header(code=1, ndim=2, dims=(2, 2)):
    return b"EXCF" + struct.pack("<BBBB", 1, code, ndim, 0) + struct.pack(f"<{len(dims)}Q", *dims)


def test_excf_errors_are_distinct():
    good = _header() + np.zeros(4).tobytes()
    assert decode_field(good).dims == (2, 2)
    with pytest.raises(BadMagicError):
        decode_field(b"XXXX" + good[4:])
    with pytest.raises(DtypeMismatchError):
        decode_field(_header(code=7) + np.zeros(4).tobytes())
    with pytest.raises(DtypeMismatchError):
        decode_field(_header(ndim=4, dims=(1, 1, 1, 1)) + np.zeros(1).tobytes())
    with pytest.raises(TruncatedPayloadError):
        decode_field(good[:-3])
    with pytest.raises(TruncatedPayloadError):
        decode_field(good[:12])
    for cls in (BadMagicError, DtypeMismatchError, TruncatedPayloadError):
        assert issubclass(cls, FieldFormatError)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.integers(1, 5), min_size=2, max_size=3),
    st.sampled_from(["f4", "f8"]),
    st.integers(0, 2**31),
)
def test_excf_fuzzed_round_trip(dims, dtype, seed):
    rng = np.random.default_rng(seed)
    arr = rng.normal(scale=1e3, size=dims)
    if dtype == "f4":
        arr = arr.astype(np.float32)
    f = ScalarField.from_array(arr, dtype)
    assert decode_field(encode_field(f)) == f

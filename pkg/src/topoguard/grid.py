"""Regular-grid scalar fields, Freudenthal connectivity and the SoS vertex order.

Every comparison between two vertex values in this package goes through the
Simulation-of-Simplicity order: ``(value, index)`` compared lexicographically,
so equal values are resolved by treating the larger linear index as larger.
"""

from __future__ import annotations

import functools
import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "ScalarField",
    "SosKey",
    "FieldFormatError",
    "BadMagicError",
    "DtypeMismatchError",
    "TruncatedPayloadError",
    "InvalidVertexError",
    "neighbors",
    "neighbor_table",
    "link_edges",
    "stencil_offsets",
    "sos_less",
    "sos_rank",
    "sos_greater_arrays",
    "load_field",
    "save_field",
    "encode_field",
    "decode_field",
]

FIELD_MAGIC = b"EXCF"
FIELD_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {"f4": 0, "f8": 1}


class FieldFormatError(ValueError):
    """Base class for malformed EXCF files."""


class BadMagicError(FieldFormatError):
    pass


class DtypeMismatchError(FieldFormatError):
    pass


class TruncatedPayloadError(FieldFormatError):
    pass


class InvalidVertexError(IndexError):
    pass


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Immutable scalar field on a 2D or 3D regular grid.

    ``values`` is kept flat in row-major order (last axis fastest) and always
    as float64; ``dtype`` only records the on-disk precision.
    """

    dims: tuple[int, ...]
    values: np.ndarray
    dtype: str = "f8"
    _range: tuple[float, float] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (2, 3) or any(d <= 0 for d in dims):
            raise ValueError(f"dims must be 2 or 3 positive integers, got {self.dims}")
        if self.dtype not in _DTYPE_CODES:
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        vals = np.array(self.values, dtype=np.float64).reshape(-1)
        if vals.size != int(np.prod(dims)):
            raise ValueError(f"{vals.size} values do not fill a grid of {dims}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        vals.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "_range", (float(vals.min()), float(vals.max())))

    @classmethod
    def from_array(cls, array, dtype: str = "f8") -> "ScalarField":
        array = np.asarray(array)
        return cls(array.shape, array.reshape(-1), dtype)

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def value_range(self) -> tuple[float, float]:
        return self._range

    @property
    def span(self) -> float:
        lo, hi = self._range
        return hi - lo

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.dims)

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.dims, values, self.dtype)

    def key(self, v: int) -> "SosKey":
        return SosKey(float(self.values[v]), int(v))

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(
            self.values.view(np.uint64), other.values.view(np.uint64)
        )

    __hash__ = None


class SosKey(NamedTuple):
    value: float
    idx: int


def sos_less(a: SosKey, b: SosKey) -> bool:
    return a.value < b.value or (a.value == b.value and a.idx < b.idx)


def sos_rank(values: np.ndarray) -> np.ndarray:
    """Position of every vertex in the SoS ascending order."""
    order = np.argsort(values, kind="stable")
    rank = np.empty(values.size, dtype=np.int64)
    rank[order] = np.arange(values.size, dtype=np.int64)
    return rank


def sos_greater_arrays(va, ia, vb, ib):
    """Elementwise ``(va, ia) > (vb, ib)`` under the SoS order."""
    return (va > vb) | ((va == vb) & (ia > ib))


def stencil_offsets(ndim: int) -> list[tuple[int, ...]]:
    """Freudenthal link offsets: nonzero vectors of {0,1}^d and {0,-1}^d."""
    pos = [o for o in itertools.product((0, 1), repeat=ndim) if any(o)]
    return pos + [tuple(-c for c in o) for o in pos]


@functools.lru_cache(maxsize=32)
def _stencil(dims: tuple[int, ...]):
    strides = np.cumprod((1,) + dims[::-1][:-1])[::-1]
    offsets = stencil_offsets(len(dims))
    offsets.sort(key=lambda o: (int(np.dot(o, strides)), o))
    n = int(np.prod(dims))
    coords = np.indices(dims).reshape(len(dims), -1)
    ids = np.arange(n, dtype=np.int64)
    table = np.full((n, len(offsets)), -1, dtype=np.int64)
    for k, off in enumerate(offsets):
        ok = np.ones(n, dtype=bool)
        for ax, o in enumerate(off):
            c = coords[ax] + o
            ok &= (c >= 0) & (c < dims[ax])
        table[ok, k] = ids[ok] + int(np.dot(off, strides))
    table.flags.writeable = False
    offset_set = set(offsets)
    pairs = []
    for a, b in itertools.combinations(range(len(offsets)), 2):
        diff = tuple(y - x for x, y in zip(offsets[a], offsets[b]))
        if diff in offset_set:
            pairs.append((a, b))
    return table, tuple(offsets), np.array(pairs, dtype=np.int64).reshape(-1, 2)


def neighbor_table(dims: Sequence[int]) -> np.ndarray:
    """``(V, K)`` array of neighbor ids per stencil slot, ``-1`` where clipped.

    Slots are ordered by linear offset, so the valid entries of each row are
    ascending.
    """
    return _stencil(tuple(int(d) for d in dims))[0]


def link_edges(dims: Sequence[int]) -> np.ndarray:
    """Slot pairs ``(a, b)`` whose neighbors are adjacent to each other."""
    return _stencil(tuple(int(d) for d in dims))[2]


def neighbors(field: ScalarField, v: int) -> list[int]:
    if not 0 <= v < field.size:
        raise InvalidVertexError(f"vertex {v} outside grid of {field.size} vertices")
    row = neighbor_table(field.dims)[v]
    return [int(u) for u in row if u >= 0]


def encode_field(field: ScalarField) -> bytes:
    code = _DTYPE_CODES[field.dtype]
    header = FIELD_MAGIC + struct.pack("<BBBB", FIELD_VERSION, code, len(field.dims), 0)
    header += struct.pack(f"<{len(field.dims)}Q", *field.dims)
    return header + field.values.astype(_DTYPES[code]).tobytes()


def save_field(field: ScalarField, path) -> None:
    Path(path).write_bytes(encode_field(field))


def load_field(path) -> ScalarField:
    return decode_field(Path(path).read_bytes())


def decode_field(data: bytes) -> ScalarField:
    if len(data) < 8 or data[:4] != FIELD_MAGIC:
        raise BadMagicError("not an EXCF field file")
    version, code, ndim, _ = struct.unpack_from("<BBBB", data, 4)
    if version != FIELD_VERSION:
        raise FieldFormatError(f"unsupported EXCF version {version}")
    if code not in _DTYPES:
        raise DtypeMismatchError(f"unknown dtype code {code}")
    if ndim not in (2, 3):
        raise DtypeMismatchError(f"EXCF ndim must be 2 or 3, got {ndim}")
    if len(data) < 8 + 8 * ndim:
        raise TruncatedPayloadError("header ends before dims")
    dims = struct.unpack_from(f"<{ndim}Q", data, 8)
    dt = _DTYPES[code]
    start = 8 + 8 * ndim
    expected = int(np.prod(dims)) * dt.itemsize
    if len(data) - start != expected:
        raise TruncatedPayloadError(
            f"payload has {len(data) - start} bytes, dims {dims} need {expected}"
        )
    values = np.frombuffer(data, dtype=dt, offset=start)
    return ScalarField(dims, values, "f4" if code == 0 else "f8")

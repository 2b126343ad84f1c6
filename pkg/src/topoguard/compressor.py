"""Error-bounded base compressor and the lossless edit log.

The compressor is a previous-value (1D Lorenzo) predictor in row-major order
with uniform quantization of the residual into bins of width ``2 * xi``.
Residuals whose quantized reconstruction would miss the bound (or whose
code overflows) are stored verbatim.  It is a stand-in for SZ3/ZFP: only the
pointwise guarantee matters downstream.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .grid import ScalarField

__all__ = [
    "CompressedBlob",
    "EditLog",
    "Stepped",
    "Lossless",
    "BlobFormatError",
    "EditLogFormatError",
    "EditLogCorruptionError",
    "BoundViolationError",
    "LosslessCodec",
    "IdentityCodec",
    "ZlibCodec",
    "absolute_bound",
    "compress",
    "decompress",
    "ingest",
    "max_abs_error",
    "apply_edit_log",
    "lower_bound",
    "serialize_edit_log",
    "deserialize_edit_log",
]

BLOB_MAGIC = b"EXCZ"
EDIT_MAGIC = b"EXCE"
PREVIOUS_VALUE = 1
_RADIUS = 1 << 30


class BlobFormatError(ValueError):
    pass


class EditLogFormatError(ValueError):
    pass


class EditLogCorruptionError(ValueError):
    pass


class BoundViolationError(ValueError):
    pass


def absolute_bound(field: ScalarField, rel: float) -> float:
    if not 0 < rel <= 1:
        raise ValueError(f"relative error bound must be in (0, 1], got {rel}")
    return rel * field.span


def max_abs_error(a: ScalarField, b: ScalarField) -> float:
    if a.dims != b.dims:
        raise ValueError(f"dims differ: {a.dims} vs {b.dims}")
    return float(np.max(np.abs(a.values - b.values))) if a.size else 0.0


@dataclass(frozen=True, eq=False)
class CompressedBlob:
    xi_abs: float
    dims: tuple[int, ...]
    dtype: str
    predictor: int
    codes: np.ndarray  # int32 quantization codes, 0 at escapes
    escape_idx: np.ndarray  # uint64
    escape_val: np.ndarray  # float64

    def to_bytes(self) -> bytes:
        head = BLOB_MAGIC + struct.pack(
            "<BBBB", 1, 0 if self.dtype == "f4" else 1, len(self.dims), self.predictor
        )
        head += struct.pack("<d", self.xi_abs)
        head += struct.pack(f"<{len(self.dims)}Q", *self.dims)
        codes = zlib.compress(self.codes.astype("<i4").tobytes(), 6)
        esc = zlib.compress(
            self.escape_idx.astype("<u8").tobytes() + self.escape_val.astype("<f8").tobytes(), 6
        )
        head += struct.pack("<QQQ", len(codes), len(esc), self.escape_idx.size)
        return head + codes + esc

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedBlob":
        if data[:4] != BLOB_MAGIC:
            raise BlobFormatError("not an EXCZ blob")
        try:
            version, code, ndim, predictor = struct.unpack_from("<BBBB", data, 4)
            if version != 1 or code not in (0, 1) or ndim not in (2, 3):
                raise BlobFormatError("unsupported EXCZ header")
            (xi,) = struct.unpack_from("<d", data, 8)
            dims = struct.unpack_from(f"<{ndim}Q", data, 16)
            pos = 16 + 8 * ndim
            n_codes, n_esc, count = struct.unpack_from("<QQQ", data, pos)
            pos += 24
            if len(data) != pos + n_codes + n_esc:
                raise BlobFormatError("EXCZ stream lengths do not match the payload")
            codes = np.frombuffer(zlib.decompress(data[pos : pos + n_codes]), dtype="<i4")
            esc = zlib.decompress(data[pos + n_codes :])
        except (struct.error, zlib.error) as exc:
            raise BlobFormatError(f"corrupt EXCZ stream: {exc}") from exc
        if codes.size != int(np.prod(dims)) or len(esc) != 16 * count:
            raise BlobFormatError("EXCZ streams do not match the header")
        return cls(
            xi,
            tuple(dims),
            "f4" if code == 0 else "f8",
            predictor,
            codes.astype(np.int32),
            np.frombuffer(esc[: 8 * count], dtype="<u8").astype(np.uint64),
            np.frombuffer(esc[8 * count :], dtype="<f8").astype(np.float64),
        )

    @property
    def nbytes(self) -> int:
        return len(self.to_bytes())


def compress(field: ScalarField, rel_eb: float | None = None, abs_eb: float | None = None) -> CompressedBlob:
    """Quantize ``field`` with a pointwise absolute bound.

    Exactly one of ``rel_eb`` (fraction of the value range) or ``abs_eb``
    must be given.  A zero bound (e.g. a constant field) stores every value
    verbatim.
    """
    if (rel_eb is None) == (abs_eb is None):
        raise ValueError("give exactly one of rel_eb / abs_eb")
    if not np.all(np.isfinite(field.values)):
        raise ValueError("field contains non-finite values")
    xi = absolute_bound(field, rel_eb) if rel_eb is not None else float(abs_eb)
    if xi < 0 or not np.isfinite(xi):
        raise ValueError(f"invalid absolute bound {xi}")
    vals = field.values.tolist()
    codes = [0] * len(vals)
    esc_idx, esc_val = [], []
    if xi == 0:
        esc_idx = list(range(len(vals)))
        esc_val = vals
    else:
        width = 2.0 * xi
        pred = 0.0
        for i, x in enumerate(vals):
            q = round((x - pred) / width)
            if -_RADIUS < q < _RADIUS:
                r = pred + q * width
                if abs(x - r) <= xi:
                    codes[i] = q
                    pred = r
                    continue
            esc_idx.append(i)
            esc_val.append(x)
            pred = x
    return CompressedBlob(
        xi,
        field.dims,
        field.dtype,
        PREVIOUS_VALUE,
        np.asarray(codes, dtype=np.int32),
        np.asarray(esc_idx, dtype=np.uint64),
        np.asarray(esc_val, dtype=np.float64),
    )


def decompress(blob: CompressedBlob) -> ScalarField:
    if blob.predictor != PREVIOUS_VALUE:
        raise BlobFormatError(f"unknown predictor id {blob.predictor}")
    n = int(np.prod(blob.dims))
    if blob.codes.size != n:
        raise BlobFormatError("code stream length does not match dims")
    escapes = dict(zip(blob.escape_idx.tolist(), blob.escape_val.tolist()))
    width = 2.0 * blob.xi_abs
    out = [0.0] * n
    pred = 0.0
    for i, q in enumerate(blob.codes.tolist()):
        if i in escapes:
            pred = escapes[i]
        else:
            pred = pred + q * width
        out[i] = pred
    # reconstructions are float64 sums; narrowing to f4 could break the bound
    return ScalarField(blob.dims, np.asarray(out), "f8")


def ingest(original: ScalarField, decompressed: ScalarField, abs_eb: float) -> float:
    """Accept an externally decompressed field if it honours ``abs_eb``.

    Returns the actual maximum absolute error, which callers may use as the
    effective bound.
    """
    if original.dims != decompressed.dims:
        raise ValueError(f"dims differ: {original.dims} vs {decompressed.dims}")
    err = max_abs_error(original, decompressed)
    if err > abs_eb:
        raise BoundViolationError(f"max |f - fhat| = {err!r} exceeds bound {abs_eb!r}")
    return err


@dataclass(frozen=True)
class Stepped:
    count: int


@dataclass(frozen=True)
class Lossless:
    value: float


@dataclass
class EditLog:
    """Accumulated edits: one entry per edited vertex."""

    xi_abs: float
    steps: int
    entries: dict[int, Stepped | Lossless] = field(default_factory=dict)

    @property
    def delta(self) -> float:
        return self.xi_abs / self.steps

    def __len__(self):
        return len(self.entries)

    @classmethod
    def from_arrays(cls, xi_abs, steps, counts, lossless_mask, values) -> "EditLog":
        entries: dict[int, Stepped | Lossless] = {}
        for v in np.flatnonzero(counts > 0).tolist():
            entries[v] = Stepped(int(counts[v]))
        for v in np.flatnonzero(lossless_mask).tolist():
            entries[v] = Lossless(float(values[v]))
        return cls(float(xi_abs), int(steps), dict(sorted(entries.items())))

    def __eq__(self, other):
        if not isinstance(other, EditLog):
            return NotImplemented
        if self.steps != other.steps or _bits(self.xi_abs) != _bits(other.xi_abs):
            return False
        if self.entries.keys() != other.entries.keys():
            return False
        for v, e in self.entries.items():
            o = other.entries[v]
            if type(e) is not type(o):
                return False
            if isinstance(e, Stepped) and e.count != o.count:
                return False
            if isinstance(e, Lossless) and _bits(e.value) != _bits(o.value):
                return False
        return True


def _bits(x: float) -> bytes:
    return struct.pack("<d", x)


def lower_bound(f: np.ndarray, xi: float) -> np.ndarray:
    """Per-vertex floor ``f - xi``, nudged up so ``f - floor <= xi`` holds in floating point."""
    f = np.asarray(f, dtype=np.float64)
    low = f - xi
    bad = f - low > xi
    while bad.any():
        low[bad] = np.nextafter(low[bad], np.inf)
        bad = f - low > xi
    return low


def stepped_value(fhat_v: float, count: int, delta: float) -> float:
    return fhat_v - count * delta


def apply_edit_log(fhat: ScalarField, log: EditLog, original: ScalarField | None = None) -> ScalarField:
    """Reconstruct the corrected field from ``fhat`` and an edit log.

    With ``original`` given, stepped entries that fall below the lower bound
    and lossless entries not equal to it are reported as corruption.
    """
    g = fhat.values.copy()
    delta = log.delta
    n = g.size
    floor = None if original is None else lower_bound(original.values, log.xi_abs)
    for v, e in log.entries.items():
        if not 0 <= v < n:
            raise EditLogCorruptionError(f"edit targets vertex {v} outside the field")
        if isinstance(e, Stepped):
            if not 1 <= e.count <= log.steps:
                raise EditLogCorruptionError(f"step count {e.count} outside 1..{log.steps}")
            g[v] = stepped_value(g[v], e.count, delta)
            if floor is not None and g[v] < floor[v]:
                raise EditLogCorruptionError(f"vertex {v} stepped below its lower bound")
        else:
            if floor is not None and e.value != floor[v]:
                raise EditLogCorruptionError(f"lossless value of vertex {v} is not f - xi")
            g[v] = e.value
    return fhat.with_values(g)


class LosslessCodec(Protocol):
    codec_id: int

    def encode(self, data: bytes) -> bytes: ...

    def decode(self, data: bytes) -> bytes: ...


class IdentityCodec:
    codec_id = 0

    def encode(self, data: bytes) -> bytes:
        return data

    def decode(self, data: bytes) -> bytes:
        return data


class ZlibCodec:
    codec_id = 1

    def __init__(self, level: int = 9):
        self.level = level

    def encode(self, data: bytes) -> bytes:
        return zlib.compress(data, self.level)

    def decode(self, data: bytes) -> bytes:
        try:
            return zlib.decompress(data)
        except zlib.error as exc:
            raise EditLogFormatError(f"corrupt edit-log body: {exc}") from exc


_CODECS = {0: IdentityCodec(), 1: ZlibCodec()}


def _put_varint(out: bytearray, x: int) -> None:
    while x >= 0x80:
        out.append((x & 0x7F) | 0x80)
        x >>= 7
    out.append(x)


def _get_varint(buf: bytes, pos: int) -> tuple[int, int]:
    x = shift = 0
    while True:
        if pos >= len(buf):
            raise EditLogFormatError("truncated varint")
        b = buf[pos]
        pos += 1
        x |= (b & 0x7F) << shift
        if b < 0x80:
            return x, pos
        shift += 7
        if shift > 63:
            raise EditLogFormatError("varint too long")


def serialize_edit_log(log: EditLog, codec: LosslessCodec | None = None) -> bytes:
    """EXCE bytes: header, then codec(delta-varint entries).

    Each entry is ``varint(vertex - previous_vertex)`` followed by
    ``varint(count)`` for stepped edits, or ``varint(0)`` and the little-endian
    float64 value for lossless ones.
    """
    codec = codec or _CODECS[1]
    body = bytearray()
    prev = 0
    for v in sorted(log.entries):
        e = log.entries[v]
        _put_varint(body, v - prev)
        prev = v
        if isinstance(e, Stepped):
            _put_varint(body, e.count)
        else:
            _put_varint(body, 0)
            body += struct.pack("<d", e.value)
    head = EDIT_MAGIC + struct.pack("<BB", 1, codec.codec_id)
    head += struct.pack("<dIQ", log.xi_abs, log.steps, len(log.entries))
    return head + codec.encode(bytes(body))


def deserialize_edit_log(data: bytes) -> EditLog:
    if len(data) < 26 or data[:4] != EDIT_MAGIC:
        raise EditLogFormatError("not an EXCE edit log")
    version, codec_id = struct.unpack_from("<BB", data, 4)
    if version != 1 or codec_id not in _CODECS:
        raise EditLogFormatError("unsupported EXCE header")
    xi, steps, count = struct.unpack_from("<dIQ", data, 6)
    if steps < 1:
        raise EditLogFormatError("step count must be positive")
    body = _CODECS[codec_id].decode(data[26:])
    entries: dict[int, Stepped | Lossless] = {}
    pos = v = 0
    for _ in range(count):
        d, pos = _get_varint(body, pos)
        v += d
        if entries and d == 0:
            raise EditLogFormatError("duplicate vertex in edit log")
        tag, pos = _get_varint(body, pos)
        if tag == 0:
            if pos + 8 > len(body):
                raise EditLogFormatError("truncated lossless value")
            entries[v] = Lossless(struct.unpack_from("<d", body, pos)[0])
            pos += 8
        else:
            if tag > steps:
                raise EditLogFormatError(f"step count {tag} exceeds {steps}")
            entries[v] = Stepped(tag)
    if pos != len(body):
        raise EditLogFormatError("trailing bytes after edit-log entries")
    return EditLog(xi, steps, entries)

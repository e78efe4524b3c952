"""Bit-exact ``.gstb`` encoding of one compressed weight.

Layout (little-endian)::

    offset  size  field
    0       4     magic b"GSTB"
    4       2     version (uint16, currently 1)
    6       4     rows (uint32)
    10      4     cols (uint32)
    14      1     pattern kind code (0 dense, 1 circulant, 2 b4-friendly-b2, 3 b2-friendly-b4)
    15      1     block size
    16      ...   position bitmap, one bit per position in row-major order,
                  most significant bit first, zero-padded to a whole byte
    ...     2*n   float16 value per alive group, ascending group id

Only the bitmap bits and the value records count as payload; the header and
the padding bits are excluded from the storage accounting.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grouping import KINDS, CompressedTensor, StructureError, build_pattern

MAGIC = b"GSTB"
VERSION = 1
HEADER = struct.Struct("<4sHIIBB")
KIND_CODES = {kind: code for code, kind in enumerate(KINDS)}


class CodecError(ValueError):
    def __init__(self, message: str, offset: int, bit: int | None = None):
        where = f"byte {offset}" if bit is None else f"byte {offset}, bit {bit}"
        super().__init__(f"{message} (at {where})")
        self.offset = offset
        self.bit = bit


@dataclass(frozen=True)
class BitmapBlob:
    data: bytes

    @property
    def rows(self) -> int:
        return HEADER.unpack_from(self.data)[2]

    @property
    def cols(self) -> int:
        return HEADER.unpack_from(self.data)[3]

    @property
    def bitmap_bytes(self) -> int:
        return (self.rows * self.cols + 7) // 8

    @property
    def value_count(self) -> int:
        return (len(self.data) - HEADER.size - self.bitmap_bytes) // 2

    @property
    def payload_bits(self) -> int:
        return self.rows * self.cols + 16 * self.value_count

    def save(self, path) -> None:
        Path(path).write_bytes(self.data)

    @classmethod
    def load(cls, path) -> "BitmapBlob":
        return cls(Path(path).read_bytes())


def encode_bitmap(ct: CompressedTensor) -> BitmapBlob:
    p = ct.pattern
    header = HEADER.pack(MAGIC, VERSION, p.rows, p.cols, KIND_CODES[p.kind], p.block)
    bits = np.packbits(ct.position_mask().ravel().astype(np.uint8))
    values = ct.values[ct.mask].astype("<f2")
    return BitmapBlob(header + bits.tobytes() + values.tobytes())


def decode_bitmap(blob: BitmapBlob | bytes) -> CompressedTensor:
    data = blob.data if isinstance(blob, BitmapBlob) else bytes(blob)
    if len(data) < HEADER.size:
        raise CodecError(f"truncated header: {len(data)} of {HEADER.size} bytes", len(data))
    magic, version, rows, cols, code, block = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CodecError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise CodecError(f"unsupported version {version}", 4)
    if code >= len(KINDS):
        raise CodecError(f"unknown pattern kind code {code}", 14)
    try:
        pattern = build_pattern(KINDS[code], rows, cols, block)
    except StructureError as exc:
        raise CodecError(f"invalid pattern descriptor: {exc}", 6) from exc

    n = rows * cols
    nbytes = (n + 7) // 8
    end_bitmap = HEADER.size + nbytes
    if len(data) < end_bitmap:
        raise CodecError(f"truncated bitmap: need {nbytes} bytes", len(data))
    bits = np.unpackbits(np.frombuffer(data, np.uint8, nbytes, HEADER.size))
    if bits[n:].any():
        first = n + int(np.flatnonzero(bits[n:])[0])
        raise CodecError("non-zero padding bit", HEADER.size + first // 8, first % 8)
    pos_bits = bits[:n].astype(bool)

    flat_groups = pattern.group_of.ravel()
    lead = np.zeros(pattern.group_count, dtype=np.int64)
    lead[flat_groups[::-1]] = np.arange(n)[::-1]  # first member of each group
    mask = pos_bits[lead]
    bad = np.flatnonzero(pos_bits != mask[flat_groups])
    if bad.size:
        first = int(bad[0])
        raise CodecError(
            f"bitmap disagrees within group {int(flat_groups[first])}",
            HEADER.size + first // 8,
            first % 8,
        )

    alive = int(mask.sum())
    expected = end_bitmap + 2 * alive
    if len(data) != expected:
        raise CodecError(
            f"value section holds {len(data) - end_bitmap} bytes, expected {2 * alive}",
            min(len(data), expected),
        )
    values = np.zeros(pattern.group_count, dtype=np.float32)
    values[mask] = np.frombuffer(data, "<f2", alive, end_bitmap).astype(np.float32)
    return CompressedTensor(pattern, values, mask)

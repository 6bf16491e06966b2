"""Little-endian bit packing for index streams.

Indices are packed contiguously at ``bits`` bits each, LSB-first, with no
per-index padding; the stream is padded to a whole byte only at its end.
This keeps 12-bit streams (and any other non-byte-aligned width) tight.
"""

import numpy as np

from .errors import CodeRangeError


def packed_length(count: int, bits: int) -> int:
    """Byte length of a packed stream of `count` indices at `bits` each."""
    return (count * bits + 7) // 8


def pack_indices(values, bits: int) -> bytes:
    """Pack non-negative integers < 2**bits into a contiguous bit stream."""
    if not 1 <= bits <= 32:
        raise ValueError(f"bits must be in [1, 32], got {bits}")
    values = np.ascontiguousarray(values, dtype=np.int64).ravel()
    if values.size == 0:
        return b""
    if values.min() < 0 or values.max() >= (1 << bits):
        raise CodeRangeError(f"code out of range for {bits}-bit packing")
    shifts = np.arange(bits, dtype=np.uint64)
    bit_matrix = ((values.astype(np.uint64)[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bit_matrix.reshape(-1), bitorder="little").tobytes()


def unpack_indices(data: bytes, bits: int, count: int) -> np.ndarray:
    """Inverse of pack_indices; returns int32 array of length `count`."""
    if count == 0:
        return np.zeros(0, dtype=np.int32)
    need = packed_length(count, bits)
    if len(data) < need:
        raise ValueError(f"packed stream truncated: {len(data)} < {need} bytes")
    raw = np.frombuffer(data, dtype=np.uint8)
    bit_arr = np.unpackbits(raw, bitorder="little")[: count * bits]
    shifts = np.arange(bits, dtype=np.uint64)
    vals = (bit_arr.reshape(count, bits).astype(np.uint64) << shifts).sum(axis=1)
    return vals.astype(np.int32)

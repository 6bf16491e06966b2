"""Self-describing binary container for quantized tensors.

Layout (all little-endian):
  magic "VQLF", version u16,
  config block (vector_size u16, log2_entries u16, residuals u16,
  sharing kind u8 + params, tensor dims),
  codebook section (row-major float32 entry matrices),
  packed code stream (bit length u64, then bytes).
"""

import struct

import numpy as np

from . import bitpack
from .codec import Codebook, QuantizedTensor, Sharing, VQConfig

MAGIC = b"VQLF"
VERSION = 1

_SHARING_KIND = {"whole": 0, "tile": 1, "channel_group": 2}
_SHARING_NAME = {v: k for k, v in _SHARING_KIND.items()}


def dump_quantized(q: QuantizedTensor) -> bytes:
    cfg = q.config
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    out += struct.pack(
        "<HHH", cfg.vector_size, cfg.log2_entries, cfg.residuals
    )
    out += struct.pack(
        "<BxIII",
        _SHARING_KIND[cfg.sharing.kind],
        cfg.sharing.tile_rows,
        cfg.sharing.tile_cols,
        cfg.sharing.group_width,
    )
    out += struct.pack("<B3x", len(q.shape))
    out += struct.pack(f"<{len(q.shape)}Q", *q.shape)
    out += struct.pack("<II", q.n_regions, len(q.codebooks))
    for cb in q.codebooks:
        out += struct.pack("<HxxI", cb.residual_level, cb.region_id)
        out += np.ascontiguousarray(cb.entries, dtype="<f4").tobytes()
    packed = q.packed_codes()
    out += struct.pack("<Q", q.packed_bit_length)
    out += packed
    return bytes(out)


def load_quantized(data: bytes) -> QuantizedTensor:
    if data[:4] != MAGIC:
        raise ValueError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    off = 4
    (version,) = struct.unpack_from("<H", data, off)
    off += 2
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    vec, log2e, res = struct.unpack_from("<HHH", data, off)
    off += 6
    kind, t_rows, t_cols, g_width = struct.unpack_from("<BxIII", data, off)
    off += 14
    sharing = Sharing(_SHARING_NAME[kind], tile_rows=t_rows, tile_cols=t_cols,
                      group_width=g_width)
    cfg = VQConfig(vec, log2e, res, sharing)
    (ndim,) = struct.unpack_from("<B3x", data, off)
    off += 4
    shape = struct.unpack_from(f"<{ndim}Q", data, off)
    off += 8 * ndim
    n_regions, n_books = struct.unpack_from("<II", data, off)
    off += 8

    entry_bytes = cfg.n_entries * cfg.vector_size * 4
    books = []
    for _ in range(n_books):
        level, region = struct.unpack_from("<HxxI", data, off)
        off += 8
        entries = np.frombuffer(data, dtype="<f4", count=cfg.n_entries * vec,
                                offset=off).reshape(cfg.n_entries, vec).copy()
        off += entry_bytes
        books.append(Codebook(entries, residual_level=level, region_id=region))

    (bit_length,) = struct.unpack_from("<Q", data, off)
    off += 8
    count = bit_length // cfg.log2_entries
    codes = bitpack.unpack_indices(data[off:], cfg.log2_entries, count)
    return QuantizedTensor(
        codes=codes.reshape(res, -1),
        shape=tuple(shape),
        config=cfg,
        codebooks=books,
        n_regions=n_regions,
    )


def save_quantized(q: QuantizedTensor, path):
    with open(path, "wb") as f:
        f.write(dump_quantized(q))


def read_quantized(path) -> QuantizedTensor:
    with open(path, "rb") as f:
        return load_quantized(f.read())

"""Register-level fusion of dequantization with compute via intra-warp
xor shuffles, plus the shared-memory fallback.

Dequantization hands each lane ``layout_src`` contiguous elements (one
sub-vector); the compute primitive wants ``layout_dst`` per lane. Within each
group of ``iters = src/dst`` lanes whose dequantized data serves the same
consumers (a mini-warp), a specialized thread remapping plus ``iters - 1``
in-place xor exchanges deliver every register to its consumer without
touching shared memory. When the exchange count reaches the profiled
shared/register latency ratio, staging through shared memory wins instead.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import MappingError
from .report import SimReport

WARP = 32
THRES_SHUFFLE = 5  # profiled shared-vs-register latency ratio, a knob not a law

STYLE_STRIDED = "strided"  # element-wise consumers, any layout_dst
STYLE_MMA = "mma"  # tensor-core fragment consumers, layout_dst = 2


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class LayoutPair:
    """Elements per thread produced by dequantization vs. demanded by compute."""

    layout_src: int
    layout_dst: int

    def __post_init__(self):
        if not (_is_pow2(self.layout_src) and _is_pow2(self.layout_dst)):
            raise MappingError(
                f"layouts must be powers of two, got {self.layout_src}/{self.layout_dst}"
            )

    @property
    def register_compatible(self) -> bool:
        return self.layout_src >= self.layout_dst

    @property
    def iters(self) -> int:
        if not self.register_compatible:
            raise MappingError(
                f"register fusion needs layout_src >= layout_dst "
                f"({self.layout_src} < {self.layout_dst})"
            )
        return self.layout_src // self.layout_dst

    @property
    def n_shuffle(self) -> int:
        return self.iters - 1


def shuffle_count(vector_size: int, required_layout: int) -> int:
    return LayoutPair(vector_size, required_layout).n_shuffle


def choose_fusion_level(layouts: LayoutPair, thres_shuffle: int = THRES_SHUFFLE) -> str:
    """"register" when the exchange count stays under the latency threshold."""
    if not layouts.register_compatible:
        return "shared"
    return "register" if layouts.n_shuffle < thres_shuffle else "shared"


@dataclass(frozen=True)
class WarpTile:
    """Per-warp element tile: 32 sub-vectors laid out row-major."""

    rows: int
    cols: int
    style: str

    @property
    def n_elements(self) -> int:
        return self.rows * self.cols


def default_warp_tile(layouts: LayoutPair, style: str) -> WarpTile:
    src = layouts.layout_src
    if style == STYLE_STRIDED:
        return WarpTile(WARP, src, style)
    if style == STYLE_MMA:
        if layouts.layout_dst != 2:
            raise MappingError("mma consumers take layout_dst = 2")
        if src < 4:
            # one sub-vector is already one fragment; degenerate identity
            return WarpTile(WARP, src, STYLE_STRIDED)
        return WarpTile(16, 2 * src, style)
    raise MappingError(f"unknown compute style {style!r}")


def _compute_owner(tile: WarpTile, dst: int, e: np.ndarray):
    """(tid, slot) of every element id under the tile's compute layout."""
    if tile.style == STYLE_STRIDED:
        return (e // dst) % WARP, e // (WARP * dst)
    r, c = e // tile.cols, e % tile.cols
    tid = (r % 8) * 4 + (c % 8) // 2
    slot = (r // 8) * (tile.cols // 8) + c // 8
    return tid, slot


def _dequant_owner(src: int, e: np.ndarray):
    """(tid, slot) of every element id under row-major dequantization."""
    return e // src, (e % src)


@dataclass(frozen=True)
class ShuffleSchedule:
    """Mini-warp grouping, dequantization thread remap, and xor offsets.

    ``thread_remap[d]`` is the lane that takes over the sub-vector a naive
    row-major mapping would hand lane d. Offsets run 1..iters-1; step ``off``
    exchanges, on every lane t, register slot t^off (mod iters) with lane
    t^off, in place.
    """

    layouts: LayoutPair
    tile: WarpTile
    mini_warp_size: int
    thread_remap: tuple
    offsets: tuple

    @property
    def n_shuffle(self) -> int:
        return len(self.offsets)

    @property
    def subvector_of_lane(self) -> np.ndarray:
        """Which sub-vector each (remapped) lane dequantizes."""
        inv = np.empty(WARP, dtype=np.int64)
        inv[np.array(self.thread_remap)] = np.arange(WARP)
        return inv

    def to_json(self) -> str:
        return json.dumps({
            "mini_warp_size": self.mini_warp_size,
            "remap": list(self.thread_remap),
            "offsets": list(self.offsets),
        })


def build_thread_mapping(warp_tile: WarpTile, layouts: LayoutPair) -> np.ndarray:
    """Group dequantization lanes into mini-warps by their consumer sets and
    remap each group onto its own consumers.

    Returns remap with remap[naive_lane] = assigned_lane. Raises MappingError
    when consumer sets do not form warp-local groups of ``iters`` lanes.
    """
    src, dst = layouts.layout_src, layouts.layout_dst
    iters = layouts.iters
    if iters > WARP:
        raise MappingError(
            f"exchange group of {iters} lanes exceeds the warp; use shared fusion"
        )
    e = np.arange(warp_tile.n_elements)
    tid_c, _ = _compute_owner(warp_tile, dst, e)
    tid_d, _ = _dequant_owner(src, e)

    remap = np.full(WARP, -1, dtype=np.int64)
    groups = {}
    for d in range(WARP):
        consumers = tid_c[tid_d == d]
        key = tuple(dict.fromkeys(consumers.tolist()))  # ordered, deduplicated
        groups.setdefault(key, []).append(d)
    for key, members in groups.items():
        if len(key) != iters or len(members) != iters:
            raise MappingError(
                f"consumer set {key} of lanes {members} is not an "
                f"{iters}-lane exchange group; use shared fusion"
            )
        base = key[0]
        if base % iters != 0 or tuple(range(base, base + iters)) != key:
            raise MappingError(
                f"consumer set {key} is not xor-aligned; use shared fusion"
            )
        for i, d in enumerate(sorted(members)):
            remap[d] = key[i]
    if (remap < 0).any() or len(set(remap.tolist())) != WARP:
        raise MappingError("thread remap is not a bijection over the warp")
    return remap


def build_shuffle_schedule(layouts: LayoutPair, style: str = STYLE_STRIDED) -> ShuffleSchedule:
    """Full register-fusion schedule: remap plus ordered xor offsets."""
    tile = default_warp_tile(layouts, style)
    iters = layouts.iters
    remap = build_thread_mapping(tile, layouts)
    return ShuffleSchedule(
        layouts=layouts,
        tile=tile,
        mini_warp_size=iters,
        thread_remap=tuple(int(x) for x in remap),
        offsets=tuple(range(1, iters)),
    )


def dequant_register_file(schedule: ShuffleSchedule) -> np.ndarray:
    """Element ids in (lane, slot, element-within-slot) order right after
    dequantization under the schedule's thread mapping."""
    src, dst = schedule.layouts.layout_src, schedule.layouts.layout_dst
    iters = schedule.layouts.iters
    sub = schedule.subvector_of_lane
    regs = np.empty((WARP, iters, dst), dtype=np.int64)
    for lane in range(WARP):
        regs[lane] = (sub[lane] * src + np.arange(src)).reshape(iters, dst)
    return regs


def run_shuffle_steps(schedule: ShuffleSchedule, regs: np.ndarray) -> np.ndarray:
    """Apply the xor exchange steps to a (32, iters, dst) register file.

    Every step is warp-synchronous: all lanes read their partners before any
    write lands, exactly like the hardware shuffle.
    """
    iters = schedule.mini_warp_size
    out = regs.copy()
    lanes = np.arange(WARP)
    for off in schedule.offsets:
        partner = lanes ^ off
        slot = partner % iters
        snapshot = out.copy()
        out[lanes, slot] = snapshot[partner, lanes % iters]
    return out


def expected_compute_ownership(schedule: ShuffleSchedule) -> np.ndarray:
    """Element ids each (lane, slot) must hold for the compute layout."""
    tile = schedule.tile
    dst = schedule.layouts.layout_dst
    iters = schedule.layouts.iters
    e = np.arange(tile.n_elements)
    tid_c, slot_c = _compute_owner(tile, dst, e)
    want = np.empty((WARP, iters, dst), dtype=np.int64)
    for lane in range(WARP):
        for j in range(iters):
            owned = e[(tid_c == lane) & (slot_c == j)]
            want[lane, j] = np.sort(owned)
    return want


def shared_fusion(data: np.ndarray, layouts: LayoutPair,
                  style: str = STYLE_STRIDED,
                  counters: SimReport = None,
                  shared_capacity: int = None) -> np.ndarray:
    """Stage a warp tile through shared memory into the compute layout.

    ``data`` holds one warp tile as (32 lanes, layout_src) rows in
    dequantization order. Staged traffic (elements x 2 bytes, the read back
    to registers) and the write/read bank conflicts are charged to
    ``counters``. Identical layouts stage nothing.
    """
    src, dst = layouts.layout_src, layouts.layout_dst
    if data.shape != (WARP, src):
        raise ValueError(f"expected (32, {src}) warp tile, got {data.shape}")
    tile = default_warp_tile(layouts, style) if src >= dst else \
        WarpTile(WARP, src, STYLE_STRIDED)
    if src == dst and style == STYLE_STRIDED:
        return data.reshape(WARP, -1, dst)

    n_bytes = tile.n_elements * 2
    if shared_capacity is not None and n_bytes > shared_capacity:
        raise MappingError(
            f"staging tile of {n_bytes} B exceeds shared capacity {shared_capacity} B"
        )
    flat = data.reshape(-1)
    e = np.arange(tile.n_elements)
    if src >= dst:
        tid_c, slot_c = _compute_owner(tile, dst, e)
        rounds = src // dst
    else:
        # widening relayout: consumers take dst contiguous elements
        tid_c, slot_c = (e // dst) % WARP, e // (WARP * dst)
        rounds = max(tile.n_elements // (WARP * dst), 1)
    out = np.empty((WARP, rounds, dst), dtype=flat.dtype)
    order = np.lexsort((e, slot_c, tid_c))
    out.reshape(-1)[...] = flat[order]
    if counters is not None:
        counters.shared_to_reg_bytes += n_bytes
        counters.staged_dequant_bytes += n_bytes
        counters.bank_conflicts += staging_conflicts(layouts, tile, dst)
    return out


def staging_conflicts(layouts: LayoutPair, tile: WarpTile, dst: int) -> int:
    """Bank conflicts of one write (dequant layout) + read (compute layout)
    pass over a staged warp tile of FP16 elements."""
    from .sim import simulate_warp_access  # local import breaks the cycle

    src = layouts.layout_src
    e = np.arange(tile.n_elements)
    total = 0
    # write: lane d stores its sub-vector, one 4-byte word (2 elements) each step
    words_per_sub = max(src * 2 // 4, 1)
    for step in range(words_per_sub):
        addrs = (e.reshape(WARP, src)[:, 0] * 2) + step * 4
        total += simulate_warp_access(addrs)
    # read: each lane pulls its dst-chunks back, one chunk word per step
    tid_c, slot_c = _compute_owner(tile, dst, e)
    order = np.lexsort((e, slot_c, tid_c))
    chunk_starts = order.reshape(WARP, -1, dst)[:, :, 0]
    for j in range(chunk_starts.shape[1]):
        addrs = chunk_starts[:, j] * 2
        total += simulate_warp_access(addrs)
    return total

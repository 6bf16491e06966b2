"""Deterministic simulated-GPU executor.

Runs fused dequantization-compute plans numerically (float32 math) while
counting the memory-hierarchy events the plans exist to optimize: shared
bank conflicts, Global->Shared codebook bytes, Shared->Reg bytes, staged
dequantized-data bytes, global traffic, and reduction traffic. No latency is
produced; counters are the proxy. Dequantized elements are charged at FP16
width (2 bytes) while math accumulates in 32-bit.

Block decomposition follows either the naive dataflow (token/output-strip
tiling that crosses codebook regions) or a codebook-centric DataflowPlan
(region-aligned tiling with a split reduction). Warp-level shuffle fidelity
lives in the fusion module; here a fused block charges zero staging bytes
under register fusion and the staged relayout under shared fusion.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cacheplan import CachePlan, compute_slack, plan_cache
from .codec import QuantizedTensor, VQConfig
from .dataflow import (
    ATTENTION,
    GEMM,
    GEMV,
    STRIP_N,
    TILE_T,
    ComputeOp,
    DataflowPlan,
    build_dataflow,
)
from .errors import CapacityError, ConfigError, ShapeError
from .fusion import (
    STYLE_MMA,
    STYLE_STRIDED,
    THRES_SHUFFLE,
    LayoutPair,
    MappingError,
    ShuffleSchedule,
    build_shuffle_schedule,
    choose_fusion_level,
    default_warp_tile,
    staging_conflicts,
)
from .gpumodel import GpuModel, KernelUsage
from .report import SimReport

WARP = 32

# baseline per-kernel resource usage before any codebook residency
KERNEL_USAGE = {
    GEMM: KernelUsage(shared_bytes=32768, regs_per_thread=64, threads_per_block=256),
    GEMV: KernelUsage(shared_bytes=8192, regs_per_thread=40, threads_per_block=256),
    ATTENTION: KernelUsage(shared_bytes=8192, regs_per_thread=32, threads_per_block=256),
}


# ---------------------------------------------------------------------------
# warp-level shared-memory access model


def simulate_warp_access(addresses, shared_size: Optional[int] = None) -> int:
    """Bank conflicts of one warp-wide shared access.

    ``addresses`` are per-lane byte addresses (up to 32; negatives mark
    inactive lanes). Lanes touching the same 4-byte word broadcast for free;
    each bank serializes over the distinct words requested from it, so the
    count is sum over banks of (distinct words - 1).
    """
    addrs = np.asarray(addresses, dtype=np.int64).ravel()
    if addrs.size > WARP:
        raise ValueError(f"a warp has at most {WARP} lanes, got {addrs.size}")
    active = addrs >= 0
    if shared_size is not None and (addrs[active] >= shared_size).any():
        raise ValueError("shared address out of range")
    words = np.unique(addrs[active] // 4)
    if words.size == 0:
        return 0
    banks = np.unique(words % 32)
    return int(words.size - banks.size)


def _stream_conflicts(words: np.ndarray) -> int:
    """Total conflicts of a stream of word addresses grouped into warps.

    ``words`` is 1-D; entries < 0 are inactive lanes. The stream is cut into
    consecutive groups of 32 (one simulated warp access each).
    """
    n = words.size
    if n == 0:
        return 0
    pad = (-n) % WARP
    if pad:
        words = np.concatenate([words, np.full(pad, -1, dtype=words.dtype)])
    rows = words.reshape(-1, WARP)
    rows = np.sort(rows, axis=1)
    valid = rows >= 0
    first = valid & np.concatenate(
        [np.ones((rows.shape[0], 1), bool), rows[:, 1:] != rows[:, :-1]], axis=1)
    distinct_words = first.sum()
    # distinct banks per warp: sort bank ids the same way
    banks = np.where(rows >= 0, rows % 32, -1)
    banks = np.sort(banks, axis=1)
    bvalid = banks >= 0
    bfirst = bvalid & np.concatenate(
        [np.ones((banks.shape[0], 1), bool), banks[:, 1:] != banks[:, :-1]], axis=1)
    return int(distinct_words - bfirst.sum())


def codebook_stream_conflicts(codes: np.ndarray, plan: CachePlan) -> int:
    """Bank conflicts of a dequantization access stream against one plan.

    Register hits bypass the banks entirely; global hits have no banks.
    Multi-word entries issue one warp access per 4-byte word of the entry.
    """
    codes = np.asarray(codes, dtype=np.int64).ravel()
    shared = (codes >= plan.n_reg) & (codes < plan.n_shared)
    words_per_entry = max(plan.entry_bytes // 4, 1)
    base = np.where(shared, (codes - plan.n_reg) * words_per_entry, -1)
    total = 0
    for k in range(words_per_entry):
        step = np.where(base >= 0, base + k, -1)
        total += _stream_conflicts(step)
    return total


# ---------------------------------------------------------------------------
# reference computations


def reference_compute(op: ComputeOp, operands: dict) -> np.ndarray:
    """Dense float32 reference with numpy's fixed summation order; the
    correctness oracle for every fused path."""
    if op.kind in (GEMM, GEMV):
        a = np.asarray(operands["activation"], dtype=np.float32)
        w = np.asarray(operands["weight"], dtype=np.float32)
        if a.ndim == 1:
            a = a[None, :]
        if a.shape[1] != w.shape[0]:
            raise ShapeError(f"activation {a.shape} does not match weight {w.shape}")
        out = a @ w
        return out[0] if op.kind == GEMV else out
    q = np.asarray(operands["query"], dtype=np.float32)
    k = np.asarray(operands["k"], dtype=np.float32)
    v = np.asarray(operands["v"], dtype=np.float32)
    if q.shape != k.shape[:2] + k.shape[3:] or k.shape != v.shape:
        raise ShapeError(f"attention shapes q{q.shape} k{k.shape} v{v.shape}")
    c = k.shape[3]
    logits = np.einsum("bhc,bhtc->bht", q, k, dtype=np.float32) / np.float32(np.sqrt(c))
    logits = logits - logits.max(axis=2, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=2, keepdims=True)
    return np.einsum("bht,bhtc->bhc", p, v, dtype=np.float32)


# ---------------------------------------------------------------------------
# quantized-tensor slicing helpers


class _QuantView:
    """Codes/regions of a QuantizedTensor reshaped for 2-D block slicing."""

    def __init__(self, qt: QuantizedTensor):
        self.qt = qt
        cfg = qt.config
        self.v = cfg.vector_size
        rows = int(np.prod(qt.shape[:-1]))
        self.gpr = qt.shape[-1] // self.v
        self.codes = qt.codes.reshape(cfg.residuals, rows, self.gpr)
        self.regions = qt.region_ids.reshape(rows, self.gpr)
        self.stacked = np.concatenate([cb.entries for cb in qt.codebooks], axis=0)
        self.n_regions = qt.n_regions
        self.k = cfg.n_entries

    def dequant(self, levels, rows, groups) -> np.ndarray:
        """Reconstruct a (rows, groups*v) slice from the given levels."""
        reg = self.regions[rows, groups]
        out = np.zeros(reg.shape + (self.v,), dtype=np.float32)
        for r in levels:
            codes = self.codes[r][rows, groups]
            idx = (r * self.n_regions + reg.astype(np.int64)) * self.k + codes
            out += self.stacked[idx]
        return out.reshape(reg.shape[0], -1)

    def codes_of(self, levels, rows, groups) -> np.ndarray:
        """Access stream for the slice, level-major then row-major."""
        return np.concatenate([self.codes[r][rows, groups].ravel() for r in levels])

    def books_of(self, levels, rows, groups):
        """(level, region) pairs touched by the slice, in deterministic order."""
        regs = np.unique(self.regions[rows, groups])
        return [(r, int(g)) for r in levels for g in regs]

    def code_bytes(self, levels, rows, groups) -> int:
        n = len(levels) * self.regions[rows, groups].size
        return (n * self.qt.config.log2_entries + 7) // 8


def _row_grid(r0, r1, g0, g1):
    rows = np.arange(r0, r1)[:, None]
    groups = np.arange(g0, g1)[None, :]
    return np.broadcast_arrays(rows, groups)


# ---------------------------------------------------------------------------
# variant ladder


@dataclass(frozen=True)
class Variant:
    name: str
    cache: str  # "gc" | "sc" | "slack_shared" | "slack_both"
    dataflow: str  # "naive" | "centric"
    fusion: str  # "shared" | "adaptive"


VARIANTS = {
    "gc": Variant("gc", "gc", "naive", "shared"),
    "sc": Variant("sc", "sc", "naive", "shared"),
    "o1": Variant("o1", "slack_shared", "naive", "shared"),
    "o2": Variant("o2", "slack_both", "naive", "shared"),
    "o3": Variant("o3", "slack_both", "centric", "shared"),
    "o4": Variant("o4", "slack_both", "centric", "adaptive"),
}


@dataclass
class FusedPlans:
    """Everything a fused launch needs: placement, dataflow, fusion level."""

    cache_plan: CachePlan
    dataflow_plan: DataflowPlan
    fusion_level: str  # "register" | "shared"
    schedule: Optional[ShuffleSchedule] = None


def fusion_for(config: VQConfig, op: ComputeOp,
               thres_shuffle: int = THRES_SHUFFLE):
    """(level, schedule) for the op's layout pair; falls back to shared when
    the exchange would leave the warp or cross the latency threshold."""
    layouts = LayoutPair(config.vector_size, op.required_layout)
    level = choose_fusion_level(layouts, thres_shuffle)
    schedule = None
    if level == "register":
        style = STYLE_MMA if op.kind == GEMM else STYLE_STRIDED
        try:
            schedule = build_shuffle_schedule(layouts, style=style)
        except MappingError:
            level = "shared"
    return level, schedule


def plan_kernel(config: VQConfig, op: ComputeOp, model: GpuModel,
                kernel_usage: Optional[KernelUsage] = None,
                histogram=None,
                n_reg: Optional[int] = None,
                n_shared: Optional[int] = None,
                split_factor: Optional[int] = None,
                thres_shuffle: int = THRES_SHUFFLE) -> FusedPlans:
    """Assemble the full O4 plan set for one (config, op, model) triple."""
    usage = kernel_usage or KERNEL_USAGE[op.kind]
    slack = compute_slack(usage, model)
    proto = _proto_codebook(config)
    cache = plan_cache(proto, histogram, slack, n_reg=n_reg, n_shared=n_shared)
    flow = build_dataflow(config, op, model, split_factor=split_factor)
    level, schedule = fusion_for(config, op, thres_shuffle)
    return FusedPlans(cache, flow, level, schedule)


def _proto_codebook(config: VQConfig):
    from .codec import Codebook

    return Codebook(np.zeros((config.n_entries, config.vector_size), np.float32),
                    residual_level=0, region_id=0)


# ---------------------------------------------------------------------------
# the executor


class SimMachine:
    """Lock-step block executor over a GPU model.

    Blocks are simulated sequentially in a fixed order; counters merge
    associatively, and cross-block reductions use numpy's pairwise tree sum,
    so outputs and counters are bit-identical across runs.
    """

    def __init__(self, model: GpuModel, thres_shuffle: int = THRES_SHUFFLE):
        self.model = model
        self.thres_shuffle = thres_shuffle

    # -- public entry points -------------------------------------------------

    def run_fused_kernel(self, quantized, plans: FusedPlans, op: ComputeOp,
                         operands: dict):
        """Execute the complete VQ-aware template: region-aligned parallel
        loop, Switch/Load, Access-based dequantization, register or shared
        fusion, temporal compute, then the split global reduction."""
        if plans.dataflow_plan.op_kind != op.kind:
            raise ConfigError(
                f"dataflow plan for {plans.dataflow_plan.op_kind} used with {op.kind}"
            )
        self._check_capacity(quantized, plans.cache_plan, op)
        report = SimReport()
        report.occupancy = self._occupancy_with_cache(plans.cache_plan, op)
        if op.kind == ATTENTION:
            out = self._attention(quantized, op, operands, plans.cache_plan,
                                  report, plans.dataflow_plan, plans.fusion_level)
        else:
            out = self._matmul(quantized, op, operands, plans.cache_plan,
                               report, plans.dataflow_plan, plans.fusion_level)
        report.validate()
        return out, report

    def run_baseline_kernel(self, quantized, variant: str, op: ComputeOp,
                            operands: dict):
        """GC / SC naive dataflow with shared-memory fusion only."""
        name = variant.lower()
        if name not in ("gc", "sc"):
            raise ConfigError(f"baseline variant must be GC or SC, got {variant}")
        return self.run_variant(name, quantized, op, operands)

    def run_variant(self, name: str, quantized, op: ComputeOp, operands: dict,
                    plans: Optional[FusedPlans] = None):
        """Run one rung of the optimization ladder (gc, sc, o1..o4)."""
        try:
            variant = VARIANTS[name.lower()]
        except KeyError:
            raise ConfigError(f"unknown variant {name!r}") from None
        config = _config_of(quantized)
        cache = self._cache_plan_for(variant, config, op,
                                     plans.cache_plan if plans else None)
        if variant.dataflow == "centric":
            flow = plans.dataflow_plan if plans else build_dataflow(config, op, self.model)
        else:
            flow = None
        if variant.fusion == "adaptive":
            if plans is not None:
                level = plans.fusion_level
            else:
                level, _ = fusion_for(config, op, self.thres_shuffle)
        else:
            level = "shared"
        report = SimReport()
        report.meta["variant"] = variant.name
        report.occupancy = self._variant_occupancy(variant, cache, config, op,
                                                   quantized)
        if op.kind == ATTENTION:
            out = self._attention(quantized, op, operands, cache, report, flow, level)
        else:
            out = self._matmul(quantized, op, operands, cache, report, flow, level)
        report.validate()
        return out, report

    def run_dense(self, op: ComputeOp, operands: dict):
        """FP16-style dense run: no codebooks, zero codebook traffic."""
        report = SimReport()
        report.meta["variant"] = "fp16"
        usage = KERNEL_USAGE[op.kind]
        report.occupancy = self.model.occupancy_of(usage)
        out = reference_compute(op, operands)
        report.global_bytes += 2 * sum(
            int(np.asarray(x).size) for x in operands.values())
        report.global_bytes += 2 * out.size
        return out, report

    # -- plan/occupancy helpers ----------------------------------------------

    def _cache_plan_for(self, variant: Variant, config: VQConfig, op: ComputeOp,
                        override: Optional[CachePlan]) -> CachePlan:
        k = config.n_entries
        eb = config.entry_bytes
        if variant.cache == "gc":
            return CachePlan(0, 0, k, eb)
        if variant.cache == "sc":
            return CachePlan(0, k, k, eb)
        if override is not None:
            if variant.cache == "slack_shared":
                return CachePlan(0, max(override.n_shared - override.n_reg, 0),
                                 k, eb)
            return override
        usage = KERNEL_USAGE[op.kind]
        slack = compute_slack(usage, self.model)
        if variant.cache == "slack_shared":
            plan = plan_cache(_proto_codebook(config), None, slack, n_reg=0)
        else:
            plan = plan_cache(_proto_codebook(config), None, slack)
        return plan

    def _books_resident_bytes(self, variant: Variant, cache: CachePlan,
                              config: VQConfig, op: ComputeOp, quantized) -> int:
        """Shared bytes held by codebook residency for occupancy accounting."""
        if variant.cache == "gc":
            return 0
        if variant.cache == "sc":
            # greedy: every codebook the block touches stays resident, clamped
            # to what fits beside the kernel's own shared usage
            from .dataflow import naive_books_per_block

            usage = KERNEL_USAGE[op.kind]
            books = naive_books_per_block(config, op) * _n_tensors(quantized)
            book_bytes = config.n_entries * config.entry_bytes
            cap = self.model.max_shared_per_block - usage.shared_bytes
            fit = max(min(books * book_bytes, cap // book_bytes * book_bytes),
                      0)
            if fit == 0 and cap >= book_bytes:
                fit = book_bytes
            return fit
        return cache.shared_span_bytes

    def _variant_occupancy(self, variant: Variant, cache: CachePlan,
                           config: VQConfig, op: ComputeOp, quantized) -> int:
        usage = KERNEL_USAGE[op.kind]
        resident = self._books_resident_bytes(variant, cache, config, op,
                                              quantized)
        regs_extra = 0
        if variant.cache in ("slack_both",):
            regs_extra = cache.reg_span_bytes // 4
        occ = self.model.occupancy(usage.shared_bytes + resident,
                                   usage.regs_per_thread + regs_extra,
                                   usage.threads_per_block)
        if occ < 1:
            raise CapacityError(
                f"variant {variant.name} cannot fit one block on {self.model.name}"
            )
        return occ

    def _occupancy_with_cache(self, cache: CachePlan, op: ComputeOp) -> int:
        usage = KERNEL_USAGE[op.kind]
        occ = self.model.occupancy(
            usage.shared_bytes + cache.shared_span_bytes,
            usage.regs_per_thread + cache.reg_span_bytes // 4,
            usage.threads_per_block,
        )
        if occ < 1:
            raise CapacityError(
                f"cache plan {cache.n_reg}/{cache.n_shared} cannot fit on "
                f"{self.model.name}"
            )
        return occ

    def _check_capacity(self, quantized, cache: CachePlan, op: ComputeOp):
        config = _config_of(quantized)
        if cache.n_entries != config.n_entries:
            raise ConfigError(
                f"cache plan over {cache.n_entries} entries used with "
                f"{config.n_entries}-entry codebooks"
            )

    # -- per-block bookkeeping -----------------------------------------------

    def _charge_books(self, report: SimReport, cache: CachePlan, n_books: int):
        report.global_to_shared_bytes += n_books * cache.shared_span_bytes
        report.global_bytes += n_books * cache.reg_span_bytes

    def _charge_accesses(self, report: SimReport, cache: CachePlan,
                         codes: np.ndarray):
        eb = cache.entry_bytes
        levels = cache.levels_of(codes)
        report.shared_to_reg_bytes += int((levels == 1).sum()) * eb
        report.global_bytes += int((levels == 2).sum()) * eb
        report.bank_conflicts += codebook_stream_conflicts(codes, cache)

    def _charge_fusion(self, report: SimReport, fusion_level: str,
                       config: VQConfig, op: ComputeOp, n_elements: int,
                       aligned: bool = False):
        """Staging cost of relaying `n_elements` dequantized values.

        ``aligned`` marks streams whose dequantization layout already matches
        the consumer (attention K rows), which stage nothing either way.
        """
        if aligned or fusion_level == "register" or n_elements == 0:
            return
        layouts = LayoutPair(config.vector_size, op.required_layout)
        if layouts.register_compatible and layouts.iters == 1:
            return
        style = STYLE_MMA if op.kind == GEMM else STYLE_STRIDED
        tile = default_warp_tile(layouts, style)
        staged = n_elements * 2
        report.shared_to_reg_bytes += staged
        report.staged_dequant_bytes += staged
        n_tiles = -(-n_elements // tile.n_elements)
        report.bank_conflicts += n_tiles * staging_conflicts(
            layouts, tile, op.required_layout)

    # -- attention executor ----------------------------------------------------

    def _attention(self, quantized, op: ComputeOp, operands: dict,
                   cache: CachePlan, report: SimReport,
                   flow: Optional[DataflowPlan], fusion_level: str):
        kq, vq = quantized["k"], quantized["v"]
        config = kq.config
        b_n, h_n, t_n, c_n = (op.axes["B"], op.axes["H"], op.axes["T"],
                              op.axes["C"])
        if kq.shape != (b_n, h_n, t_n, c_n) or vq.shape != (b_n, h_n, t_n, c_n):
            raise ShapeError(
                f"quantized KV shape {kq.shape} does not match op axes "
                f"{(b_n, h_n, t_n, c_n)}"
            )
        query = np.asarray(operands["query"], dtype=np.float32)
        if query.shape != (b_n, h_n, c_n):
            raise ShapeError(f"query shape {query.shape} != {(b_n, h_n, c_n)}")
        kv_view, vv_view = _QuantView(kq), _QuantView(vq)
        scale = np.float32(1.0 / np.sqrt(c_n))
        levels = list(range(config.residuals))
        gpr = c_n // config.vector_size

        f = flow.split_factor if flow else 1
        tile_shared = config.sharing.kind == "tile"
        if flow is None or (f == 1 and not tile_shared):
            out = self._attention_naive(kv_view, vv_view, query, op, cache,
                                        report, fusion_level, levels, gpr, scale)
        else:
            out = self._attention_centric(kv_view, vv_view, query, op, cache,
                                          report, fusion_level, levels, gpr,
                                          scale, flow)
        report.global_bytes += 2 * query.size + 2 * out.size
        return out

    def _attn_block_dequant(self, view: _QuantView, op, cache, report,
                            row_lo, row_hi, g_lo, g_hi, levels):
        rows, groups = _row_grid(row_lo, row_hi, g_lo, g_hi)
        books = view.books_of(levels, rows, groups)
        self._charge_books(report, cache, len(books))
        codes = view.codes_of(levels, rows, groups)
        self._charge_accesses(report, cache, codes)
        report.global_bytes += view.code_bytes(levels, rows, groups)
        return view.dequant(levels, rows, groups)

    def _attention_naive(self, kv, vv, query, op, cache, report, fusion_level,
                         levels, gpr, scale):
        b_n, h_n, t_n, c_n = (op.axes[a] for a in "BHTC")
        tile = min(TILE_T, t_n)
        out = np.zeros((b_n, h_n, c_n), dtype=np.float32)
        for b in range(b_n):
            for h in range(h_n):
                row0 = (b * h_n + h) * t_n
                run_m = None  # running (max, denom, acc) flash combine
                for t0 in range(0, t_n, tile):
                    t1 = min(t0 + tile, t_n)
                    k_tile = self._attn_block_dequant(
                        kv, op, cache, report, row0 + t0, row0 + t1, 0, gpr, levels)
                    v_tile = self._attn_block_dequant(
                        vv, op, cache, report, row0 + t0, row0 + t1, 0, gpr, levels)
                    # K rows align with the dot product; V needs the relayout
                    self._charge_fusion(report, fusion_level, kv.qt.config, op,
                                        k_tile.size, aligned=True)
                    self._charge_fusion(report, fusion_level, vv.qt.config, op,
                                        v_tile.size)
                    logits = (k_tile @ query[b, h]) * scale
                    m = np.float32(logits.max())
                    w = np.exp(logits - m)
                    part = w @ v_tile
                    denom = np.float32(w.sum())
                    if run_m is None:
                        run_m = (m, denom, part)
                    else:
                        pm, pd, pa = run_m
                        new_m = max(pm, m)
                        sp = np.float32(np.exp(pm - new_m))
                        sn = np.float32(np.exp(m - new_m))
                        run_m = (new_m, pd * sp + denom * sn,
                                 pa * sp + part * sn)
                        # combine traffic for the extra tile's partials
                        report.global_bytes += 2 * (c_n + 2)
                out[b, h] = run_m[2] / run_m[1]
        return out

    def _attention_centric(self, kv, vv, query, op, cache, report,
                           fusion_level, levels, gpr, scale,
                           flow: DataflowPlan):
        b_n, h_n, t_n, c_n = (op.axes[a] for a in "BHTC")
        f = flow.split_factor
        axis = flow.split_axis
        base_tiles = max(flow.base_tiles, 1)
        t_tile = max(t_n // base_tiles, 1)
        out = np.zeros((b_n, h_n, c_n), dtype=np.float32)

        if axis == "C":
            part_groups = gpr // f
            for b in range(b_n):
                for h in range(h_n):
                    row0 = (b * h_n + h) * t_n
                    logits_parts = np.zeros((f, t_n), dtype=np.float32)
                    for t0 in range(0, t_n, t_tile):
                        t1 = min(t0 + t_tile, t_n)
                        for p in range(f):
                            g0, g1 = p * part_groups, (p + 1) * part_groups
                            k_tile = self._attn_block_dequant(
                                kv, op, cache, report, row0 + t0, row0 + t1, g0, g1,
                                levels)
                            self._charge_fusion(report, fusion_level,
                                                kv.qt.config, op, k_tile.size,
                                                aligned=True)
                            logits_parts[p, t0:t1] = \
                                k_tile @ query[b, h, g0 * kv.v:g1 * kv.v]
                    logits = logits_parts.sum(axis=0) * scale
                    p_w = _softmax32(logits)
                    # V phase under the same channel split: each partition owns
                    # its own output channels, partials only across token tiles
                    for p in range(f):
                        g0, g1 = p * part_groups, (p + 1) * part_groups
                        acc_parts = []
                        for t0 in range(0, t_n, t_tile):
                            t1 = min(t0 + t_tile, t_n)
                            v_tile = self._attn_block_dequant(
                                vv, op, cache, report, row0 + t0, row0 + t1, g0, g1,
                                levels)
                            self._charge_fusion(report, fusion_level,
                                                vv.qt.config, op, v_tile.size)
                            acc_parts.append(p_w[t0:t1] @ v_tile)
                            if t0 > 0:
                                report.global_bytes += 2 * (g1 - g0) * kv.v
                        out[b, h, g0 * kv.v:g1 * kv.v] = \
                            np.sum(np.stack(acc_parts), axis=0)
            if f > 1:
                report.reduce_bytes += f * op.logits_bytes()
            # softmax pass reads/writes the accumulated logits once
            report.global_bytes += 2 * op.logits_bytes()
            return out

        if axis == "R":
            n_levels = len(levels)
            per = n_levels // f
            for b in range(b_n):
                for h in range(h_n):
                    row0 = (b * h_n + h) * t_n
                    logit_parts = np.zeros((f, t_n), dtype=np.float32)
                    for t0 in range(0, t_n, t_tile):
                        t1 = min(t0 + t_tile, t_n)
                        for p in range(f):
                            lv = levels[p * per:(p + 1) * per]
                            k_tile = self._attn_block_dequant(
                                kv, op, cache, report, row0 + t0, row0 + t1, 0, gpr, lv)
                            self._charge_fusion(report, fusion_level,
                                                kv.qt.config, op, k_tile.size,
                                                aligned=True)
                            logit_parts[p, t0:t1] = k_tile @ query[b, h]
                    logits = logit_parts.sum(axis=0) * scale
                    p_w = _softmax32(logits)
                    acc = np.zeros((f, c_n), dtype=np.float32)
                    for t0 in range(0, t_n, t_tile):
                        t1 = min(t0 + t_tile, t_n)
                        for p in range(f):
                            lv = levels[p * per:(p + 1) * per]
                            v_tile = self._attn_block_dequant(
                                vv, op, cache, report, row0 + t0, row0 + t1, 0, gpr, lv)
                            self._charge_fusion(report, fusion_level,
                                                vv.qt.config, op, v_tile.size)
                            acc[p] += p_w[t0:t1] @ v_tile
                    out[b, h] = acc.sum(axis=0)
            if f > 1:
                report.reduce_bytes += f * (op.logits_bytes() + op.output_bytes())
            report.global_bytes += 2 * op.logits_bytes()
            return out

        if axis == "T":
            regions_t = flow.region_tasks["T"]
            rows_per_region = -(-t_n // regions_t)
            per = regions_t // f
            for b in range(b_n):
                for h in range(h_n):
                    row0 = (b * h_n + h) * t_n
                    logits = np.zeros(t_n, dtype=np.float32)
                    for p in range(f):
                        t0 = p * per * rows_per_region
                        t1 = min((p + 1) * per * rows_per_region, t_n)
                        k_tile = self._attn_block_dequant(
                            kv, op, cache, report, row0 + t0, row0 + t1, 0, gpr, levels)
                        self._charge_fusion(report, fusion_level, kv.qt.config,
                                            op, k_tile.size, aligned=True)
                        logits[t0:t1] = k_tile @ query[b, h]
                    logits *= scale
                    p_w = _softmax32(logits)
                    parts = []
                    for p in range(f):
                        t0 = p * per * rows_per_region
                        t1 = min((p + 1) * per * rows_per_region, t_n)
                        v_tile = self._attn_block_dequant(
                            vv, op, cache, report, row0 + t0, row0 + t1, 0, gpr, levels)
                        self._charge_fusion(report, fusion_level, vv.qt.config,
                                            op, v_tile.size)
                        parts.append(p_w[t0:t1] @ v_tile)
                    out[b, h] = np.sum(np.stack(parts), axis=0)
            if f > 1:
                report.reduce_bytes += f * op.output_bytes()
            report.global_bytes += 2 * op.logits_bytes()
            return out

        raise ConfigError(f"unsupported attention split axis {axis!r}")

    # -- GeMM / GeMV executor --------------------------------------------------

    def _matmul(self, quantized, op: ComputeOp, operands: dict,
                cache: CachePlan, report: SimReport,
                flow: Optional[DataflowPlan], fusion_level: str):
        qt = quantized if isinstance(quantized, QuantizedTensor) else quantized["weight"]
        config = qt.config
        m_n, n_n = op.axes["M"], op.axes["N"]
        if qt.shape != (m_n, n_n):
            raise ShapeError(f"quantized weight {qt.shape} != {(m_n, n_n)}")
        a = np.asarray(operands["activation"], dtype=np.float32)
        if a.ndim == 1:
            a = a[None, :]
        if a.shape[1] != m_n:
            raise ShapeError(f"activation {a.shape} does not match M={m_n}")
        view = _QuantView(qt)
        levels = list(range(config.residuals))
        gpr = n_n // config.vector_size
        v = config.vector_size

        f = flow.split_factor if flow else 1
        tile_shared = config.sharing.kind == "tile"

        out = np.zeros((a.shape[0], n_n), dtype=np.float32)
        if flow is not None and tile_shared:
            # per-tile weights: N region-aligned, M regions split f ways
            tile_r = config.sharing.tile_rows
            tile_c = min(config.sharing.tile_cols, n_n)
            m_regions = flow.region_tasks["M"]
            per = max(m_regions // f, 1)
            for n0 in range(0, n_n, tile_c):
                n1 = min(n0 + tile_c, n_n)
                parts = []
                for p in range(f):
                    m0 = p * per * tile_r
                    m1 = min((p + 1) * per * tile_r, m_n)
                    w_tile = self._mm_block(view, op, cache, report, levels,
                                            m0, m1, n0 // v, n1 // v,
                                            fusion_level, config)
                    parts.append(a[:, m0:m1] @ w_tile)
                out[:, n0:n1] = np.sum(np.stack(parts), axis=0)
            if f > 1:
                report.reduce_bytes += f * op.output_bytes()
        elif flow is not None and flow.split_axis == "R" and f > 1:
            per = len(levels) // f
            n_parts = max(flow.base_tiles, 1)
            strip = -(-max(n_n // n_parts, v) // v) * v
            for n0 in range(0, n_n, strip):
                n1 = min(n0 + strip, n_n)
                parts = []
                for p in range(f):
                    lv = levels[p * per:(p + 1) * per]
                    w_tile = self._mm_block(view, op, cache, report, lv,
                                            0, m_n, n0 // v, n1 // v,
                                            fusion_level, config)
                    parts.append(a @ w_tile)
                out[:, n0:n1] = np.sum(np.stack(parts), axis=0)
            report.reduce_bytes += f * op.output_bytes()
        else:
            # naive output strips; channel-group strips are already aligned
            strip = min(STRIP_N, n_n)
            for n0 in range(0, n_n, strip):
                n1 = min(n0 + strip, n_n)
                w_tile = self._mm_block(view, op, cache, report, levels,
                                        0, m_n, n0 // v, n1 // v, fusion_level,
                                        config)
                out[:, n0:n1] = a @ w_tile
        report.global_bytes += 2 * a.size + 2 * out.size
        return out[0] if op.kind == GEMV else out

    def _mm_block(self, view, op, cache, report, levels, m0, m1, g0, g1,
                  fusion_level, config):
        rows, groups = _row_grid(m0, m1, g0, g1)
        books = view.books_of(levels, rows, groups)
        self._charge_books(report, cache, len(books))
        codes = view.codes_of(levels, rows, groups)
        self._charge_accesses(report, cache, codes)
        report.global_bytes += view.code_bytes(levels, rows, groups)
        w_tile = view.dequant(levels, rows, groups)
        self._charge_fusion(report, fusion_level, config, op, w_tile.size)
        return w_tile


def _softmax32(logits: np.ndarray) -> np.ndarray:
    z = logits - np.float32(logits.max())
    e = np.exp(z)
    return e / np.float32(e.sum())


def _config_of(quantized) -> VQConfig:
    if isinstance(quantized, QuantizedTensor):
        return quantized.config
    return quantized["k"].config


def _n_tensors(quantized) -> int:
    return 1 if isinstance(quantized, QuantizedTensor) else 2

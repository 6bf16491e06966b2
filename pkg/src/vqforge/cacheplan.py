"""Three-level codebook placement: registers / shared memory / global.

A frequency-reordered codebook is split by two boundaries: entries below
``n_reg`` live in thread-local registers (replicated per thread), entries in
``[n_reg, n_shared)`` in shared memory, and the rest stay in global memory.
Boundaries come from resource slack: the extra shared/register budget a
kernel can consume without lowering its occupancy.
"""

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .codec import Codebook
from .errors import CapacityError, ConfigError
from .gpumodel import GpuModel, KernelUsage
from .profiling import EntryPermutation
from .report import SimReport

LEVEL_REG = "reg"
LEVEL_SHARED = "shared"
LEVEL_GLOBAL = "global"


def compute_slack(kernel_usage: KernelUsage, model: GpuModel):
    """Maximal extra (shared bytes per block, register bytes per thread)
    that leaves the occupancy of `kernel_usage` unchanged.

    Each resource is maximized independently against the occupancy table,
    then the pair is validated jointly.
    """
    base = model.occupancy_of(kernel_usage)
    if base < 1:
        raise CapacityError(
            f"baseline usage {kernel_usage} is already infeasible on {model.name}"
        )

    # largest shared allocation (granularity-aligned) that keeps `base`
    shared_cap = min((model.shared_per_sm // base) // model.shared_granularity
                     * model.shared_granularity,
                     model.max_shared_per_block)
    shared_slack = max(shared_cap - kernel_usage.shared_bytes, 0)

    # largest per-thread register count that keeps `base`
    reg_total_cap = (model.regs_per_sm // base) // model.reg_granularity \
        * model.reg_granularity
    per_thread_cap = min(reg_total_cap // kernel_usage.threads_per_block,
                         model.max_regs_per_thread)
    reg_slack = max(per_thread_cap - kernel_usage.regs_per_thread, 0) * 4

    joint = model.occupancy(
        kernel_usage.shared_bytes + shared_slack,
        kernel_usage.regs_per_thread + reg_slack // 4,
        kernel_usage.threads_per_block,
    )
    if joint != base:
        raise CapacityError(
            f"slack validation failed on {model.name}: {joint} != {base}"
        )
    return shared_slack, reg_slack


@dataclass(frozen=True)
class CachePlan:
    """Entry-count boundaries realizing the three-level placement."""

    n_reg: int
    n_shared: int
    n_entries: int
    entry_bytes: int
    perm: Optional[EntryPermutation] = None

    def __post_init__(self):
        if not 0 <= self.n_reg <= self.n_shared <= self.n_entries:
            raise ConfigError(
                f"boundaries must satisfy 0 <= n_reg({self.n_reg}) <= "
                f"n_shared({self.n_shared}) <= entries({self.n_entries})"
            )

    @property
    def shared_span_bytes(self) -> int:
        return (self.n_shared - self.n_reg) * self.entry_bytes

    @property
    def reg_span_bytes(self) -> int:
        """Per-thread register bytes consumed by the register-resident span."""
        return self.n_reg * self.entry_bytes

    def level_of(self, index: int) -> str:
        if index < self.n_reg:
            return LEVEL_REG
        if index < self.n_shared:
            return LEVEL_SHARED
        return LEVEL_GLOBAL

    def levels_of(self, indices) -> np.ndarray:
        """Vectorized level_of: 0 = reg, 1 = shared, 2 = global."""
        idx = np.asarray(indices)
        return (idx >= self.n_reg).astype(np.int8) + (idx >= self.n_shared)

    def to_json(self) -> str:
        return json.dumps({
            "n_reg": self.n_reg,
            "n_shared": self.n_shared,
            "n_entries": self.n_entries,
            "entry_bytes": self.entry_bytes,
        })


def plan_cache(codebook: Codebook, histogram, slack,
               n_reg: Optional[int] = None,
               n_shared: Optional[int] = None,
               perm: Optional[EntryPermutation] = None) -> CachePlan:
    """Derive placement boundaries from slack, dividing each budget by the
    entry size. The codebook must already be frequency-reordered; pass
    explicit n_reg/n_shared to override the heuristic.
    """
    if histogram is not None and len(histogram.counts) == codebook.n_entries:
        diffs = np.diff(histogram.counts)
        if (diffs > 0).any():
            raise ConfigError(
                "histogram counts increase with entry index; reorder the "
                "codebook by frequency before planning"
            )
    shared_slack, reg_slack = slack
    entry_bytes = codebook.vector_size * 2
    k = codebook.n_entries
    if n_reg is None:
        n_reg = min(reg_slack // entry_bytes, k)
    if n_shared is None:
        n_shared = min(n_reg + shared_slack // entry_bytes, k)
    n_reg = int(min(n_reg, k))
    n_shared = int(min(max(n_shared, n_reg), k))
    return CachePlan(n_reg=n_reg, n_shared=n_shared, n_entries=k,
                     entry_bytes=entry_bytes, perm=perm)


@dataclass
class CachedCodebook:
    """Handle to one codebook placed across the hierarchy by a CachePlan.

    Creating (Load) or switching the handle charges a full load of the
    register- and shared-resident spans; every Access is recorded at the
    level the two boundary comparisons select.
    """

    codebook: Codebook
    plan: CachePlan
    counters: SimReport

    @property
    def entry_bytes(self) -> int:
        return self.plan.entry_bytes

    def shared_address(self, index) -> np.ndarray:
        """Byte offset of a shared-resident entry inside the shared span."""
        return (np.asarray(index) - self.plan.n_reg) * self.entry_bytes

    def charge_load(self):
        self.counters.global_to_shared_bytes += self.plan.shared_span_bytes
        self.counters.global_bytes += self.plan.reg_span_bytes


def cache_load(codebook: Codebook, plan: CachePlan,
               counters: Optional[SimReport] = None) -> CachedCodebook:
    """The Load primitive: place `codebook` per `plan`, charging the fill."""
    if plan.n_entries != codebook.n_entries:
        raise ConfigError(
            f"plan over {plan.n_entries} entries does not fit codebook "
            f"with {codebook.n_entries}"
        )
    if plan.entry_bytes != codebook.vector_size * 2:
        raise ConfigError("plan entry_bytes does not match codebook vectors")
    handle = CachedCodebook(codebook=codebook, plan=plan,
                            counters=counters if counters is not None else SimReport())
    handle.charge_load()
    return handle


def cache_access(handle: CachedCodebook, index: int):
    """The Access primitive: returns (entry values, placement level)."""
    k = handle.codebook.n_entries
    if not 0 <= index < k:
        raise ConfigError(f"entry index {index} out of range [0, {k})")
    level = handle.plan.level_of(index)
    if level == LEVEL_SHARED:
        handle.counters.shared_to_reg_bytes += handle.entry_bytes
    elif level == LEVEL_GLOBAL:
        handle.counters.global_bytes += handle.entry_bytes
    return handle.codebook.entries[index], level


def cache_access_bulk(handle: CachedCodebook, indices) -> np.ndarray:
    """Vectorized Access for a stream of indices; same traffic accounting."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= handle.codebook.n_entries):
        raise ConfigError("entry index out of range")
    levels = handle.plan.levels_of(idx)
    n_shared_hits = int((levels == 1).sum())
    n_global_hits = int((levels == 2).sum())
    handle.counters.shared_to_reg_bytes += n_shared_hits * handle.entry_bytes
    handle.counters.global_bytes += n_global_hits * handle.entry_bytes
    return handle.codebook.entries[idx]


def cache_switch(handle: CachedCodebook, new_codebook: Codebook) -> CachedCodebook:
    """The Switch primitive: reload the resident spans with a new codebook."""
    if new_codebook.entries.shape != handle.codebook.entries.shape:
        raise ConfigError(
            f"codebook shape {new_codebook.entries.shape} does not match "
            f"cached shape {handle.codebook.entries.shape}"
        )
    new_handle = CachedCodebook(codebook=new_codebook, plan=handle.plan,
                                counters=handle.counters)
    new_handle.charge_load()
    return new_handle

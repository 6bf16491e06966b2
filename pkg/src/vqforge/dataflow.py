"""Codebook-centric dataflow planning.

The planner identifies the axes along which the active codebook changes
(switch axes), parallelizes region-aligned along them, and splits the
reduction axis that intersects them by an adaptively solved factor. The
split trades duplicated codebook loads (fewer with a larger split) against
global-reduction traffic (more with a larger split):

    reduce traffic   = split_factor x output bytes
    codebook traffic = naive codebook bytes / split_factor

Block-parallelism is budget-preserving: the plan keeps the naive dataflow's
block count, re-allocating tiles from the naive tiling axis to the switch
axes, so the /split_factor identity is measurable in the simulator.
"""

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .codec import VQConfig
from .errors import ConfigError, ShapeError

GEMM = "gemm"
GEMV = "gemv"
ATTENTION = "attention_decode"

# naive tiling constants: tokens per attention block, output columns per
# GeMM/GeMV block
TILE_T = 128
STRIP_N = 128

_AXIS_ORDER = {
    GEMM: ("M", "N", "R"),
    GEMV: ("M", "N", "R"),
    ATTENTION: ("B", "H", "T", "C", "R"),
}


@dataclass(frozen=True)
class ComputeOp:
    """A compute primitive fused with dequantization.

    ``axes`` maps axis names to extents; ``required_layout`` is the element
    count per thread the primitive demands (2 for mma-style GeMM, 1 for
    element-wise GeMV / attention).
    """

    kind: str
    axes: dict
    reduce_axes: tuple
    required_layout: int
    activation_rows: int = 1

    def __post_init__(self):
        if self.kind not in (GEMM, GEMV, ATTENTION):
            raise ConfigError(f"unknown op kind {self.kind!r}")
        for ax in self.reduce_axes:
            if ax not in self.axes:
                raise ConfigError(f"reduce axis {ax!r} not among {tuple(self.axes)}")
        for name, extent in self.axes.items():
            if extent < 1:
                raise ConfigError(f"axis {name} has non-positive extent {extent}")

    @classmethod
    def gemm(cls, m: int, n: int, rows: int, residuals: int = 1) -> "ComputeOp":
        return cls(GEMM, {"M": m, "N": n, "R": residuals}, ("M", "R"), 2,
                   activation_rows=rows)

    @classmethod
    def gemv(cls, m: int, n: int, residuals: int = 1) -> "ComputeOp":
        return cls(GEMV, {"M": m, "N": n, "R": residuals}, ("M", "R"), 1)

    @classmethod
    def attention_decode(cls, b: int, h: int, t: int, c: int,
                         residuals: int = 1) -> "ComputeOp":
        reduce = ("C", "T") if residuals == 1 else ("C", "T", "R")
        return cls(ATTENTION, {"B": b, "H": h, "T": t, "C": c, "R": residuals},
                   reduce, 1)

    def output_bytes(self) -> int:
        """Final output size at 2 bytes per element."""
        if self.kind == ATTENTION:
            return 2 * self.axes["B"] * self.axes["H"] * self.axes["C"]
        return 2 * self.activation_rows * self.axes["N"]

    def logits_bytes(self) -> int:
        if self.kind != ATTENTION:
            raise ConfigError("logits only exist for attention")
        return 2 * self.axes["B"] * self.axes["H"] * self.axes["T"]


def switch_axes_of(config: VQConfig, op: ComputeOp) -> tuple:
    """Axes along which the active codebook changes, in canonical order."""
    axes = set()
    if config.residuals > 1:
        axes.add("R")
    kind = config.sharing.kind
    if kind == "whole":
        pass
    elif kind == "tile":
        if op.kind in (GEMM, GEMV):
            axes.update(("M", "N"))
        else:
            axes.update(("T", "C"))
    elif kind == "channel_group":
        if op.kind == ATTENTION:
            axes.update(("H", "C"))
        else:
            axes.add("N")
    else:  # pragma: no cover - Sharing validates kinds
        raise ConfigError(f"unknown sharing granularity {kind!r}")
    return tuple(ax for ax in _AXIS_ORDER[op.kind] if ax in axes)


def _divisors(n: int):
    small, large = [], []
    for d in range(1, int(math.isqrt(n)) + 1):
        if n % d == 0:
            small.append(d)
            if d != n // d:
                large.append(n // d)
    return small + large[::-1]


def _cost(f: int, output_size, codebook_traffic):
    if isinstance(output_size, int) and isinstance(codebook_traffic, int):
        return f * output_size + Fraction(codebook_traffic, f)
    return f * output_size + codebook_traffic / f


def solve_split_factor(output_size, codebook_traffic, extent: int) -> int:
    """Divisor f of `extent` minimizing f*output + codebook/f.

    The continuous optimum sqrt(codebook/output) seeds the search; the two
    neighboring divisors are evaluated exactly (the cost is convex in f, so
    the discrete optimum is one of them). Ties go to the smaller factor.
    """
    if output_size <= 0 or codebook_traffic <= 0 or extent <= 0:
        raise ConfigError("solve_split_factor needs positive inputs")
    divs = _divisors(extent)
    f_star = math.sqrt(codebook_traffic / output_size)
    lo = max((d for d in divs if d <= f_star), default=divs[0])
    hi = min((d for d in divs if d >= f_star), default=divs[-1])
    best = lo
    if hi != lo and _cost(hi, output_size, codebook_traffic) < \
            _cost(lo, output_size, codebook_traffic):
        best = hi
    return best


def region_extent(config: VQConfig, op: ComputeOp, axis: str) -> int:
    """Codebook regions along one switch axis."""
    sharing = config.sharing
    if axis == "R":
        return config.residuals
    if axis == "H":
        return op.axes["H"]
    if sharing.kind == "channel_group":
        if axis in ("C", "N"):
            return op.axes[axis] // sharing.group_width
    if sharing.kind == "tile":
        if axis in ("M", "T"):
            return -(-op.axes[axis] // sharing.tile_rows)
        if axis in ("N", "C"):
            return -(-op.axes[axis] // sharing.tile_cols)
    raise ConfigError(f"axis {axis!r} is not a switch axis for this sharing")


def naive_block_count(op: ComputeOp) -> int:
    if op.kind == ATTENTION:
        return op.axes["B"] * op.axes["H"] * max(op.axes["T"] // TILE_T, 1)
    return max(op.axes["N"] // STRIP_N, 1)


def _tensors_quantized(op: ComputeOp) -> int:
    return 2 if op.kind == ATTENTION else 1  # K and V vs the weight


def naive_books_per_block(config: VQConfig, op: ComputeOp) -> int:
    """Codebooks one naive-dataflow block touches, per quantized tensor."""
    sharing = config.sharing
    res = config.residuals
    if sharing.kind == "whole":
        return res
    if sharing.kind == "channel_group":
        if op.kind == ATTENTION:
            return (op.axes["C"] // sharing.group_width) * res
        return (min(STRIP_N, op.axes["N"]) // sharing.group_width) * res
    # tile sharing
    if op.kind == ATTENTION:
        t_span = -(-min(TILE_T, op.axes["T"]) // sharing.tile_rows)
        c_span = -(-op.axes["C"] // sharing.tile_cols)
        return t_span * c_span * res
    m_span = -(-op.axes["M"] // sharing.tile_rows)
    n_span = -(-min(STRIP_N, op.axes["N"]) // sharing.tile_cols)
    return m_span * n_span * res


def naive_codebook_traffic(config: VQConfig, op: ComputeOp) -> int:
    """Global->Shared codebook bytes of the naive SC dataflow."""
    book_bytes = config.n_entries * config.entry_bytes
    return (naive_block_count(op) * naive_books_per_block(config, op)
            * _tensors_quantized(op) * book_bytes)


@dataclass(frozen=True)
class DataflowPlan:
    """Region-aligned parallel tiling over switch axes plus the solved split.

    ``region_tasks`` counts codebook regions per switch axis (parallel tasks
    before splitting); ``split_axis``/``split_factor`` partition the
    switch-intersecting reduction; ``base_tiles`` is the residual parallelism
    kept on the naive tiling axis so the block budget matches the baseline.
    """

    op_kind: str
    switch_axes: tuple
    global_reduce_axes: tuple
    split_axis: str
    split_factor: int
    region_tasks: dict
    base_tiles: int
    temporal_axes: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.split_factor < 1:
            raise ConfigError("split_factor must be >= 1")
        if self.split_axis and self.region_tasks.get(self.split_axis, 1) \
                % self.split_factor != 0:
            raise ConfigError(
                f"split_factor {self.split_factor} does not divide the "
                f"{self.split_axis} extent {self.region_tasks.get(self.split_axis)}"
            )

    @property
    def has_global_reduce(self) -> bool:
        """A cross-block reduction pass is needed once the intersecting
        reduction is actually split."""
        return bool(self.global_reduce_axes) and self.split_factor > 1

    def to_json(self) -> str:
        return json.dumps({
            "op": self.op_kind,
            "switch_axes": list(self.switch_axes),
            "global_reduce_axes": list(self.global_reduce_axes),
            "split_axis": self.split_axis,
            "split_factor": self.split_factor,
            "region_tasks": self.region_tasks,
            "base_tiles": self.base_tiles,
            "temporal_axes": list(self.temporal_axes),
        })


def build_dataflow(config: VQConfig, op: ComputeOp, model=None,
                   split_factor: int = None) -> DataflowPlan:
    """Plan the codebook-centric decomposition for one op.

    Tiles region-aligned along the switch axes so each block loads only its
    own codebooks, splits the intersecting reduction by the solved factor,
    and pushes every other axis into the per-block temporal loop.
    """
    switch = switch_axes_of(config, op)
    reduce_set = set(op.reduce_axes)
    global_reduce = tuple(ax for ax in switch if ax in reduce_set)
    region_tasks = {ax: region_extent(config, op, ax) for ax in switch}

    split_axis = ""
    for ax in global_reduce:
        if region_tasks[ax] > 1:
            split_axis = ax
            break
    if not split_axis and global_reduce:
        split_axis = global_reduce[0]

    extent = region_tasks.get(split_axis, 1)
    if split_factor is None:
        if split_axis and extent > 1:
            out_bytes = op.logits_bytes() if (op.kind == ATTENTION and
                                              split_axis in ("C", "R")) \
                else op.output_bytes()
            cb_bytes = naive_codebook_traffic(config, op)
            split_factor = solve_split_factor(out_bytes, cb_bytes, extent)
        else:
            split_factor = 1
    else:
        if split_factor > extent:
            raise ShapeError(
                f"split factor {split_factor} exceeds the {split_axis or 'switch'}"
                f" extent {extent}"
            )
        if extent % split_factor != 0:
            raise ShapeError(
                f"split factor {split_factor} does not divide extent {extent}"
            )

    # parallelism kept on the naive tiling axis, unless that axis is itself
    # region-aligned by the switch tiling
    base_axis = "T" if op.kind == ATTENTION else "N"
    if base_axis in switch:
        base_tiles = 1
    else:
        per_task = max(op.axes[base_axis] // (TILE_T if op.kind == ATTENTION
                                              else STRIP_N), 1)
        base_tiles = max(per_task // split_factor, 1)
    temporal = tuple(ax for ax in _AXIS_ORDER[op.kind]
                     if ax in op.axes and ax not in switch)
    return DataflowPlan(
        op_kind=op.kind,
        switch_axes=switch,
        global_reduce_axes=global_reduce,
        split_axis=split_axis,
        split_factor=split_factor,
        region_tasks=region_tasks,
        base_tiles=base_tiles,
        temporal_axes=temporal,
        meta={"model": getattr(model, "name", None)},
    )

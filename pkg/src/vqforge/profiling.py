"""Offline access-frequency profiling and descending-frequency reordering.

Profiling counts how often each codebook entry is referenced by a quantized
tensor. Reordering relabels entries so the most frequent has index 0 and
rewrites the code stream through the permutation; reconstruction is
bit-identical, only the labels move.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .codec import Codebook, QuantizedTensor

HOT_SIGMA = 3.0


@dataclass
class AccessHistogram:
    """Per-entry access counts for one codebook (or one tile of accesses)."""

    counts: np.ndarray  # int64, length n_entries
    residual_level: int = 0
    region_id: int = 0

    def __post_init__(self):
        self.counts = np.ascontiguousarray(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def mu(self) -> float:
        return float(self.counts.mean())

    @property
    def sigma(self) -> float:
        # population std over all entries, zero-count entries included
        return float(self.counts.std())

    def hot_set(self, n_sigma: float = HOT_SIGMA) -> np.ndarray:
        """Entries accessed more often than mu + n_sigma * sigma."""
        return np.where(self.counts > self.mu + n_sigma * self.sigma)[0]

    def merge(self, other: "AccessHistogram") -> "AccessHistogram":
        if self.counts.shape != other.counts.shape:
            raise ValueError("histogram size mismatch")
        return AccessHistogram(self.counts + other.counts,
                               self.residual_level, self.region_id)

    __add__ = merge

    def to_json(self) -> str:
        return json.dumps({
            "residual_level": self.residual_level,
            "region_id": self.region_id,
            "mu": self.mu,
            "sigma": self.sigma,
            "hot_entries": self.hot_set().tolist(),
            "counts": self.counts.tolist(),
        })

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["entry", "count"])
            for i, c in enumerate(self.counts):
                w.writerow([i, int(c)])


@dataclass
class EntryPermutation:
    """Bijection old entry index -> new entry index, with its inverse."""

    perm: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_order(cls, order):
        """`order` lists old indices in their new positions."""
        order = np.ascontiguousarray(order, dtype=np.int64)
        perm = np.empty_like(order)
        perm[order] = np.arange(len(order))
        return cls(perm=perm, inverse=order)

    @classmethod
    def identity(cls, n):
        idx = np.arange(n, dtype=np.int64)
        return cls(perm=idx.copy(), inverse=idx.copy())

    def is_identity(self) -> bool:
        return bool((self.perm == np.arange(len(self.perm))).all())


def _codebook_codes(q: QuantizedTensor, level: int, region: int) -> np.ndarray:
    sel = q.region_ids == region
    return q.codes[level][sel]


def profile_accesses(q: QuantizedTensor, granularity="tensor", tile=None):
    """Access histograms for every codebook of `q`.

    granularity "tensor" returns one histogram per codebook (level-major,
    same order as q.codebooks). granularity "block-tile" returns, per
    codebook, the list of per-tile histograms for the given (rows, cols)
    tile spec; merging a codebook's tiles reproduces its tensor histogram.
    """
    if granularity == "tensor":
        hists = []
        k = q.config.n_entries
        regions = q.region_ids
        for level in range(q.config.residuals):
            for g in range(q.n_regions):
                counts = np.bincount(q.codes[level][regions == g], minlength=k)
                hists.append(AccessHistogram(counts, level, g))
        return hists
    if granularity == "block-tile":
        if tile is None:
            raise ValueError("block-tile granularity needs a tile=(rows, cols) spec")
        maps = []
        for level in range(q.config.residuals):
            for g in range(q.n_regions):
                grid = tile_hotness_map(q, q.codebook_for(level, g), tile)
                maps.append([AccessHistogram(row, level, g) for row in grid])
        return maps
    raise ValueError(f"unknown granularity {granularity!r}")


def reorder_by_frequency(codebook: Codebook, histogram: AccessHistogram,
                         q: QuantizedTensor):
    """Relabel one codebook in non-increasing access-frequency order.

    Returns (reordered codebook, rewritten tensor, permutation). Frequency
    ties break toward the lower original index. The rewritten tensor
    dequantizes bit-identically to the original.
    """
    k = codebook.n_entries
    if histogram.counts.shape != (k,):
        raise ValueError(
            f"histogram over {histogram.counts.shape[0]} entries does not match "
            f"codebook with {k} entries"
        )
    order = np.lexsort((np.arange(k), -histogram.counts))
    perm = EntryPermutation.from_order(order)

    new_book = Codebook(codebook.entries[order].copy(),
                        residual_level=codebook.residual_level,
                        region_id=codebook.region_id)
    level, region = codebook.residual_level, codebook.region_id
    new_codes = q.codes.copy()
    sel = q.region_ids == region
    new_codes[level][sel] = perm.perm[new_codes[level][sel]]

    books = list(q.codebooks)
    books[level * q.n_regions + region] = new_book
    new_q = QuantizedTensor(codes=new_codes, shape=q.shape, config=q.config,
                            codebooks=books, n_regions=q.n_regions)
    return new_book, new_q, perm


def reorder_all(q: QuantizedTensor, histograms=None):
    """Frequency-reorder every codebook of `q`; returns (tensor, perms)."""
    if histograms is None:
        histograms = profile_accesses(q)
    perms = []
    cur = q
    for level in range(q.config.residuals):
        for g in range(q.n_regions):
            book = cur.codebook_for(level, g)
            hist = histograms[level * q.n_regions + g]
            _, cur, perm = reorder_by_frequency(book, hist, cur)
            perms.append(perm)
    return cur, perms


def tile_hotness_map(q: QuantizedTensor, codebook: Codebook, tile_spec):
    """Per-tile access counts for one codebook.

    The tensor is viewed as 2-D (all leading axes folded into rows); tiles of
    ``tile_spec = (tile_rows, tile_cols)`` must tile that view exactly. Rows
    of the result are tiles in row-major order, columns are entries.
    """
    tile_r, tile_c = tile_spec
    v = q.config.vector_size
    rows = int(np.prod(q.shape[:-1]))
    cols = q.shape[-1]
    if rows % tile_r != 0 or cols % tile_c != 0:
        raise ValueError(
            f"tile spec {tile_spec} does not tile the {rows}x{cols} tensor view"
        )
    if tile_c % v != 0:
        raise ValueError(f"tile_cols {tile_c} must be a multiple of vector_size {v}")
    n_tr, n_tc = rows // tile_r, cols // tile_c
    gpr = cols // v
    sub_rows = np.arange(rows * gpr) // gpr
    sub_cols = (np.arange(rows * gpr) % gpr) * v
    tile_of_sub = (sub_rows // tile_r) * n_tc + sub_cols // tile_c

    level, region = codebook.residual_level, codebook.region_id
    sel = q.region_ids == region
    codes = q.codes[level][sel]
    tiles = tile_of_sub[sel]
    k = codebook.n_entries
    grid = np.zeros((n_tr * n_tc, k), dtype=np.int64)
    np.add.at(grid, (tiles, codes), 1)
    return grid


def hotness_map_csv(grid, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["tile"] + [f"entry_{i}" for i in range(grid.shape[1])])
        for t, row in enumerate(grid):
            w.writerow([t] + [int(c) for c in row])

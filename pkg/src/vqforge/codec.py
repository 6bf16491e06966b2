"""Vector-quantization codec: sub-vector split, codebook training, residual
quantization, index packing, and reconstruction.

A tensor is split along its last axis into sub-vectors of ``vector_size``
elements. Each sub-vector belongs to a fixed region (whole tensor, one tile
of the last two axes, or one channel group), and every (region, residual
level) pair owns a codebook. Codes are stored level-major, sub-vector
row-major, and pack into a contiguous little-endian bit stream.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import bitpack
from .errors import CodeRangeError, ConfigError, ShapeError

VALID_VECTOR_SIZES = (2, 4, 8, 16)
DEFAULT_KMEANS_ITERS = 25


@dataclass(frozen=True)
class Sharing:
    """Codebook-sharing granularity over a tensor.

    kind "whole": a single region.
    kind "tile": one region per tile of the last two axes (edge tiles may be
    partial); tiles are shared across any leading axes.
    kind "channel_group": one region per group of ``group_width`` trailing
    channels; on 4-D (B, H, T, C) tensors each head gets its own groups.
    """

    kind: str
    tile_rows: int = 0
    tile_cols: int = 0
    group_width: int = 0

    def __post_init__(self):
        if self.kind not in ("whole", "tile", "channel_group"):
            raise ConfigError(f"unknown sharing granularity {self.kind!r}")
        if self.kind == "tile" and (self.tile_rows <= 0 or self.tile_cols <= 0):
            raise ConfigError("tile sharing needs positive tile_rows/tile_cols")
        if self.kind == "channel_group" and self.group_width <= 0:
            raise ConfigError("channel_group sharing needs positive group_width")

    @classmethod
    def whole_tensor(cls):
        return cls("whole")

    @classmethod
    def per_tile(cls, rows, cols):
        return cls("tile", tile_rows=rows, tile_cols=cols)

    @classmethod
    def per_channel_group(cls, width):
        return cls("channel_group", group_width=width)


@dataclass(frozen=True)
class VQConfig:
    """The <vector_size, log2(entries), residuals> triple plus sharing."""

    vector_size: int
    log2_entries: int
    residuals: int
    sharing: Sharing = field(default_factory=Sharing.whole_tensor)

    def __post_init__(self):
        if self.vector_size not in VALID_VECTOR_SIZES:
            raise ConfigError(
                f"vector_size must be one of {VALID_VECTOR_SIZES}, got {self.vector_size}"
            )
        if not 1 <= self.log2_entries <= 16:
            raise ConfigError(f"log2_entries must be in [1, 16], got {self.log2_entries}")
        if self.residuals < 1:
            raise ConfigError(f"residuals must be >= 1, got {self.residuals}")
        if self.sharing.kind == "channel_group":
            if self.sharing.group_width % self.vector_size != 0:
                raise ConfigError("group_width must be a multiple of vector_size")
        if self.sharing.kind == "tile":
            if self.sharing.tile_cols % self.vector_size != 0:
                raise ConfigError("tile_cols must be a multiple of vector_size")

    @property
    def n_entries(self) -> int:
        return 1 << self.log2_entries

    @property
    def bits_per_element(self) -> float:
        return self.residuals * self.log2_entries / self.vector_size

    @property
    def entry_bytes(self) -> int:
        """Modeled footprint of one entry: FP16 semantics, 2 bytes/element."""
        return self.vector_size * 2


def compression_ratio(config: VQConfig) -> float:
    """Compressed size as a fraction of FP16 storage."""
    return config.residuals * config.log2_entries / (config.vector_size * 16)


@dataclass
class Codebook:
    """One table of centroid vectors for a (region, residual level) pair."""

    entries: np.ndarray  # (n_entries, vector_size) float32
    residual_level: int
    region_id: int

    def __post_init__(self):
        self.entries = np.ascontiguousarray(self.entries, dtype=np.float32)
        if self.entries.ndim != 2:
            raise ShapeError("codebook entries must be a 2-D matrix")

    @property
    def n_entries(self) -> int:
        return self.entries.shape[0]

    @property
    def vector_size(self) -> int:
        return self.entries.shape[1]


def subvector_count(shape, config: VQConfig) -> int:
    n_elem = int(np.prod(shape))
    if shape[-1] % config.vector_size != 0:
        raise ShapeError(
            f"last axis {shape[-1]} not divisible by vector_size {config.vector_size}"
        )
    return n_elem // config.vector_size


def region_layout(shape, config: VQConfig):
    """Region id of every sub-vector, in row-major sub-vector order.

    Returns (n_regions, int32 array of length subvector_count).
    """
    shape = tuple(int(s) for s in shape)
    cols = shape[-1]
    v = config.vector_size
    if cols % v != 0:
        raise ShapeError(f"last axis {cols} not divisible by vector_size {v}")
    gpr = cols // v  # sub-vectors per row
    rows = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
    sharing = config.sharing

    if sharing.kind == "whole":
        return 1, np.zeros(rows * gpr, dtype=np.int32)

    col_start = np.tile(np.arange(gpr, dtype=np.int64) * v, rows)
    row_idx = np.repeat(np.arange(rows, dtype=np.int64), gpr)

    if sharing.kind == "channel_group":
        gw = sharing.group_width
        if cols % gw != 0:
            raise ShapeError(f"last axis {cols} not divisible by group_width {gw}")
        n_groups = cols // gw
        group = col_start // gw
        if len(shape) == 4:
            b, h, t, _ = shape
            head = (row_idx // t) % h
            region = head * n_groups + group
            return h * n_groups, region.astype(np.int32)
        return n_groups, group.astype(np.int32)

    # tile sharing over the last two axes, shared across leading axes
    if len(shape) < 2:
        raise ShapeError("tile sharing requires at least 2-D tensors")
    tile_r, tile_c = sharing.tile_rows, sharing.tile_cols
    r2 = shape[-2]
    n_tc = -(-cols // tile_c)
    n_tr = -(-r2 // tile_r)
    local_row = row_idx % r2
    region = (local_row // tile_r) * n_tc + col_start // tile_c
    return n_tr * n_tc, region.astype(np.int32)


@dataclass
class QuantizedTensor:
    """Codes plus the codebooks needed to reconstruct a tensor.

    ``codes[r, s]`` is the level-r code of sub-vector s; codebooks are kept
    level-major (index = level * n_regions + region).
    """

    codes: np.ndarray  # (residuals, n_subvectors) int32
    shape: tuple
    config: VQConfig
    codebooks: list
    n_regions: int

    def __post_init__(self):
        self.codes = np.ascontiguousarray(self.codes, dtype=np.int32)
        self.shape = tuple(int(s) for s in self.shape)
        expect = subvector_count(self.shape, self.config)
        if self.codes.shape != (self.config.residuals, expect):
            raise ShapeError(
                f"codes shape {self.codes.shape} != ({self.config.residuals}, {expect})"
            )
        if len(self.codebooks) != self.config.residuals * self.n_regions:
            raise ShapeError(
                f"expected {self.config.residuals * self.n_regions} codebooks, "
                f"got {len(self.codebooks)}"
            )

    def codebook_for(self, level: int, region: int) -> Codebook:
        return self.codebooks[level * self.n_regions + region]

    @property
    def total_codes(self) -> int:
        return self.codes.size

    @property
    def packed_bit_length(self) -> int:
        return self.total_codes * self.config.log2_entries

    def packed_codes(self) -> bytes:
        """Level-major contiguous bit stream, byte-padded at the end only."""
        return bitpack.pack_indices(self.codes, self.config.log2_entries)

    @property
    def region_ids(self) -> np.ndarray:
        _, regions = region_layout(self.shape, self.config)
        return regions


def split_subvectors(data, config: VQConfig) -> np.ndarray:
    """View of `data` as (n_subvectors, vector_size) float32, row-major."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.shape[-1] % config.vector_size != 0:
        raise ShapeError(
            f"last axis {arr.shape[-1]} not divisible by vector_size {config.vector_size}"
        )
    return arr.reshape(-1, config.vector_size)


def _nearest(points, centroids):
    """Index of the closest centroid per point; ties go to the lowest index."""
    pts = points.astype(np.float64)
    cen = centroids.astype(np.float64)
    c_norm = (cen * cen).sum(axis=1)
    out = np.empty(len(pts), dtype=np.int32)
    chunk = max(1, (1 << 22) // max(1, len(cen)))
    for lo in range(0, len(pts), chunk):
        block = pts[lo : lo + chunk]
        d = block @ cen.T
        d *= -2.0
        d += c_norm
        d += (block * block).sum(axis=1, keepdims=True)
        out[lo : lo + chunk] = np.argmin(d, axis=1)
    return out


def _kmeans_pp_init(points, k, rng, seed_centroids=None):
    """k-means++ seeding; optionally starts from given centroids (nesting)."""
    centroids = []
    if seed_centroids is not None:
        centroids = [c for c in np.asarray(seed_centroids, dtype=np.float64)]
    if not centroids:
        centroids.append(points[rng.integers(len(points))].astype(np.float64))
    cen = np.array(centroids)
    d2 = ((points[:, None, :] - cen[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    while len(centroids) < k:
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(len(points))
        else:
            idx = rng.choice(len(points), p=d2 / total)
        c = points[idx].astype(np.float64)
        centroids.append(c)
        d2 = np.minimum(d2, ((points - c) ** 2).sum(axis=1))
    return np.array(centroids)


def _kmeans(points, k, rng, iters=DEFAULT_KMEANS_ITERS, seed_centroids=None):
    """Lloyd's algorithm with k-means++ init and farthest-point reseeding."""
    pts = points.astype(np.float64)
    n = len(pts)
    if k >= n:
        # every point becomes a centroid; pad with duplicates
        reps = -(-k // n)
        cen = np.tile(pts, (reps, 1))[:k]
        return cen.astype(np.float32)
    cen = _kmeans_pp_init(pts, k, rng, seed_centroids)
    for _ in range(iters):
        assign = _nearest(pts, cen)
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(cen)
        np.add.at(sums, assign, pts)
        nonempty = counts > 0
        new_cen = cen.copy()
        new_cen[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            # reseed each empty cluster at the point farthest from its centroid
            dist = ((pts - new_cen[assign]) ** 2).sum(axis=1)
            order = np.argsort(-dist)
            for slot, j in zip(np.where(~nonempty)[0], order):
                new_cen[slot] = pts[j]
        if np.allclose(new_cen, cen, rtol=0, atol=1e-12):
            cen = new_cen
            break
        cen = new_cen
    return cen.astype(np.float32)


def _region_rng(seed, region, level):
    return np.random.default_rng(np.random.SeedSequence((seed, region, level)))


def train_codebooks(data, config: VQConfig, seed: int, iters=DEFAULT_KMEANS_ITERS,
                    init_codebooks=None):
    """Train one codebook per (region, residual level).

    Level r > 0 is trained on the residuals left after greedily assigning
    levels 0..r-1. Deterministic for a fixed seed, and per-level seeds do not
    depend on the total residual count, so extending ``residuals`` leaves the
    earlier levels bit-identical.

    ``init_codebooks`` may hold a previous training at a smaller entry count
    (same layout); its entries seed k-means++ so that entry counts nest.
    """
    points = split_subvectors(data, config)
    n_regions, regions = region_layout(data.shape, config)
    k = config.n_entries

    books = [None] * (config.residuals * n_regions)
    for g in range(n_regions):
        sel = np.where(regions == g)[0]
        if sel.size == 0:
            raise ShapeError(f"region {g} received no sub-vectors")
        residual = points[sel].astype(np.float64)
        distinct = len(np.unique(residual, axis=0))
        if k > distinct:
            warnings.warn(
                f"region {g}: {k} entries requested but only {distinct} distinct "
                "sub-vectors; duplicate centroids will appear",
                stacklevel=2,
            )
        for r in range(config.residuals):
            seed_cen = None
            if init_codebooks is not None:
                seed_cen = init_codebooks[r * n_regions + g].entries
            rng = _region_rng(seed, g, r)
            cen = _kmeans(residual, k, rng, iters=iters, seed_centroids=seed_cen)
            books[r * n_regions + g] = Codebook(cen, residual_level=r, region_id=g)
            assign = _nearest(residual, cen)
            residual = residual - cen[assign].astype(np.float64)
    return books


def _check_codebooks(codebooks, config: VQConfig, n_regions: int):
    if len(codebooks) != config.residuals * n_regions:
        raise ConfigError(
            f"codebook count {len(codebooks)} does not match "
            f"{config.residuals} residuals x {n_regions} regions"
        )
    for cb in codebooks:
        if cb.n_entries != config.n_entries or cb.vector_size != config.vector_size:
            raise ConfigError(
                f"codebook shape {cb.entries.shape} incompatible with config "
                f"({config.n_entries}, {config.vector_size})"
            )


def quantize(data, codebooks, config: VQConfig) -> QuantizedTensor:
    """Assign every sub-vector its nearest-centroid code chain."""
    points = split_subvectors(data, config)
    n_regions, regions = region_layout(data.shape, config)
    _check_codebooks(codebooks, config, n_regions)

    codes = np.zeros((config.residuals, len(points)), dtype=np.int32)
    for g in range(n_regions):
        sel = np.where(regions == g)[0]
        residual = points[sel].astype(np.float64)
        for r in range(config.residuals):
            cen = codebooks[r * n_regions + g].entries
            assign = _nearest(residual, cen)
            codes[r, sel] = assign
            residual = residual - cen[assign].astype(np.float64)
    return QuantizedTensor(
        codes=codes,
        shape=np.asarray(data).shape,
        config=config,
        codebooks=list(codebooks),
        n_regions=n_regions,
    )


def dequantize(q: QuantizedTensor) -> np.ndarray:
    """Reconstruct: per level, look up entries; accumulate; concatenate."""
    config = q.config
    regions = q.region_ids
    k = config.n_entries
    # stack all entry tables so one gather per level reconstructs everything
    stacked = np.concatenate([cb.entries for cb in q.codebooks], axis=0)
    recon = np.zeros((q.codes.shape[1], config.vector_size), dtype=np.float32)
    for r in range(config.residuals):
        level_codes = q.codes[r]
        if level_codes.min() < 0 or level_codes.max() >= k:
            bad = int(level_codes[(level_codes < 0) | (level_codes >= k)][0])
            raise CodeRangeError(
                f"code out of range: {bad} not in [0, {k}) at residual level {r}"
            )
        offset = (r * q.n_regions + regions.astype(np.int64)) * k
        recon += stacked[offset + level_codes]
    return recon.reshape(q.shape)


def train_and_quantize(data, config: VQConfig, seed: int, iters=DEFAULT_KMEANS_ITERS):
    """Convenience: train codebooks on `data` and quantize it."""
    books = train_codebooks(data, config, seed, iters=iters)
    return quantize(data, books, config)

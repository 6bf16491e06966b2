"""Seeded synthetic inputs for benchmarks, verification, and demos.

Benchmark runs exercise traffic counters, not codec accuracy, so quantized
tensors can be built directly from random codebooks and codes; no k-means
training is needed. Code streams can follow a Zipf rank distribution to mimic
the skewed entry popularity that motivates the codebook cache.
"""

import numpy as np

from .codec import Codebook, QuantizedTensor, VQConfig, region_layout, subvector_count


def synthetic_tensor(shape, seed: int, scale: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (rng.normal(size=shape) * scale).astype(np.float32)


def zipf_probabilities(n_entries: int, s: float = 1.2) -> np.ndarray:
    ranks = np.arange(1, n_entries + 1, dtype=np.float64)
    p = ranks ** -s
    return p / p.sum()


def zipf_codes(count: int, n_entries: int, s: float = 1.2, seed: int = 0,
               shuffle_ranks: bool = False) -> np.ndarray:
    """Codes drawn with Zipf(s) popularity; rank 0 is the hottest entry
    unless ``shuffle_ranks`` scatters popularity across entry ids."""
    rng = np.random.default_rng(seed)
    p = zipf_probabilities(n_entries, s)
    if shuffle_ranks:
        p = p[rng.permutation(n_entries)]
    return rng.choice(n_entries, size=count, p=p).astype(np.int32)


def synthetic_quantized(shape, config: VQConfig, seed: int,
                        scale: float = 0.1,
                        working_entries: int = None,
                        zipf_s: float = None) -> QuantizedTensor:
    """Random codebooks plus a random (optionally Zipf-skewed) code stream.

    ``working_entries`` restricts codes to the first k entries, modeling
    lookups that only ever touch a small working set of a large table.
    """
    rng = np.random.default_rng(seed)
    n_regions, _ = region_layout(shape, config)
    books = [
        Codebook(
            (rng.normal(size=(config.n_entries, config.vector_size)) * scale
             ).astype(np.float32),
            residual_level=level,
            region_id=g,
        )
        for level in range(config.residuals)
        for g in range(n_regions)
    ]
    n_sub = subvector_count(shape, config)
    hi = working_entries or config.n_entries
    if zipf_s is not None:
        codes = zipf_codes(config.residuals * n_sub, hi, s=zipf_s,
                           seed=seed + 1).reshape(config.residuals, n_sub)
    else:
        codes = rng.integers(0, hi, size=(config.residuals, n_sub),
                             dtype=np.int32)
    return QuantizedTensor(codes=np.asarray(codes, dtype=np.int32),
                           shape=tuple(shape), config=config,
                           codebooks=books, n_regions=n_regions)

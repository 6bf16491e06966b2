import numpy as np
import pytest



@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_quantized(shape, config, seed, scale=0.1, zipf_s=None, working=None):
    from vqforge.synth import synthetic_quantized

    return synthetic_quantized(shape, config, seed, scale=scale,
                               zipf_s=zipf_s, working_entries=working)


def brute_force_nearest(points, centroids):
    """Independent scalar nearest-centroid scan (float64, ties to low index)."""
    out = np.empty(len(points), dtype=np.int64)
    for i, p in enumerate(np.asarray(points, dtype=np.float64)):
        d = ((np.asarray(centroids, dtype=np.float64) - p) ** 2).sum(axis=1)
        out[i] = int(np.argmin(d))
    return out


def brute_force_residual_codes(points, books_by_level):
    """Greedy residual assignment, one level at a time, scalar reference."""
    residual = np.asarray(points, dtype=np.float64).copy()
    codes = []
    for book in books_by_level:
        cen = np.asarray(book, dtype=np.float64)
        level = brute_force_nearest(residual, cen)
        codes.append(level)
        residual -= cen[level]
    return np.stack(codes)

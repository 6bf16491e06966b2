"""Walk through the vector-quantization pipeline on a small tensor.

A 16-dimensional vector under VQ<4,2,2> splits into four 4-element
sub-vectors, each replaced by a 2-bit index into a trained codebook, twice
(the second round encodes the residuals). Reconstruction looks the indices
back up and accumulates the two levels.
"""

import numpy as np

from vqforge import (
    VQConfig,
    compression_ratio,
    dequantize,
    quantize,
    train_and_quantize,
    train_codebooks,
)

rng = np.random.default_rng(42)

print("=== VQ<4,2,2> on 16-dim vectors ===")
data = rng.normal(size=(256, 16)).astype(np.float32)
cfg = VQConfig(vector_size=4, log2_entries=2, residuals=2)
books = train_codebooks(data, cfg, seed=0)
print(f"trained {len(books)} codebooks of shape {books[0].entries.shape} "
      "(one per residual level)")

q = quantize(data, books, cfg)
print(f"codes: {q.codes.shape} -> 4 sub-spaces x 256 rows x 2 levels")
print(f"packed: {q.packed_bit_length} bits = {len(q.packed_codes())} bytes "
      f"({cfg.bits_per_element} bits/element)")

recon = dequantize(q)
print(f"reconstruction MSE: {((recon - data) ** 2).mean():.4f}")

print("\n=== compression ratios vs FP16 ===")
for name, c in [("QuiP#-4", VQConfig(8, 16, 2)), ("AQLM-3", VQConfig(8, 12, 2)),
                ("GPTVQ-2", VQConfig(4, 8, 1)), ("CQ-4", VQConfig(2, 8, 1)),
                ("CQ-2", VQConfig(4, 8, 1))]:
    print(f"  {name:<8} VQ<{c.vector_size},{c.log2_entries},{c.residuals}>"
          f"  -> {compression_ratio(c):.4%}")

print("\n=== more residuals / entries -> lower error ===")
for res in (1, 2, 3):
    q = train_and_quantize(data, VQConfig(4, 4, res), seed=1)
    print(f"  residuals={res}: MSE {((dequantize(q) - data) ** 2).mean():.5f}")
for log2e in (2, 4, 6):
    q = train_and_quantize(data, VQConfig(4, log2e, 1), seed=1)
    print(f"  entries=2^{log2e}: MSE {((dequantize(q) - data) ** 2).mean():.5f}")

print("\n=== exact data round-trips exactly ===")
vocab = rng.normal(size=(16, 4)).astype(np.float32)
exact = vocab[rng.integers(0, 16, size=256)].reshape(64, 16)
q = train_and_quantize(exact, VQConfig(4, 4, 1), seed=2)
print(f"  max abs error: {np.abs(dequantize(q) - exact).max()}")

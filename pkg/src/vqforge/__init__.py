"""vqforge: vector-quantization codec, codebook cache planning, and a
counter-level simulator for fused dequantization-compute kernels."""

from .codec import (
    Codebook,
    QuantizedTensor,
    Sharing,
    VQConfig,
    compression_ratio,
    dequantize,
    quantize,
    train_and_quantize,
    train_codebooks,
)

__version__ = "0.1.0"

__all__ = [
    "Codebook",
    "QuantizedTensor",
    "Sharing",
    "VQConfig",
    "compression_ratio",
    "dequantize",
    "quantize",
    "train_and_quantize",
    "train_codebooks",
    "__version__",
]

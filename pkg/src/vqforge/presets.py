"""Built-in definitions of the five supported VQ configurations.

Each preset carries the <vector_size, entries, residuals> triple, its
codebook-sharing granularity, the tensor it targets, and the per-op shuffle
counts and per-block codebook footprints the planner reproduces. User-defined
variants load from TOML with the same fields.
"""

import sys
from dataclasses import dataclass, field
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .codec import Sharing, VQConfig
from .errors import ConfigError


@dataclass(frozen=True)
class Preset:
    name: str
    config: VQConfig
    target: str  # "weight" | "kv_cache"
    expected_shuffles: dict = field(default_factory=dict)
    codebook_bytes_per_block: Optional[int] = None
    working_entries: Optional[int] = None  # lookup working set, if smaller

    @property
    def effective_entries(self) -> int:
        return self.working_entries or self.config.n_entries


def _make_presets():
    presets = {}
    # QuiP#-4: lattice codebook modeled as a plain 2^16-entry lookup; only a
    # 256-entry working set is ever touched per dequantization.
    presets["quip4"] = Preset(
        name="quip4",
        config=VQConfig(8, 16, 2),
        target="weight",
        expected_shuffles={"gemm": 3, "gemv": 7},
        codebook_bytes_per_block=2 * 1024,
        working_entries=256,
    )
    presets["aqlm3"] = Preset(
        name="aqlm3",
        config=VQConfig(8, 12, 2),
        target="weight",
        expected_shuffles={"gemm": 3, "gemv": 7},
        codebook_bytes_per_block=128 * 1024,
    )
    presets["gptvq2"] = Preset(
        name="gptvq2",
        config=VQConfig(4, 8, 1, Sharing.per_tile(256, 256)),
        target="weight",
        expected_shuffles={"gemm": 1, "gemv": 3},
        codebook_bytes_per_block=32 * 1024,
    )
    presets["cq4"] = Preset(
        name="cq4",
        config=VQConfig(2, 8, 1, Sharing.per_channel_group(2)),
        target="kv_cache",
        expected_shuffles={"attention_decode": 1},
        codebook_bytes_per_block=64 * 1024,
    )
    presets["cq2"] = Preset(
        name="cq2",
        config=VQConfig(4, 8, 1, Sharing.per_channel_group(4)),
        target="kv_cache",
        expected_shuffles={"attention_decode": 3},
        codebook_bytes_per_block=64 * 1024,
    )
    return presets


PRESETS = _make_presets()

# Table order used by reports: (name, compression ratio vs FP16)
PRESET_ORDER = ("quip4", "aqlm3", "gptvq2", "cq4", "cq2")


def load_preset(name: str) -> Preset:
    """Look up a built-in preset, or load one from a TOML file path."""
    key = name.lower()
    if key in PRESETS:
        return PRESETS[key]
    if name.endswith(".toml"):
        return preset_from_toml(name)
    raise ConfigError(
        f"unknown preset {name!r}; built-ins: {', '.join(PRESET_ORDER)}"
    )


def preset_from_toml(path) -> Preset:
    with open(path, "rb") as f:
        data = tomllib.load(f)
    sharing_spec = data.get("sharing", {"kind": "whole"})
    kind = sharing_spec.get("kind", "whole")
    if kind == "whole":
        sharing = Sharing.whole_tensor()
    elif kind == "tile":
        sharing = Sharing.per_tile(sharing_spec["rows"], sharing_spec["cols"])
    elif kind == "channel_group":
        sharing = Sharing.per_channel_group(sharing_spec["group_width"])
    else:
        raise ConfigError(f"unknown sharing kind {kind!r} in {path}")
    config = VQConfig(
        vector_size=data["vector_size"],
        log2_entries=data["log2_entries"],
        residuals=data.get("residuals", 1),
        sharing=sharing,
    )
    return Preset(
        name=data.get("name", str(path)),
        config=config,
        target=data.get("target", "weight"),
        expected_shuffles=data.get("expected_shuffles", {}),
        codebook_bytes_per_block=data.get("codebook_bytes_per_block"),
        working_entries=data.get("working_entries"),
    )

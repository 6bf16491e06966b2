"""GPU resource model with a piecewise-constant occupancy function.

Models are plain TOML files (see ``models/``). Occupancy follows the usual
resource-partitioning rules: shared memory rounds up to an allocation
granule, registers round up per block, and the result is the tightest of the
shared / register / thread / block limits. It is monotonically non-increasing
in every usage argument.
"""

import os
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

MODEL_DIR_ENV = "FORGE_MODEL_DIR"
_BUILTIN_DIR = Path(__file__).parent / "models"


def _round_up(value: int, granule: int) -> int:
    return -(-value // granule) * granule


@dataclass(frozen=True)
class KernelUsage:
    """Baseline resource usage of a compute kernel, before codebook caching."""

    shared_bytes: int
    regs_per_thread: int
    threads_per_block: int


@dataclass(frozen=True)
class GpuModel:
    name: str
    shared_per_sm: int  # bytes
    max_shared_per_block: int  # bytes
    regs_per_sm: int  # 4-byte registers
    max_regs_per_thread: int
    max_blocks_per_sm: int
    max_threads_per_sm: int
    sm_count: int
    warp_size: int = 32
    banks: int = 32
    bank_width: int = 4  # bytes per bank word
    shared_granularity: int = 1024
    reg_granularity: int = 256

    def occupancy(self, shared_bytes: int, regs_per_thread: int,
                  threads_per_block: int) -> int:
        """Resident blocks per SM for the given usage; 0 when infeasible."""
        if threads_per_block <= 0:
            raise ConfigError("threads_per_block must be positive")
        if shared_bytes < 0 or regs_per_thread < 0:
            raise ConfigError("resource usage cannot be negative")
        if threads_per_block > self.max_threads_per_sm:
            return 0
        if shared_bytes > self.max_shared_per_block:
            return 0
        if regs_per_thread > self.max_regs_per_thread:
            return 0
        blocks = min(self.max_blocks_per_sm,
                     self.max_threads_per_sm // threads_per_block)
        if shared_bytes > 0:
            alloc = _round_up(shared_bytes, self.shared_granularity)
            blocks = min(blocks, self.shared_per_sm // alloc)
        if regs_per_thread > 0:
            total = _round_up(regs_per_thread * threads_per_block,
                              self.reg_granularity)
            blocks = min(blocks, self.regs_per_sm // total)
        return max(blocks, 0)

    def occupancy_of(self, usage: KernelUsage) -> int:
        return self.occupancy(usage.shared_bytes, usage.regs_per_thread,
                              usage.threads_per_block)


def load_gpu_model(name: str) -> GpuModel:
    """Load a model by name (or path). FORGE_MODEL_DIR is searched first."""
    candidates = []
    p = Path(name)
    if p.suffix == ".toml":
        candidates.append(p)
    env_dir = os.environ.get(MODEL_DIR_ENV)
    if env_dir:
        candidates.append(Path(env_dir) / f"{name}.toml")
    candidates.append(_BUILTIN_DIR / f"{name}.toml")
    for path in candidates:
        if path.is_file():
            with open(path, "rb") as f:
                data = tomllib.load(f)
            data.setdefault("name", path.stem)
            return GpuModel(**data)
    raise ConfigError(f"no GPU model named {name!r} (searched {candidates})")


def builtin_models():
    return sorted(p.stem for p in _BUILTIN_DIR.glob("*.toml"))

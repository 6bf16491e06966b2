"""Counter accumulator shared by the cache layer and the simulator."""

import csv
import json
from dataclasses import asdict, dataclass, field

SCHEMA_VERSION = 1

CSV_COLUMNS = [
    "variant",
    "bank_conflicts",
    "global_to_shared_bytes",
    "shared_to_reg_bytes",
    "staged_dequant_bytes",
    "global_bytes",
    "reduce_bytes",
    "occupancy",
    "quant_invocations",
]


@dataclass
class SimReport:
    """Traffic and conflict counters; additive across simulated blocks.

    ``shared_to_reg_bytes`` covers every shared-memory read back to
    registers; ``staged_dequant_bytes`` is the subset spent re-reading
    dequantized data staged by shared-memory fusion (zero under register
    fusion).
    """

    bank_conflicts: int = 0
    global_to_shared_bytes: int = 0
    shared_to_reg_bytes: int = 0
    staged_dequant_bytes: int = 0
    global_bytes: int = 0
    reduce_bytes: int = 0
    occupancy: int = 0
    quant_invocations: int = 0
    meta: dict = field(default_factory=dict)

    def merge(self, other: "SimReport") -> "SimReport":
        """Counter sum; occupancy is a per-launch property, kept from self."""
        return SimReport(
            bank_conflicts=self.bank_conflicts + other.bank_conflicts,
            global_to_shared_bytes=self.global_to_shared_bytes + other.global_to_shared_bytes,
            shared_to_reg_bytes=self.shared_to_reg_bytes + other.shared_to_reg_bytes,
            staged_dequant_bytes=self.staged_dequant_bytes + other.staged_dequant_bytes,
            global_bytes=self.global_bytes + other.global_bytes,
            reduce_bytes=self.reduce_bytes + other.reduce_bytes,
            occupancy=self.occupancy or other.occupancy,
            quant_invocations=self.quant_invocations + other.quant_invocations,
            meta=dict(self.meta),
        )

    def validate(self):
        for name in ("bank_conflicts", "global_to_shared_bytes",
                     "shared_to_reg_bytes", "staged_dequant_bytes",
                     "global_bytes", "reduce_bytes", "occupancy",
                     "quant_invocations"):
            if getattr(self, name) < 0:
                raise ValueError(f"counter {name} went negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def write_reports_csv(rows, path):
    """rows: iterable of (variant_name, SimReport)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for name, rep in rows:
            w.writerow([
                name,
                rep.bank_conflicts,
                rep.global_to_shared_bytes,
                rep.shared_to_reg_bytes,
                rep.staged_dequant_bytes,
                rep.global_bytes,
                rep.reduce_bytes,
                rep.occupancy,
                rep.quant_invocations,
            ])

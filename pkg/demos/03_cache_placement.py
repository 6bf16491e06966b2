"""Place codebook entries across registers / shared memory / global memory.

The trick is spending only resource slack: extra shared memory and registers
a kernel can take without lowering how many blocks fit on an SM. Dividing
each slack by the entry size gives the two placement boundaries.
"""

import numpy as np

from vqforge.cacheplan import (
    CachePlan,
    cache_access,
    cache_load,
    cache_switch,
    compute_slack,
    plan_cache,
)
from vqforge.codec import Codebook
from vqforge.gpumodel import KernelUsage, load_gpu_model
from vqforge.report import SimReport
from vqforge.sim import codebook_stream_conflicts
from vqforge.synth import zipf_codes

model = load_gpu_model("rtx4090")
usage = KernelUsage(shared_bytes=8192, regs_per_thread=32, threads_per_block=256)

print("=== occupancy and slack ===")
base = model.occupancy_of(usage)
print(f"kernel usage {usage.shared_bytes} B shared, {usage.regs_per_thread} "
      f"regs/thread, {usage.threads_per_block} threads -> {base} blocks/SM")
shared_slack, reg_slack = compute_slack(usage, model)
print(f"free without losing occupancy: {shared_slack} B shared, "
      f"{reg_slack} B/thread of registers")

print("\n=== boundaries = slack / entry size ===")
# an AQLM-style 4096-entry book of 8-wide vectors: too big for shared memory
entries = np.random.default_rng(0).normal(size=(4096, 8)).astype(np.float32)
book = Codebook(entries, 0, 0)
plan = plan_cache(book, None, (shared_slack, reg_slack))
print(f"entry = {plan.entry_bytes} B -> n_reg={plan.n_reg}, "
      f"n_shared={plan.n_shared} of {plan.n_entries}")
occ = model.occupancy(usage.shared_bytes + plan.shared_span_bytes,
                      usage.regs_per_thread + plan.reg_span_bytes // 4,
                      usage.threads_per_block)
print(f"occupancy with the cache resident: {occ} blocks/SM (unchanged)")

print("\n=== Load / Access / Switch ===")
counters = SimReport()
handle = cache_load(book, plan, counters)
print(f"Load charged {counters.global_to_shared_bytes} B Global->Shared")
for idx in (0, plan.n_reg, plan.n_shared - 1, plan.n_shared, 4095):
    _, level = cache_access(handle, idx)
    print(f"  Access(entry {idx:>4}) -> {level}")
handle = cache_switch(handle, book)
print(f"Switch reloaded the resident span: {counters.global_to_shared_bytes} B total")

print("\n=== registers kill bank conflicts for hot entries ===")
stream = zipf_codes(50_000, 256, s=1.2, seed=0)
for n_reg in (0, 1, 2, 4, 8, 16):
    p = CachePlan(n_reg, 256, 256, entry_bytes=8)
    c = codebook_stream_conflicts(stream, p)
    bar = "#" * (c // 2500)
    print(f"  n_reg={n_reg:>2}: {c:>6} conflicts {bar}")

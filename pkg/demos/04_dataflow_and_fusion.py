"""Plan the codebook-centric dataflow and the register-level fusion.

Dataflow: parallelize along the axes where codebooks switch, so each block
loads only its own codebook; when that axis is also a reduction, a solved
split factor balances duplicated codebook loads against global-reduction
traffic. Fusion: a thread remap plus xor shuffles hand dequantized registers
straight to their consumers when few exchanges suffice.
"""

from vqforge.codec import Sharing, VQConfig
from vqforge.dataflow import ComputeOp, build_dataflow, solve_split_factor, switch_axes_of
from vqforge.fusion import (
    STYLE_MMA,
    LayoutPair,
    build_shuffle_schedule,
    choose_fusion_level,
    shuffle_count,
)

cq2 = VQConfig(4, 8, 1, Sharing.per_channel_group(4))
quip = VQConfig(8, 16, 2)
gptvq = VQConfig(4, 8, 1, Sharing.per_tile(256, 256))

print("=== where do codebooks switch? ===")
attn = ComputeOp.attention_decode(8, 4, 4096, 128)
gemv = ComputeOp.gemv(4096, 4096, residuals=2)
gemm = ComputeOp.gemm(4096, 4096, rows=16)
print(f"  CQ-2   x attention: {switch_axes_of(cq2, attn)} (reduce hits C)")
print(f"  QuiP#  x GeMV:      {switch_axes_of(quip, gemv)}")
print(f"  GPTVQ  x GeMM:      {switch_axes_of(gptvq, gemm)}")

print("\n=== the split factor trade ===")
out_bytes, cb_bytes, extent = 1024, 64 * 1024, 32
print(f"output {out_bytes} B vs codebook {cb_bytes} B over {extent} tasks:")
for f in (1, 2, 4, 8, 16, 32):
    cost = f * out_bytes + cb_bytes // f
    marker = " <- solved" if f == solve_split_factor(out_bytes, cb_bytes, extent) else ""
    print(f"  f={f:>2}: reduce {f * out_bytes:>6} + codebook {cb_bytes // f:>6} "
          f"= {cost:>6} B{marker}")

plan = build_dataflow(cq2, attn)
print(f"\nCQ-2 attention plan: {plan.region_tasks['C']} channel-group tasks "
      f"per head, split {plan.split_factor} ways along C, "
      f"{plan.base_tiles} token tile(s) kept")

print("\n=== fusion level by exchange count ===")
for name, vec, layout, kind in [("QuiP#-4", 8, 2, "GeMM"), ("QuiP#-4", 8, 1, "GeMV"),
                                ("GPTVQ-2", 4, 2, "GeMM"), ("GPTVQ-2", 4, 1, "GeMV"),
                                ("CQ-2", 4, 1, "attention")]:
    lp = LayoutPair(vec, layout)
    print(f"  {name:<8} {kind:<10} layouts {vec}->{layout}: "
          f"{shuffle_count(vec, layout)} shuffles -> {choose_fusion_level(lp)}")

print("\n=== the worked 8->2 schedule ===")
sch = build_shuffle_schedule(LayoutPair(8, 2), style=STYLE_MMA)
print(f"mini-warps of {sch.mini_warp_size}, offsets {sch.offsets}")
print(f"lanes 0,1,16,17 share consumers; remap sends their duty to lanes "
      f"{[sch.thread_remap[i] for i in (0, 1, 16, 17)]}")
print("after 3 xor exchanges every lane holds exactly its mma fragment")

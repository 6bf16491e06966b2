"""Self-check oracle suite behind `forge verify`.

Every check is independent of the implementation path it validates: nearest
codes are re-derived by a brute-force scan, shuffle ownership by exhaustive
element tracking, split factors by full divisor enumeration, and counter
identities by re-running the ladder and comparing rungs.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import bitpack, codec
from .cacheplan import compute_slack, plan_cache
from .codec import VQConfig, dequantize, quantize, train_codebooks
from .dataflow import ComputeOp, solve_split_factor
from .errors import CodeRangeError
from .fusion import (
    STYLE_MMA,
    STYLE_STRIDED,
    LayoutPair,
    build_shuffle_schedule,
    choose_fusion_level,
    dequant_register_file,
    expected_compute_ownership,
    run_shuffle_steps,
)
from .gpumodel import GpuModel, load_gpu_model
from .presets import PRESET_ORDER, PRESETS, Preset
from .profiling import profile_accesses, reorder_all
from .sim import KERNEL_USAGE, SimMachine, plan_kernel, reference_compute
from .synth import synthetic_quantized, synthetic_tensor

SMALL_SHAPES = {
    "gemm": dict(m=128, n=256, rows=32),
    "gemv": dict(m=256, n=512),
    "attention_decode": dict(b=1, h=2, t=256, c=128),
}


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.ok else 'FAIL'}] {self.name}" + \
            (f": {self.detail}" if self.detail else "")


def _op_for(preset: Preset, kind: str, shapes=None) -> ComputeOp:
    s = dict(SMALL_SHAPES[kind])
    if shapes:
        s.update(shapes)
    r = preset.config.residuals
    if kind == "gemm":
        return ComputeOp.gemm(s["m"], s["n"], s["rows"], residuals=r)
    if kind == "gemv":
        return ComputeOp.gemv(s["m"], s["n"], residuals=r)
    return ComputeOp.attention_decode(s["b"], s["h"], s["t"], s["c"], residuals=r)


def _ops_for(preset: Preset):
    return ("gemm", "gemv") if preset.target == "weight" else ("attention_decode",)


def check_compression_ratios() -> CheckResult:
    expect = {"quip4": 0.25, "aqlm3": 0.1875, "gptvq2": 0.125,
              "cq4": 0.25, "cq2": 0.125}
    for name, ratio in expect.items():
        got = codec.compression_ratio(PRESETS[name].config)
        if got != ratio:
            return CheckResult("compression-ratios", False,
                               f"{name}: {got} != {ratio}")
    return CheckResult("compression-ratios", True)


def check_roundtrip(preset: Preset, seed: int = 0) -> CheckResult:
    """Assignments match a brute-force nearest-centroid scan and exact data
    round-trips with zero error."""
    cfg = preset.config
    rng = np.random.default_rng(seed)
    data = synthetic_tensor((32, 64), seed)
    small_cfg = VQConfig(cfg.vector_size, min(cfg.log2_entries, 6), cfg.residuals)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        books = train_codebooks(data, small_cfg, seed)
    q = quantize(data, books, small_cfg)
    # brute force the level-0 assignment
    pts = data.reshape(-1, cfg.vector_size).astype(np.float64)
    cen = books[0].entries.astype(np.float64)
    for i in range(len(pts)):
        d = ((pts[i] - cen) ** 2).sum(axis=1)
        if int(np.argmin(d)) != int(q.codes[0, i]):
            return CheckResult(f"roundtrip[{preset.name}]", False,
                               f"assignment mismatch at sub-vector {i}")
    # data drawn straight from one book reconstructs exactly (whole-tensor
    # sharing so the single book serves every sub-vector)
    picks = rng.integers(0, books[0].n_entries, size=64)
    exact = books[0].entries[picks].reshape(8, -1)
    one_level = VQConfig(cfg.vector_size, small_cfg.log2_entries, 1)
    q2 = quantize(exact, books[:1], one_level)
    if not np.array_equal(dequantize(q2), exact):
        return CheckResult(f"roundtrip[{preset.name}]", False,
                           "exact data did not round-trip")
    return CheckResult(f"roundtrip[{preset.name}]", True)


def check_packing(preset: Preset, seed: int = 0) -> CheckResult:
    cfg = preset.config
    q = synthetic_quantized((16, 64), cfg, seed,
                            working_entries=preset.working_entries)
    packed = q.packed_codes()
    want = bitpack.packed_length(q.total_codes, cfg.log2_entries)
    if len(packed) != want:
        return CheckResult(f"packing[{preset.name}]", False,
                           f"{len(packed)} bytes != {want}")
    back = bitpack.unpack_indices(packed, cfg.log2_entries, q.total_codes)
    if not np.array_equal(back.reshape(q.codes.shape), q.codes):
        return CheckResult(f"packing[{preset.name}]", False, "codes corrupted")
    return CheckResult(f"packing[{preset.name}]", True)


def check_reorder(preset: Preset, seed: int = 0) -> CheckResult:
    cfg = preset.config
    q = synthetic_quantized((16, 64), cfg, seed, zipf_s=1.2,
                            working_entries=preset.working_entries)
    base = dequantize(q)
    reordered, _ = reorder_all(q)
    if not np.array_equal(dequantize(reordered), base):
        return CheckResult(f"reorder[{preset.name}]", False,
                           "dequantize changed under relabeling")
    for hist in profile_accesses(reordered):
        if (np.diff(hist.counts) > 0).any():
            return CheckResult(f"reorder[{preset.name}]", False,
                               "counts not non-increasing after reorder")
    return CheckResult(f"reorder[{preset.name}]", True)


def check_schedules(preset: Preset) -> CheckResult:
    cfg = preset.config
    for kind in _ops_for(preset):
        op = _op_for(preset, kind)
        layouts = LayoutPair(cfg.vector_size, op.required_layout)
        if choose_fusion_level(layouts) != "register":
            continue
        style = STYLE_MMA if kind == "gemm" else STYLE_STRIDED
        sch = build_shuffle_schedule(layouts, style=style)
        got = run_shuffle_steps(sch, dequant_register_file(sch))
        if not np.array_equal(got, expected_compute_ownership(sch)):
            return CheckResult(f"schedule[{preset.name}]", False,
                               f"ownership broken for {kind}")
    return CheckResult(f"schedule[{preset.name}]", True)


def check_split_factor(seed: int = 0, samples: int = 100) -> CheckResult:
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        extent = int(rng.integers(1, 512))
        out = int(rng.integers(1, 1 << 20))
        cb = int(rng.integers(1, 1 << 26))
        best = min(((f * out + cb / f, f) for f in range(1, extent + 1)
                    if extent % f == 0))[1]
        got = solve_split_factor(out, cb, extent)
        if got != best:
            return CheckResult("split-factor", False,
                               f"extent={extent} out={out} cb={cb}: {got}!={best}")
    return CheckResult("split-factor", True)


def check_counters(preset: Preset, model: GpuModel, seed: int = 0) -> CheckResult:
    machine = SimMachine(model)
    cfg = preset.config
    name = f"counters[{preset.name}]"
    for kind in _ops_for(preset):
        op = _op_for(preset, kind)
        quantized, operands = _synth_case(preset, op, seed)
        plans = plan_kernel(cfg, op, model)
        _, rep2 = machine.run_variant("o2", quantized, op, operands, plans)
        _, rep3 = machine.run_variant("o3", quantized, op, operands, plans)
        _, rep4 = machine.run_variant("o4", quantized, op, operands, plans)
        f = plans.dataflow_plan.split_factor
        if rep3.global_to_shared_bytes > rep2.global_to_shared_bytes:
            return CheckResult(name, False,
                               f"{kind}: centric dataflow raised codebook traffic")
        if plans.fusion_level == "register" and rep4.staged_dequant_bytes != 0:
            return CheckResult(name, False,
                               f"{kind}: register fusion staged bytes != 0")
        if plans.fusion_level == "shared" and op.required_layout != cfg.vector_size \
                and rep4.staged_dequant_bytes == 0:
            return CheckResult(name, False,
                               f"{kind}: shared fusion staged nothing")
        if f > 1 and plans.dataflow_plan.has_global_reduce and rep3.reduce_bytes == 0:
            return CheckResult(name, False, f"{kind}: missing reduction traffic")
    return CheckResult(name, True)


def check_numerics(preset: Preset, model: GpuModel, seed: int = 0,
                   tol: float = 1e-4) -> CheckResult:
    machine = SimMachine(model)
    cfg = preset.config
    name = f"numerics[{preset.name}]"
    for kind in _ops_for(preset):
        op = _op_for(preset, kind)
        quantized, operands = _synth_case(preset, op, seed)
        dense = _dense_operands(quantized, operands)
        ref = reference_compute(op, dense)
        plans = plan_kernel(cfg, op, model)
        out, _ = machine.run_fused_kernel(quantized, plans, op, operands)
        err = np.abs(out - ref).max() / max(np.abs(ref).max(), 1e-12)
        if err > tol:
            return CheckResult(name, False, f"{kind}: rel err {err:.2e} > {tol}")
    return CheckResult(name, True)


def check_occupancy(preset: Preset, model: GpuModel) -> CheckResult:
    cfg = preset.config
    name = f"occupancy[{preset.name},{model.name}]"
    for kind in _ops_for(preset):
        usage = KERNEL_USAGE[kind]
        base = model.occupancy_of(usage)
        slack = compute_slack(usage, model)
        plan = plan_cache(_proto(cfg), None, slack)
        occ = model.occupancy(usage.shared_bytes + plan.shared_span_bytes,
                              usage.regs_per_thread + plan.reg_span_bytes // 4,
                              usage.threads_per_block)
        if occ != base:
            return CheckResult(name, False, f"{kind}: {occ} != baseline {base}")
    return CheckResult(name, True)


def check_corrupt_stream(seed: int = 0) -> CheckResult:
    cfg = PRESETS["cq2"].config
    q = synthetic_quantized((16, 64), cfg, seed)
    q.codes[0, 3] = cfg.n_entries + 7  # poison one code
    try:
        dequantize(q)
    except CodeRangeError as e:
        if "code out of range" in str(e):
            return CheckResult("corrupt-stream", True)
        return CheckResult("corrupt-stream", False, f"wrong message: {e}")
    return CheckResult("corrupt-stream", False, "corruption not detected")


def _proto(cfg: VQConfig):
    from .codec import Codebook

    return Codebook(np.zeros((cfg.n_entries, cfg.vector_size), np.float32), 0, 0)


def _synth_case(preset: Preset, op: ComputeOp, seed: int):
    cfg = preset.config
    if op.kind == "attention_decode":
        shape = tuple(op.axes[a] for a in "BHTC")
        kq = synthetic_quantized(shape, cfg, seed,
                                 working_entries=preset.working_entries)
        vq = synthetic_quantized(shape, cfg, seed + 1,
                                 working_entries=preset.working_entries)
        query = synthetic_tensor(shape[:2] + (shape[3],), seed + 2)
        return {"k": kq, "v": vq}, {"query": query}
    shape = (op.axes["M"], op.axes["N"])
    wq = synthetic_quantized(shape, cfg, seed,
                             working_entries=preset.working_entries)
    rows = op.activation_rows
    act = synthetic_tensor((rows, shape[0]) if op.kind == "gemm" else (shape[0],),
                           seed + 2)
    return wq, {"activation": act}


def _dense_operands(quantized, operands):
    dense = dict(operands)
    if isinstance(quantized, dict):
        dense["k"] = dequantize(quantized["k"])
        dense["v"] = dequantize(quantized["v"])
    else:
        dense["weight"] = dequantize(quantized)
    return dense


def run_all(preset_names=None, model_names=("rtx4090",), seed: int = 0):
    """The full oracle suite; returns a list of CheckResult."""
    presets = [PRESETS[n] for n in (preset_names or PRESET_ORDER)]
    models = [load_gpu_model(n) for n in model_names]
    results = [check_compression_ratios(), check_split_factor(seed),
               check_corrupt_stream(seed)]
    for preset in presets:
        results.append(check_roundtrip(preset, seed))
        results.append(check_packing(preset, seed))
        results.append(check_reorder(preset, seed))
        results.append(check_schedules(preset))
        for model in models:
            results.append(check_counters(preset, model, seed))
            results.append(check_numerics(preset, model, seed))
            results.append(check_occupancy(preset, model))
    return results

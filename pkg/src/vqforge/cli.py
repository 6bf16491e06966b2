"""The `forge` command line: quantize, profile, plan, simulate, report.

Thin shell over the library; every behavior here is reachable through the
modules with identical results. Exit codes: 0 ok, 1 verification failure,
2 usage error.
"""

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container
from .codec import dequantize, quantize, train_codebooks
from .dataflow import ComputeOp, build_dataflow
from .errors import ForgeError
from .fusion import (
    STYLE_MMA,
    STYLE_STRIDED,
    LayoutPair,
    MappingError,
    build_shuffle_schedule,
    choose_fusion_level,
)
from .gpumodel import load_gpu_model
from .presets import PRESET_ORDER, load_preset
from .profiling import hotness_map_csv, profile_accesses, reorder_all, tile_hotness_map
from .report import write_reports_csv
from .sim import KERNEL_USAGE, SimMachine, plan_kernel
from .synth import synthetic_quantized, synthetic_tensor
from .verify import run_all

OP_NAMES = {
    "gemm": "gemm",
    "gemv": "gemv",
    "attn-decode": "attention_decode",
    "attention_decode": "attention_decode",
}

LADDER = ("gc", "sc", "o1", "o2", "o3", "o4")


@dataclass
class RunSpec:
    """Everything one simulated run needs, parsed from the command line."""

    preset_name: str
    op_kind: str
    model_name: str = "rtx4090"
    variants: tuple = LADDER
    seed: int = 0
    m: int = 4096
    n: int = 4096
    rows: int = 256
    batch: int = 8
    heads: int = 4
    seq: int = 1024
    channels: int = 128
    report_path: str = ""
    csv_path: str = ""

    def validate(self, vector_size: int):
        quantized_dim = self.channels if self.op_kind == "attention_decode" \
            else self.n
        label = "channels" if self.op_kind == "attention_decode" else "n"
        if quantized_dim % vector_size != 0:
            raise ForgeError(
                f"--{label}={quantized_dim} must be divisible by the preset's "
                f"vector size {vector_size}"
            )

    def op(self, residuals: int) -> ComputeOp:
        if self.op_kind == "gemm":
            return ComputeOp.gemm(self.m, self.n, self.rows, residuals)
        if self.op_kind == "gemv":
            return ComputeOp.gemv(self.m, self.n, residuals)
        return ComputeOp.attention_decode(self.batch, self.heads, self.seq,
                                          self.channels, residuals)


def _load_tensor(path: str, shape: str) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        return np.load(p).astype(np.float32)
    if not shape:
        raise ForgeError(f"raw input {path} needs --shape ROWSxCOLS")
    dims = tuple(int(x) for x in shape.lower().split("x"))
    data = np.fromfile(p, dtype=np.float32)
    if data.size != int(np.prod(dims)):
        raise ForgeError(
            f"{path} holds {data.size} float32 values, --shape wants "
            f"{int(np.prod(dims))}"
        )
    return data.reshape(dims)


def cmd_quantize(args) -> int:
    import warnings

    preset = load_preset(args.preset)
    data = _load_tensor(args.infile, args.shape)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        books = train_codebooks(data, preset.config, args.seed)
    dupes = [w for w in caught if "duplicate centroids" in str(w.message)]
    if dupes:
        print(f"warning: {len(dupes)} codebook(s) have fewer distinct "
              "sub-vectors than entries; duplicate centroids were kept")
    q = quantize(data, books, preset.config)
    if args.reorder:
        q, _ = reorder_all(q)
    container.save_quantized(q, args.out)
    mse = float(((dequantize(q) - data) ** 2).mean())
    print(f"quantized {data.shape} with {preset.name}: "
          f"{q.total_codes} codes, {len(q.codebooks)} codebooks, mse {mse:.3e}")
    print(f"wrote {args.out}")
    return 0


def cmd_profile(args) -> int:
    q = container.read_quantized(args.infile)
    hists = profile_accesses(q)
    for h in hists:
        hot = h.hot_set()
        print(f"codebook level={h.residual_level} region={h.region_id}: "
              f"mu={h.mu:.1f} sigma={h.sigma:.1f} hot={len(hot)}")
    if args.out_json:
        payload = [json.loads(h.to_json()) for h in hists]
        Path(args.out_json).write_text(json.dumps(payload, indent=2))
        print(f"wrote {args.out_json}")
    if args.out_csv:
        hists[0].write_csv(args.out_csv)
        print(f"wrote {args.out_csv}")
    if args.tiles:
        tr, tc = (int(x) for x in args.tiles.lower().split("x"))
        grid = tile_hotness_map(q, q.codebooks[0], (tr, tc))
        out = args.out_tiles or "hotness.csv"
        hotness_map_csv(grid, out)
        print(f"wrote tile hotness map {grid.shape} to {out}")
    return 0


def cmd_plan_cache(args) -> int:
    preset = load_preset(args.preset)
    model = load_gpu_model(args.model)
    kind = OP_NAMES[args.kernel]
    from .cacheplan import compute_slack, plan_cache
    from .codec import Codebook

    usage = KERNEL_USAGE[kind]
    slack = compute_slack(usage, model)
    proto = Codebook(np.zeros((preset.config.n_entries,
                               preset.config.vector_size), np.float32), 0, 0)
    plan = plan_cache(proto, None, slack, n_reg=args.n_reg, n_shared=args.n_shared)
    print(f"model {model.name}, kernel {kind}: shared slack {slack[0]} B, "
          f"register slack {slack[1]} B/thread")
    print(f"plan: n_reg={plan.n_reg} n_shared={plan.n_shared} of "
          f"{plan.n_entries} entries ({plan.entry_bytes} B each)")
    if args.json:
        Path(args.json).write_text(plan.to_json())
        print(f"wrote {args.json}")
    return 0


def cmd_plan_dataflow(args) -> int:
    preset = load_preset(args.preset)
    spec = _spec_from(args)
    spec.validate(preset.config.vector_size)
    model = load_gpu_model(args.model)
    op = spec.op(preset.config.residuals)
    plan = build_dataflow(preset.config, op, model)
    print(plan.to_json())
    if args.json:
        Path(args.json).write_text(plan.to_json())
        print(f"wrote {args.json}")
    return 0


def cmd_plan_fusion(args) -> int:
    preset = load_preset(args.preset)
    kind = OP_NAMES[args.op]
    required = 2 if kind == "gemm" else 1
    layouts = LayoutPair(preset.config.vector_size, required)
    level = choose_fusion_level(layouts, thres_shuffle=args.thres_shuffle)
    print(f"{preset.name} x {kind}: layouts {layouts.layout_src}->"
          f"{layouts.layout_dst}, n_shuffle={layouts.n_shuffle}, level={level}")
    if level == "register":
        style = STYLE_MMA if kind == "gemm" else STYLE_STRIDED
        try:
            sch = build_shuffle_schedule(layouts, style=style)
        except MappingError as e:
            print(f"register mapping rejected ({e}); falling back to shared")
            return 0
        print(sch.to_json())
        if args.json:
            Path(args.json).write_text(sch.to_json())
            print(f"wrote {args.json}")
    return 0


def _synth_inputs(preset, op, seed):
    cfg = preset.config
    if op.kind == "attention_decode":
        shape = tuple(op.axes[a] for a in "BHTC")
        quantized = {
            "k": synthetic_quantized(shape, cfg, seed,
                                     working_entries=preset.working_entries,
                                     zipf_s=1.2),
            "v": synthetic_quantized(shape, cfg, seed + 1,
                                     working_entries=preset.working_entries,
                                     zipf_s=1.2),
        }
        operands = {"query": synthetic_tensor(shape[:2] + (shape[3],), seed + 2)}
        return quantized, operands
    shape = (op.axes["M"], op.axes["N"])
    quantized = synthetic_quantized(shape, cfg, seed,
                                    working_entries=preset.working_entries,
                                    zipf_s=1.2)
    rows = (op.activation_rows, shape[0]) if op.kind == "gemm" else (shape[0],)
    return quantized, {"activation": synthetic_tensor(rows, seed + 2)}


def _run_ladder(spec: RunSpec):
    preset = load_preset(spec.preset_name)
    spec.validate(preset.config.vector_size)
    model = load_gpu_model(spec.model_name)
    op = spec.op(preset.config.residuals)
    machine = SimMachine(model)
    quantized, operands = _synth_inputs(preset, op, spec.seed)
    quantized = _reorder_inputs(quantized)
    plans = plan_kernel(preset.config, op, model)
    rows = []
    for name in spec.variants:
        _, rep = machine.run_variant(name, quantized, op, operands, plans)
        rep.meta.update(preset=preset.name, op=op.kind, model=model.name,
                        split_factor=plans.dataflow_plan.split_factor,
                        fusion=plans.fusion_level if name == "o4" else "shared")
        rows.append((name, rep))
    return rows, plans


def _reorder_inputs(quantized):
    if isinstance(quantized, dict):
        return {k: reorder_all(v)[0] for k, v in quantized.items()}
    return reorder_all(quantized)[0]


def cmd_run(args) -> int:
    spec = _spec_from(args)
    rows, plans = _run_ladder(spec)
    payload = {"schema_version": 1, "runs": [
        dict(variant=name, **rep.to_dict()) for name, rep in rows]}
    text = json.dumps(payload, indent=2)
    if spec.report_path:
        Path(spec.report_path).write_text(text)
        print(f"wrote {spec.report_path}")
    else:
        print(text)
    return 0


def cmd_bench(args) -> int:
    spec = _spec_from(args)
    rows, plans = _run_ladder(spec)
    base = dict(rows)["gc"] if "gc" in dict(rows) else rows[0][1]

    def pct(new, old):
        return "-" if old == 0 else f"{100.0 * (new - old) / old:+.1f}%"

    print(f"{'variant':<8}{'conflicts':>12}{'G->S B':>14}{'S->R B':>14}"
          f"{'staged B':>12}{'reduce B':>12}{'occ':>5}")
    for name, rep in rows:
        print(f"{name:<8}{rep.bank_conflicts:>12}{rep.global_to_shared_bytes:>14}"
              f"{rep.shared_to_reg_bytes:>14}{rep.staged_dequant_bytes:>12}"
              f"{rep.reduce_bytes:>12}{rep.occupancy:>5}")
    print("\ndeltas vs gc:")
    deltas = []
    for name, rep in rows:
        deltas.append({
            "variant": name,
            "bank_conflicts": pct(rep.bank_conflicts, base.bank_conflicts),
            "global_to_shared_bytes": pct(rep.global_to_shared_bytes,
                                          base.global_to_shared_bytes),
            "shared_to_reg_bytes": pct(rep.shared_to_reg_bytes,
                                       base.shared_to_reg_bytes),
        })
        print(f"{name:<8}conflicts {deltas[-1]['bank_conflicts']:>9}"
              f"  G->S {deltas[-1]['global_to_shared_bytes']:>9}"
              f"  S->R {deltas[-1]['shared_to_reg_bytes']:>9}")
    if spec.report_path:
        payload = {"schema_version": 1,
                   "runs": [dict(variant=name, **rep.to_dict())
                            for name, rep in rows],
                   "deltas_vs_gc": deltas}
        Path(spec.report_path).write_text(json.dumps(payload, indent=2))
        print(f"\nwrote {spec.report_path}")
    if spec.csv_path:
        write_reports_csv(rows, spec.csv_path)
        print(f"wrote {spec.csv_path}")
    return 0


def cmd_verify(args) -> int:
    presets = args.preset or list(PRESET_ORDER)
    models = args.model or ["rtx4090"]
    results = run_all(presets, models, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.ok]
    print(f"\n{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def _spec_from(args) -> RunSpec:
    return RunSpec(
        preset_name=args.preset,
        op_kind=OP_NAMES[args.op],
        model_name=getattr(args, "model", "rtx4090"),
        variants=tuple(args.variant) if getattr(args, "variant", None) else LADDER,
        seed=args.seed,
        m=args.m, n=args.n, rows=args.rows,
        batch=args.batch, heads=args.heads, seq=args.seq,
        channels=args.channels,
        report_path=getattr(args, "report", "") or "",
        csv_path=getattr(args, "csv", "") or "",
    )


def _add_shape_args(p):
    p.add_argument("--m", type=int, default=4096, help="reduction rows (GeMM/GeMV)")
    p.add_argument("--n", type=int, default=4096, help="output columns (GeMM/GeMV)")
    p.add_argument("--rows", type=int, default=256, help="activation rows (GeMM)")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--seq", type=int, default=1024, help="context length T")
    p.add_argument("--channels", type=int, default=128, help="head dimension C")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forge",
        description="vector-quantization codec, codebook cache planner, and "
                    "counter-level kernel simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="train codebooks and encode a tensor")
    p.add_argument("--preset", "--config", dest="preset", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--shape", default="", help="ROWSxCOLS for raw float32 input")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reorder", action="store_true",
                   help="frequency-reorder codebooks after encoding")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("profile", help="entry access histograms for a .vq file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--tiles", default="", help="tile spec like 128x128")
    p.add_argument("--out-json", default="")
    p.add_argument("--out-csv", default="")
    p.add_argument("--out-tiles", default="")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("plan-cache", help="slack-derived placement boundaries")
    p.add_argument("--model", default="rtx4090")
    p.add_argument("--vq", dest="preset", required=True)
    p.add_argument("--kernel", choices=sorted(OP_NAMES), default="attn-decode")
    p.add_argument("--n-reg", type=int, default=None)
    p.add_argument("--n-shared", type=int, default=None)
    p.add_argument("--json", default="")
    p.set_defaults(func=cmd_plan_cache)

    p = sub.add_parser("plan-dataflow", help="codebook-centric dataflow plan")
    p.add_argument("--vq", dest="preset", required=True)
    p.add_argument("--op", choices=sorted(OP_NAMES), required=True)
    p.add_argument("--model", default="rtx4090")
    p.add_argument("--json", default="")
    _add_shape_args(p)
    p.set_defaults(func=cmd_plan_dataflow)

    p = sub.add_parser("plan-fusion", help="register-fusion shuffle schedule")
    p.add_argument("--vq", dest="preset", required=True)
    p.add_argument("--op", choices=sorted(OP_NAMES), required=True)
    p.add_argument("--thres-shuffle", type=int, default=5)
    p.add_argument("--json", default="")
    p.set_defaults(func=cmd_plan_fusion)

    p = sub.add_parser("run", help="simulate chosen variants, emit reports")
    p.add_argument("--vq", dest="preset", required=True)
    p.add_argument("--op", choices=sorted(OP_NAMES), required=True)
    p.add_argument("--variant", action="append", choices=LADDER)
    p.add_argument("--model", default="rtx4090")
    p.add_argument("--report", default="")
    _add_shape_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="run the gc..o4 ladder with a delta table")
    p.add_argument("--vq", dest="preset", required=True)
    p.add_argument("--op", choices=sorted(OP_NAMES), required=True)
    p.add_argument("--variant", action="append", choices=LADDER)
    p.add_argument("--model", default="rtx4090")
    p.add_argument("--report", default="")
    p.add_argument("--csv", default="")
    _add_shape_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run the oracle self-check suite")
    p.add_argument("--preset", action="append", choices=list(PRESET_ORDER))
    p.add_argument("--model", action="append")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ForgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

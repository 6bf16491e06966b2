import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqforge.codec import Sharing, VQConfig
from vqforge.dataflow import (
    ComputeOp,
    build_dataflow,
    naive_codebook_traffic,
    solve_split_factor,
    switch_axes_of,
)
from vqforge.errors import ConfigError, ShapeError

CQ2 = VQConfig(4, 8, 1, Sharing.per_channel_group(4))
QUIP4 = VQConfig(8, 16, 2)
GPTVQ2 = VQConfig(4, 8, 1, Sharing.per_tile(256, 256))


class TestSwitchAxes:
    def test_cq2_attention(self):
        op = ComputeOp.attention_decode(1, 2, 256, 128)
        assert switch_axes_of(CQ2, op) == ("H", "C")
        assert "C" in op.reduce_axes

    def test_quip4_gemv(self):
        op = ComputeOp.gemv(4096, 4096, residuals=2)
        assert switch_axes_of(QUIP4, op) == ("R",)

    def test_whole_tensor_single_level_empty(self):
        cfg = VQConfig(4, 8, 1)
        op = ComputeOp.gemv(4096, 4096)
        assert switch_axes_of(cfg, op) == ()

    def test_gptvq_gemm(self):
        op = ComputeOp.gemm(4096, 4096, rows=16)
        assert switch_axes_of(GPTVQ2, op) == ("M", "N")


class TestSolveSplitFactor:
    def test_output_dominates(self):
        assert solve_split_factor(100, 50, 32) == 1

    def test_equal_traffic(self):
        assert solve_split_factor(1024, 1024, 32) == 1

    def test_worked_example(self):
        # 64 KB codebook vs 1 KB output over extent 32
        assert solve_split_factor(1024, 64 * 1024, 32) == 8

    def test_exhaustive_small(self):
        for extent in (1, 2, 6, 12, 32, 100, 4096):
            for out, cb in ((1, 1), (3, 10_000), (1000, 3), (7, 7000)):
                best = min(((f * out + cb / f, f)
                            for f in range(1, extent + 1) if extent % f == 0))[1]
                assert solve_split_factor(out, cb, extent) == best

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 4096), st.integers(1, 1 << 20), st.integers(1, 1 << 26))
    def test_optimal_property(self, extent, out, cb):
        got = solve_split_factor(out, cb, extent)
        assert extent % got == 0
        cost = lambda f: f * out + cb / f
        for f in range(1, extent + 1):
            if extent % f == 0:
                assert cost(got) <= cost(f) + 1e-9

    def test_positive_inputs_required(self):
        with pytest.raises(ConfigError):
            solve_split_factor(0, 10, 4)


class TestBuildDataflow:
    def test_cq2_attention_channel_tasks(self):
        # head_dim 128 with 4-wide vectors: 32 channel-group tasks per head
        op = ComputeOp.attention_decode(8, 4, 4096, 128)
        plan = build_dataflow(CQ2, op)
        assert plan.region_tasks["C"] == 32
        assert plan.global_reduce_axes == ("C",)
        assert plan.region_tasks["C"] % plan.split_factor == 0

    def test_empty_switch_degenerates(self):
        cfg = VQConfig(4, 8, 1)
        op = ComputeOp.gemv(1024, 1024)
        plan = build_dataflow(cfg, op)
        assert plan.switch_axes == ()
        assert plan.split_factor == 1
        assert not plan.has_global_reduce

    def test_split_factor_must_divide(self):
        op = ComputeOp.attention_decode(1, 1, 1024, 128)
        with pytest.raises(ShapeError):
            build_dataflow(CQ2, op, split_factor=3)

    def test_split_factor_exceeding_extent(self):
        op = ComputeOp.attention_decode(1, 1, 1024, 128)
        with pytest.raises(ShapeError):
            build_dataflow(CQ2, op, split_factor=64)

    def test_gptvq_region_alignment(self):
        op = ComputeOp.gemm(4096, 4096, rows=16)
        plan = build_dataflow(GPTVQ2, op)
        assert plan.region_tasks == {"M": 16, "N": 16}
        assert plan.global_reduce_axes == ("M",)
        assert plan.base_tiles == 1  # N parallelism is region-aligned

    def test_quip_gemv_residual_split(self):
        op = ComputeOp.gemv(4096, 4096, residuals=2)
        plan = build_dataflow(QUIP4, op)
        assert plan.split_axis == "R"
        assert plan.split_factor == 2  # tiny output, heavy codebooks

    def test_aqlm_gemm_prefers_no_split(self):
        # large outputs make the reduction traffic dominate; the costs tie at
        # f=1 vs f=2 and ties go to the smaller factor
        aqlm = VQConfig(8, 12, 2)
        op = ComputeOp.gemm(256, 256, rows=256, residuals=2)
        plan = build_dataflow(aqlm, op)
        assert plan.split_factor == 1

    def test_quip_gemm_splits_against_big_table(self):
        # the lattice table is modeled as a plain 2^16-entry lookup, so its
        # codebook traffic dwarfs the output and the residual axis splits
        op = ComputeOp.gemm(256, 256, rows=256, residuals=2)
        plan = build_dataflow(QUIP4, op)
        assert plan.split_factor == 2

    def test_serialization(self):
        import json

        op = ComputeOp.attention_decode(8, 4, 1024, 128)
        plan = build_dataflow(CQ2, op)
        data = json.loads(plan.to_json())
        assert data["op"] == "attention_decode"
        assert data["switch_axes"] == ["H", "C"]
        assert data["split_factor"] == plan.split_factor


class TestNaiveTraffic:
    def test_cq2_attention_duplication(self):
        # every token tile reloads all 32 channel-group books per head, K and V
        op = ComputeOp.attention_decode(1, 1, 4096, 128)
        book_bytes = 256 * 8
        tiles = 4096 // 128
        assert naive_codebook_traffic(CQ2, op) == tiles * 32 * 2 * book_bytes

    def test_gptvq_gemm_duplication_factor_two(self):
        # (256,256)-tile books against (.,128) task strips: dup factor 2
        op = ComputeOp.gemm(512, 512, rows=16)
        book_bytes = 256 * 8
        distinct = 2 * 2 * book_bytes
        assert naive_codebook_traffic(GPTVQ2, op) == 2 * distinct


class TestComputeOp:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            ComputeOp("conv", {"M": 1}, (), 1)

    def test_reduce_axes_exist(self):
        with pytest.raises(ConfigError):
            ComputeOp("gemm", {"M": 4, "N": 4}, ("K",), 2)

    def test_required_layouts(self):
        assert ComputeOp.gemm(64, 64, 4).required_layout == 2
        assert ComputeOp.gemv(64, 64).required_layout == 1
        assert ComputeOp.attention_decode(1, 1, 64, 128).required_layout == 1

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqforge.cacheplan import (
    CachePlan,
    cache_access,
    cache_access_bulk,
    cache_load,
    cache_switch,
    compute_slack,
    plan_cache,
)
from vqforge.codec import Codebook
from vqforge.errors import CapacityError, ConfigError
from vqforge.gpumodel import GpuModel, KernelUsage, load_gpu_model
from vqforge.profiling import AccessHistogram
from vqforge.report import SimReport


def small_model(**kw):
    args = dict(name="toy", shared_per_sm=96 * 1024, max_shared_per_block=64 * 1024,
                regs_per_sm=65536, max_regs_per_thread=255, max_blocks_per_sm=16,
                max_threads_per_sm=1024, sm_count=4, shared_granularity=1024,
                reg_granularity=256)
    args.update(kw)
    return GpuModel(**args)


def book(n=256, vec=4):
    return Codebook(np.arange(n * vec, dtype=np.float32).reshape(n, vec), 0, 0)


class TestOccupancy:
    def test_monotone_in_shared(self):
        m = small_model()
        occs = [m.occupancy(s, 32, 128) for s in range(0, 64 * 1024, 1024)]
        assert all(a >= b for a, b in zip(occs, occs[1:]))

    def test_monotone_in_regs(self):
        m = small_model()
        occs = [m.occupancy(8192, r, 128) for r in range(1, 255)]
        assert all(a >= b for a, b in zip(occs, occs[1:]))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 64 * 1024), st.integers(0, 255), st.integers(32, 1024))
    def test_monotone_property(self, shared, regs, threads):
        m = small_model()
        base = m.occupancy(shared, regs, threads)
        assert m.occupancy(shared + 1024, regs, threads) <= base
        assert m.occupancy(shared, min(regs + 8, 255), threads) <= base


class TestComputeSlack:
    def test_slack_scan_oracle(self):
        # the analytic slack must agree with stepping the occupancy table
        m = small_model()
        usage = KernelUsage(20 * 1024, 40, 256)
        base = m.occupancy_of(usage)
        shared_slack, reg_slack = compute_slack(usage, m)
        # exhaustive: largest extra shared keeping occupancy, scanned in bytes
        extra = 0
        step = 256
        while m.occupancy(usage.shared_bytes + extra + step, usage.regs_per_thread,
                          usage.threads_per_block) == base and extra < 10**6:
            extra += step
        assert shared_slack == extra
        extra_r = 0
        while usage.regs_per_thread + extra_r + 1 <= 255 and m.occupancy(
                usage.shared_bytes, usage.regs_per_thread + extra_r + 1,
                usage.threads_per_block) == base:
            extra_r += 1
        assert reg_slack == extra_r * 4

    def test_step_boundary_gives_zero_slack(self):
        m = small_model(shared_per_sm=96 * 1024)
        usage = KernelUsage(48 * 1024, 1, 64)  # exactly the 2-block step
        shared_slack, _ = compute_slack(usage, m)
        assert shared_slack == 0

    def test_near_step_leaves_granularity_remainder(self):
        # 95 KB/SM at 2 blocks: the 48 KB step is infeasible, cap is 47 KB
        m = small_model(shared_per_sm=95 * 1024)
        usage = KernelUsage(32 * 1024, 1, 64)
        assert m.occupancy_of(usage) == 2
        shared_slack, _ = compute_slack(usage, m)
        assert shared_slack == 15 * 1024

    def test_single_block_gets_all_remaining(self):
        m = small_model(max_blocks_per_sm=1)
        usage = KernelUsage(16 * 1024, 32, 256)
        shared_slack, reg_slack = compute_slack(usage, m)
        assert shared_slack == m.max_shared_per_block - usage.shared_bytes
        total_regs = (m.regs_per_sm // m.reg_granularity) * m.reg_granularity
        assert reg_slack == (min(total_regs // 256, 255) - 32) * 4

    def test_infeasible_baseline_rejected(self):
        m = small_model()
        with pytest.raises(CapacityError):
            compute_slack(KernelUsage(128 * 1024, 32, 256), m)


class TestPlanCache:
    def test_zero_slack_all_global(self):
        plan = plan_cache(book(), None, (0, 0))
        assert plan.n_reg == 0 and plan.n_shared == 0
        assert plan.level_of(0) == "global"

    def test_division_arithmetic(self):
        # entry_bytes=8; reg slack 64 B -> 8 entries; shared 2048 B -> 256,
        # clamped to the 256-entry codebook
        plan = plan_cache(book(256, 4), None, (2048, 64))
        assert plan.n_reg == 8
        assert plan.n_shared == 256  # 8 + 256 clamped

    def test_override(self):
        plan = plan_cache(book(), None, (2048, 64), n_reg=0, n_shared=100)
        assert plan.n_reg == 0 and plan.n_shared == 100

    def test_requires_reordered_histogram(self):
        hist = AccessHistogram(np.arange(256))  # increasing = not reordered
        with pytest.raises(ConfigError, match="reorder"):
            plan_cache(book(), hist, (2048, 64))

    def test_working_set_fits_shared(self):
        # 256 hot entries x 16 B = 4 KB fits a typical shared slack, so every
        # accessed entry lands at or above the shared boundary
        plan = plan_cache(book(65536, 8), None, (4096 + 64, 64))
        assert plan.n_reg == 4
        assert plan.n_shared >= 256

    def test_boundary_ordering_enforced(self):
        with pytest.raises(ConfigError):
            CachePlan(n_reg=10, n_shared=5, n_entries=16, entry_bytes=8)


class TestLevelRule:
    def test_exhaustive_levels(self):
        plan = CachePlan(n_reg=4, n_shared=12, n_entries=16, entry_bytes=8)
        for i in range(16):
            want = "reg" if i < 4 else ("shared" if i < 12 else "global")
            assert plan.level_of(i) == want
        lv = plan.levels_of(np.arange(16))
        assert lv.tolist() == [0] * 4 + [1] * 8 + [2] * 4

    def test_boundary_is_shared(self):
        plan = CachePlan(n_reg=4, n_shared=12, n_entries=16, entry_bytes=8)
        assert plan.level_of(4) == "shared"


class TestCacheOps:
    def test_load_counts_span(self):
        plan = CachePlan(n_reg=4, n_shared=12, n_entries=256, entry_bytes=8)
        counters = SimReport()
        cache_load(book(), plan, counters)
        assert counters.global_to_shared_bytes == (12 - 4) * 8
        assert counters.global_bytes == 4 * 8

    def test_access_levels_and_traffic(self):
        plan = CachePlan(n_reg=4, n_shared=12, n_entries=256, entry_bytes=8)
        counters = SimReport()
        handle = cache_load(book(), plan, counters)
        g2s0, glob0 = counters.global_to_shared_bytes, counters.global_bytes

        entry, level = cache_access(handle, 0)
        assert level == "reg"
        assert np.array_equal(entry, handle.codebook.entries[0])
        entry, level = cache_access(handle, 4)
        assert level == "shared"
        assert counters.shared_to_reg_bytes == 8
        entry, level = cache_access(handle, 255)
        assert level == "global"
        assert counters.global_bytes == glob0 + 8
        assert counters.global_to_shared_bytes == g2s0

    def test_access_out_of_range(self):
        plan = CachePlan(n_reg=0, n_shared=0, n_entries=256, entry_bytes=8)
        handle = cache_load(book(), plan, SimReport())
        with pytest.raises(ConfigError):
            cache_access(handle, 256)

    def test_bulk_matches_scalar(self):
        plan = CachePlan(n_reg=4, n_shared=12, n_entries=256, entry_bytes=8)
        c1, c2 = SimReport(), SimReport()
        h1 = cache_load(book(), plan, c1)
        h2 = cache_load(book(), plan, c2)
        idx = np.array([0, 3, 4, 11, 12, 200])
        got = cache_access_bulk(h1, idx)
        for i, j in enumerate(idx):
            entry, _ = cache_access(h2, int(j))
            assert np.array_equal(got[i], entry)
        assert c1.shared_to_reg_bytes == c2.shared_to_reg_bytes
        assert c1.global_bytes == c2.global_bytes

    def test_switch_reloads(self):
        plan = CachePlan(n_reg=4, n_shared=12, n_entries=256, entry_bytes=8)
        counters = SimReport()
        handle = cache_load(book(), plan, counters)
        one_load = counters.global_to_shared_bytes
        for k in range(3):
            handle = cache_switch(handle, book())
        assert counters.global_to_shared_bytes == 4 * one_load

    def test_switch_shape_mismatch(self):
        plan = CachePlan(n_reg=0, n_shared=8, n_entries=256, entry_bytes=8)
        handle = cache_load(book(), plan, SimReport())
        with pytest.raises(ConfigError):
            cache_switch(handle, book(128, 4))

    def test_plan_codebook_mismatch(self):
        plan = CachePlan(n_reg=0, n_shared=8, n_entries=128, entry_bytes=8)
        with pytest.raises(ConfigError):
            cache_load(book(256, 4), plan, SimReport())


class TestShippedModels:
    @pytest.mark.parametrize("name", ["rtx4090", "a40"])
    def test_loadable(self, name):
        m = load_gpu_model(name)
        assert m.warp_size == 32 and m.banks == 32 and m.bank_width == 4

    def test_env_dir_override(self, tmp_path, monkeypatch):
        (tmp_path / "custom.toml").write_text(
            'name = "custom"\nshared_per_sm = 65536\nmax_shared_per_block = 49152\n'
            "regs_per_sm = 32768\nmax_regs_per_thread = 255\nmax_blocks_per_sm = 8\n"
            "max_threads_per_sm = 1024\nsm_count = 10\n")
        monkeypatch.setenv("FORGE_MODEL_DIR", str(tmp_path))
        m = load_gpu_model("custom")
        assert m.sm_count == 10

    def test_unknown_model(self):
        with pytest.raises(ConfigError):
            load_gpu_model("gtx280")

import json

import numpy as np
import pytest

from vqforge import container
from vqforge.cli import main


@pytest.fixture
def tensor_file(tmp_path):
    path = tmp_path / "t.npy"
    data = np.random.default_rng(0).normal(size=(64, 128)).astype(np.float32)
    np.save(path, data)
    return path


def test_quantize_and_profile(tensor_file, tmp_path, capsys):
    out = tmp_path / "t.vq"
    assert main(["quantize", "--preset", "gptvq2", "--in", str(tensor_file),
                 "--out", str(out), "--reorder"]) == 0
    q = container.read_quantized(out)
    assert q.config.vector_size == 4
    hist_json = tmp_path / "hist.json"
    assert main(["profile", "--in", str(out), "--out-json", str(hist_json),
                 "--tiles", "32x128", "--out-tiles",
                 str(tmp_path / "tiles.csv")]) == 0
    payload = json.loads(hist_json.read_text())
    assert payload[0]["counts"]
    assert (tmp_path / "tiles.csv").exists()


def test_quantize_raw_input(tmp_path):
    raw = tmp_path / "t.bin"
    np.random.default_rng(0).normal(size=(32, 64)).astype(np.float32).tofile(raw)
    out = tmp_path / "t.vq"
    assert main(["quantize", "--preset", "cq2", "--in", str(raw),
                 "--out", str(out), "--shape", "32x64"]) == 0
    assert main(["quantize", "--preset", "cq2", "--in", str(raw),
                 "--out", str(out), "--shape", "32x100"]) == 2


def test_plan_cache(capsys):
    assert main(["plan-cache", "--model", "rtx4090", "--vq", "cq2",
                 "--kernel", "attn-decode"]) == 0
    out = capsys.readouterr().out
    assert "n_reg=" in out and "n_shared=" in out


def test_plan_dataflow(tmp_path, capsys):
    plan_file = tmp_path / "plan.json"
    assert main(["plan-dataflow", "--vq", "cq2", "--op", "attn-decode",
                 "--seq", "1024", "--batch", "8", "--json", str(plan_file)]) == 0
    plan = json.loads(plan_file.read_text())
    assert plan["switch_axes"] == ["H", "C"]
    assert plan["region_tasks"]["C"] == 32


def test_plan_fusion(capsys):
    assert main(["plan-fusion", "--vq", "aqlm3", "--op", "gemm"]) == 0
    out = capsys.readouterr().out
    assert "n_shuffle=3" in out and "register" in out
    assert '"offsets": [1, 2, 3]' in out


def test_run_selected_variants(tmp_path):
    report = tmp_path / "report.json"
    assert main(["run", "--vq", "cq2", "--op", "attn-decode", "--variant", "o4",
                 "--variant", "gc", "--seq", "256", "--batch", "1",
                 "--heads", "1", "--report", str(report)]) == 0
    payload = json.loads(report.read_text())
    assert [r["variant"] for r in payload["runs"]] == ["o4", "gc"]


def test_bench_ladder(tmp_path, capsys):
    report = tmp_path / "bench.json"
    csv_path = tmp_path / "bench.csv"
    assert main(["bench", "--vq", "cq2", "--op", "attn-decode", "--seq", "256",
                 "--batch", "1", "--heads", "1", "--report", str(report),
                 "--csv", str(csv_path)]) == 0
    payload = json.loads(report.read_text())
    assert [r["variant"] for r in payload["runs"]] == \
        ["gc", "sc", "o1", "o2", "o3", "o4"]
    header = csv_path.read_text().splitlines()[0]
    assert header.startswith("variant,bank_conflicts,global_to_shared_bytes")


def test_unknown_preset_exits_2():
    assert main(["run", "--vq", "int4", "--op", "gemv"]) == 2


def test_indivisible_shape_exits_2():
    assert main(["run", "--vq", "cq2", "--op", "attn-decode",
                 "--channels", "130"]) == 2


def test_verify_single_preset():
    assert main(["verify", "--preset", "cq2", "--seed", "0"]) == 0


def test_gemv_run(tmp_path):
    report = tmp_path / "r.json"
    assert main(["run", "--vq", "aqlm3", "--op", "gemv", "--m", "512",
                 "--n", "512", "--variant", "o3", "--report", str(report)]) == 0
    payload = json.loads(report.read_text())
    assert payload["runs"][0]["reduce_bytes"] > 0


def test_cli_matches_library(tmp_path):
    # the CLI is a thin shell: identical counters to direct library calls
    from vqforge.cli import RunSpec, _run_ladder

    report = tmp_path / "r.json"
    assert main(["run", "--vq", "cq2", "--op", "attn-decode", "--seq", "256",
                 "--batch", "1", "--heads", "1", "--variant", "o4",
                 "--seed", "3", "--report", str(report)]) == 0
    via_cli = json.loads(report.read_text())["runs"][0]

    spec = RunSpec(preset_name="cq2", op_kind="attention_decode",
                   variants=("o4",), seed=3, batch=1, heads=1, seq=256)
    (name, rep), = _run_ladder(spec)[0]
    via_lib = rep.to_dict()
    for key in ("bank_conflicts", "global_to_shared_bytes",
                "shared_to_reg_bytes", "staged_dequant_bytes", "global_bytes",
                "reduce_bytes", "occupancy"):
        assert via_cli[key] == via_lib[key]
